"""Siamese pyramid encoder, cross-time fusion, cross-scale recovery, change head.

The forward pipeline: a weight-shared residual encoder produces feature maps
at strides 4/8/16/32 for both times; each scale passes through a DCT channel
gate; the deepest pair is fused into the base change representation; three
recovery stages then walk back up the pyramid, gating the (upsampled,
projected) deep representation with a pooled spatial weight map and adding
the carried representation from the previous stage. A light decoder
concatenates all four representations at stride 4 and classifies per pixel.
"""

import copy
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .spectral import DEFAULT_BASE_GRID, MultiSpectralAttention, select_frequencies


@dataclass(frozen=True)
class ModelConfig:
    stage_widths: tuple = (64, 128, 256, 512)
    freq_components: int = 16
    base_grid_height: int = DEFAULT_BASE_GRID
    base_grid_width: int = DEFAULT_BASE_GRID
    decoder_width: int = 128
    share_encoder_weights: bool = True
    freq_file: str = ""  # optional index-file override for the default ordering

    def __post_init__(self):
        if len(self.stage_widths) != 4 or any(w <= 0 for w in self.stage_widths):
            raise ValueError(f"stage_widths must be four positive integers, got {self.stage_widths}")
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        for w in self.stage_widths:
            if w % self.freq_components != 0:
                raise ValueError(
                    f"stage width {w} is not divisible by the component count {self.freq_components}")
        if self.decoder_width <= 0:
            raise ValueError(f"decoder_width must be positive, got {self.decoder_width}")


def conv3x3(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DepthwiseSeparableConv(nn.Module):
    """Per-channel 3x3 convolution followed by a pointwise channel mix."""

    def __init__(self, cin, cout):
        super().__init__()
        self.depthwise = nn.Conv2d(cin, cin, kernel_size=3, padding=1, groups=cin, bias=False)
        self.pointwise = nn.Conv2d(cin, cout, kernel_size=1, bias=False)
        self.bn = nn.BatchNorm2d(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.bn(self.pointwise(self.depthwise(x))))


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, kernel_size=3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.act = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.act(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.act(out + self.shortcut(x))


class PyramidEncoder(nn.Module):
    """Four-stage residual encoder; outputs at strides 4, 8, 16, 32."""

    def __init__(self, widths):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w1, kernel_size=7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(w1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )
        self.stage1 = nn.Sequential(BasicBlock(w1, w1), BasicBlock(w1, w1))
        self.stage2 = nn.Sequential(BasicBlock(w1, w2, stride=2), BasicBlock(w2, w2))
        self.stage3 = nn.Sequential(BasicBlock(w2, w3, stride=2), BasicBlock(w3, w3))
        self.stage4 = nn.Sequential(BasicBlock(w3, w4, stride=2), BasicBlock(w4, w4))

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input extent {h}x{w} must be divisible by 32")
        x = self.stem(x)
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        return [f1, f2, f3, f4]


class TemporalFusion(nn.Module):
    """Coarse change representation from one scale's feature pair.

    The signed difference is concatenated with the first-time features and
    projected 2C -> C by a depthwise separable block.
    """

    def __init__(self, channels):
        super().__init__()
        self.block = DepthwiseSeparableConv(2 * channels, channels)

    @staticmethod
    def pair_features(z1, z2):
        if z1.shape != z2.shape:
            raise ValueError(f"feature shapes differ: {tuple(z1.shape)} vs {tuple(z2.shape)}")
        return torch.cat([z1 - z2, z1], dim=-3)

    def forward(self, z1, z2):
        return self.block(self.pair_features(z1, z2))


GATE_EPS = 1e-7


class SpatialGate(nn.Module):
    """Pooled spatial weight map in the open interval (0, 1).

    Channel-wise mean and max maps are concatenated and mixed by a 1x1
    convolution, then squashed by a sigmoid; a tiny clamp keeps saturated
    values off the interval ends in low precision.
    """

    def __init__(self):
        super().__init__()
        self.mix = nn.Conv2d(2, 1, kernel_size=1)

    def forward(self, x):
        if not torch.isfinite(x).all():
            raise ValueError("spatial gate input contains non-finite values")
        mean_map = x.mean(dim=-3, keepdim=True)
        max_map = x.amax(dim=-3, keepdim=True)
        gate = torch.sigmoid(self.mix(torch.cat([mean_map, max_map], dim=-3)))
        return gate.clamp(GATE_EPS, 1.0 - GATE_EPS)


class RecoveryStage(nn.Module):
    """One step of the cross-scale recovery cascade.

    The stage's own feature pair yields a spatial weight map; that map gates
    the deep change representation (bilinearly upsampled and projected to
    this width, bias-free) and the result is added to the likewise projected
    representation carried from the previous stage.
    """

    def __init__(self, width, deep_width, carry_width):
        super().__init__()
        self.fuse = TemporalFusion(width)
        self.gate = SpatialGate()
        self.proj_deep = nn.Conv2d(deep_width, width, kernel_size=1, bias=False)
        self.proj_carry = nn.Conv2d(carry_width, width, kernel_size=1, bias=False)

    @staticmethod
    def _upsample(x, size):
        if x.shape[-2:] == size:
            return x
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def refine(self, weight, deep, carry, size):
        gated = weight * self.proj_deep(self._upsample(deep, size))
        return gated + self.proj_carry(self._upsample(carry, size))

    def forward(self, z1, z2, deep, carry):
        coarse = self.fuse(z1, z2)
        weight = self.gate(coarse)
        return self.refine(weight, deep, carry, coarse.shape[-2:])


class ChangeHead(nn.Module):
    """Light decoder: concat all scales at stride 4, mix, classify, upsample."""

    def __init__(self, widths, decoder_width, num_classes=2):
        super().__init__()
        self.mix = conv3x3(sum(widths), decoder_width)
        self.classify = nn.Conv2d(decoder_width, num_classes, kernel_size=1)

    def forward(self, reps, out_size):
        if len(reps) != 4:
            raise ValueError(f"expected 4 change representations, got {len(reps)}")
        size = reps[0].shape[-2:]
        up = [reps[0]] + [F.interpolate(r, size=size, mode="bilinear", align_corners=False) for r in reps[1:]]
        logits = self.classify(self.mix(torch.cat(up, dim=-3)))
        return F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)


class ChangeNet(nn.Module):
    """Full bi-temporal change detection network producing 2 x H x W logits."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        widths = cfg.stage_widths
        if cfg.freq_file:
            index_set = select_frequencies(cfg.freq_components, "file", cfg.freq_file,
                                           cfg.base_grid_height, cfg.base_grid_width)
        else:
            index_set = select_frequencies(cfg.freq_components, "default_order",
                                           base_height=cfg.base_grid_height,
                                           base_width=cfg.base_grid_width)
        self.index_set = index_set
        self.encoder = PyramidEncoder(widths)
        self.encoder_t2 = None if cfg.share_encoder_weights else copy.deepcopy(self.encoder)
        self.freq_gates = nn.ModuleList(MultiSpectralAttention(w, index_set) for w in widths)
        self.deep_fuse = TemporalFusion(widths[3])
        self.stage3 = RecoveryStage(widths[2], deep_width=widths[3], carry_width=widths[3])
        self.stage2 = RecoveryStage(widths[1], deep_width=widths[3], carry_width=widths[2])
        self.stage1 = RecoveryStage(widths[0], deep_width=widths[3], carry_width=widths[1])
        self.head = ChangeHead(widths, cfg.decoder_width)

    def stream_encoder(self, stream):
        """Encoder module serving the given temporal stream (0 or 1)."""
        if stream == 0 or self.encoder_t2 is None:
            return self.encoder
        return self.encoder_t2

    def encode(self, img, stream=0):
        return self.stream_encoder(stream)(img)

    def forward(self, t1, t2):
        if t1.shape != t2.shape:
            raise ValueError(f"input shapes differ: {tuple(t1.shape)} vs {tuple(t2.shape)}")
        squeeze = t1.dim() == 3
        if squeeze:
            t1, t2 = t1.unsqueeze(0), t2.unsqueeze(0)
        if t1.size(-3) != 3:
            raise ValueError(f"expected 3-channel images, got {t1.size(-3)} channels")
        h, w = t1.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input extent {h}x{w} must be divisible by 32")
        if not (torch.isfinite(t1).all() and torch.isfinite(t2).all()):
            raise ValueError("input contains non-finite values")

        if self.encoder_t2 is None:
            # One pass over the stacked temporal batch keeps the shared
            # encoder's batch-norm statistics identical for both streams.
            batch = t1.size(0)
            feats = self.encoder(torch.cat([t1, t2], dim=0))
            f1 = [f[:batch] for f in feats]
            f2 = [f[batch:] for f in feats]
        else:
            f1 = self.encode(t1, stream=0)
            f2 = self.encode(t2, stream=1)
        z1 = [gate(f) for gate, f in zip(self.freq_gates, f1)]
        z2 = [gate(f) for gate, f in zip(self.freq_gates, f2)]

        c4 = self.deep_fuse(z1[3], z2[3])
        c3 = self.stage3(z1[2], z2[2], deep=c4, carry=c4)
        c2 = self.stage2(z1[1], z2[1], deep=c4, carry=c3)
        c1 = self.stage1(z1[0], z2[0], deep=c4, carry=c2)

        logits = self.head([c1, c2, c3, c4], (h, w))
        return logits.squeeze(0) if squeeze else logits

    def param_count(self):
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def load_weights(self, path, strict=True):
        state = torch.load(path, map_location="cpu", weights_only=True)
        self.load_state_dict(state, strict=strict)
        return self


def build_model(config=None, seed=None):
    """Construct a ChangeNet, optionally with a fixed initialization seed."""
    if seed is not None:
        torch.manual_seed(seed)
    return ChangeNet(config)


def param_count(config=None):
    """Exact number of learnable scalars for a configuration."""
    return build_model(config, seed=0).param_count()
