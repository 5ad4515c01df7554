import pytest
import torch

from changedet.model import (ChangeHead, ModelConfig, PyramidEncoder,
                             RecoveryStage, SpatialGate, TemporalFusion,
                             build_model, param_count)
from gradcheck import check_gradients

DESK = ModelConfig(stage_widths=(16, 32, 64, 128), freq_components=4, decoder_width=64)


def rand_t(rng, *shape, dtype=torch.float32):
    return torch.from_numpy(rng.normal(size=shape)).to(dtype)


class TestModelConfig:
    def test_width_divisibility_enforced(self):
        with pytest.raises(ValueError, match="not divisible"):
            ModelConfig(stage_widths=(16, 32, 64, 128), freq_components=32)

    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.stage_widths == (64, 128, 256, 512)
        assert cfg.freq_components == 16
        assert cfg.share_encoder_weights


class TestEncoder:
    @pytest.mark.parametrize("widths,size,expected", [
        ((64, 128, 256, 512), 256, [(64, 64, 64), (128, 32, 32), (256, 16, 16), (512, 8, 8)]),
        ((16, 32, 64, 128), 64, [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]),
    ])
    def test_stride_arithmetic(self, rng, widths, size, expected):
        enc = PyramidEncoder(widths)
        feats = enc(rand_t(rng, 1, 3, size, size))
        assert [tuple(f.shape[1:]) for f in feats] == expected

    def test_indivisible_extent_rejected_before_compute(self, rng):
        enc = PyramidEncoder((16, 32, 64, 128))
        with pytest.raises(ValueError, match="divisible by 32"):
            enc(rand_t(rng, 1, 3, 100, 96))

    def test_successive_halving(self, rng):
        feats = PyramidEncoder((8, 16, 32, 64))(rand_t(rng, 1, 3, 64, 64))
        for a, b in zip(feats, feats[1:]):
            assert a.shape[-1] == 2 * b.shape[-1] and a.shape[-2] == 2 * b.shape[-2]


class TestTemporalFusion:
    def test_identical_inputs_zero_difference_half(self, rng):
        z = rand_t(rng, 1, 8, 4, 4)
        paired = TemporalFusion.pair_features(z, z)
        torch.testing.assert_close(paired[:, :8], torch.zeros_like(z))
        torch.testing.assert_close(paired[:, 8:], z)

    def test_swap_negates_difference_channels(self, rng):
        z1, z2 = rand_t(rng, 1, 8, 4, 4), rand_t(rng, 1, 8, 4, 4)
        a = TemporalFusion.pair_features(z1, z2)
        b = TemporalFusion.pair_features(z2, z1)
        torch.testing.assert_close(a[:, :8], -b[:, :8])

    def test_projection_width(self, rng):
        fuse = TemporalFusion(128)
        out = fuse(rand_t(rng, 1, 128, 2, 2), rand_t(rng, 1, 128, 2, 2))
        assert tuple(out.shape) == (1, 128, 2, 2)

    def test_zero_weights_zero_output(self, rng):
        fuse = TemporalFusion(8)
        for p in fuse.parameters():
            torch.nn.init.zeros_(p)
        fuse.eval()
        out = fuse(rand_t(rng, 1, 8, 4, 4), rand_t(rng, 1, 8, 4, 4))
        torch.testing.assert_close(out, torch.zeros_like(out))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="differ"):
            TemporalFusion.pair_features(rand_t(rng, 1, 8, 4, 4), rand_t(rng, 1, 8, 2, 2))


class TestSpatialGate:
    def test_zeroed_conv_gives_half(self, rng):
        gate = SpatialGate()
        torch.nn.init.zeros_(gate.mix.weight)
        torch.nn.init.zeros_(gate.mix.bias)
        out = gate(rand_t(rng, 1, 16, 5, 5))
        torch.testing.assert_close(out, torch.full((1, 1, 5, 5), 0.5))

    def test_spatially_constant_input(self, rng):
        gate = SpatialGate()
        x = torch.ones(1, 16, 4, 4) * rand_t(rng, 1, 16, 1, 1)
        out = gate(x)
        assert out.std().item() == pytest.approx(0.0, abs=1e-7)

    def test_open_unit_interval(self, rng):
        gate = SpatialGate()
        for scale in (1.0, 100.0):
            out = gate(rand_t(rng, 2, 16, 6, 6) * scale)
            assert (out > 0).all() and (out < 1).all()
        assert out.shape[1] == 1

    def test_rejects_non_finite(self):
        gate = SpatialGate()
        x = torch.ones(1, 4, 4, 4)
        x[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            gate(x)


class TestRecoveryStage:
    def test_zero_weight_leaves_carry_path(self, rng):
        stage = RecoveryStage(width=8, deep_width=16, carry_width=16)
        deep = rand_t(rng, 1, 16, 2, 2)
        carry = rand_t(rng, 1, 16, 2, 2)
        out = stage.refine(torch.zeros(1, 1, 4, 4), deep, carry, (4, 4))
        expected = stage.proj_carry(stage._upsample(carry, (4, 4)))
        torch.testing.assert_close(out, expected)

    def test_gated_term_linear_in_deep(self, rng):
        stage = RecoveryStage(width=8, deep_width=16, carry_width=16)
        weight = torch.sigmoid(rand_t(rng, 1, 1, 4, 4))
        deep = rand_t(rng, 1, 16, 2, 2)
        zero_carry = torch.zeros(1, 16, 2, 2)
        base = stage.refine(weight, deep, zero_carry, (4, 4))
        scaled = stage.refine(weight, 3.0 * deep, zero_carry, (4, 4))
        torch.testing.assert_close(scaled, 3.0 * base)

    def test_shape_arithmetic(self, rng):
        # deepest representation 128 x 2 x 2 lifted onto a 64-wide 4 x 4 stage
        stage = RecoveryStage(width=64, deep_width=128, carry_width=128)
        z1, z2 = rand_t(rng, 1, 64, 4, 4), rand_t(rng, 1, 64, 4, 4)
        deep = rand_t(rng, 1, 128, 2, 2)
        out = stage(z1, z2, deep, deep)
        assert tuple(out.shape) == (1, 64, 4, 4)


class TestChangeHead:
    def test_concat_width_and_output_extent(self, rng):
        head = ChangeHead((16, 32, 64, 128), decoder_width=64)
        assert head.mix[0].in_channels == 240
        reps = [rand_t(rng, 1, c, s, s) for c, s in zip((16, 32, 64, 128), (16, 8, 4, 2))]
        out = head(reps, (64, 64))
        assert tuple(out.shape) == (1, 2, 64, 64)

    def test_zero_reps_zero_bias_gives_uniform_softmax(self, rng):
        head = ChangeHead((16, 32, 64, 128), decoder_width=64)
        torch.nn.init.zeros_(head.classify.bias)
        head.eval()
        reps = [torch.zeros(1, c, s, s) for c, s in zip((16, 32, 64, 128), (16, 8, 4, 2))]
        logits = head(reps, (64, 64))
        torch.testing.assert_close(logits, torch.zeros_like(logits))
        probs = torch.softmax(logits, dim=1)
        torch.testing.assert_close(probs, torch.full_like(probs, 0.5))

    def test_missing_scale_rejected(self, rng):
        head = ChangeHead((16, 32, 64, 128), decoder_width=64)
        with pytest.raises(ValueError, match="expected 4"):
            head([rand_t(rng, 1, 16, 8, 8)] * 3, (32, 32))


class TestChangeNet:
    def test_end_to_end_shape(self, rng):
        net = build_model(DESK, seed=0)
        t1, t2 = rand_t(rng, 1, 3, 64, 64), rand_t(rng, 1, 3, 64, 64)
        assert tuple(net(t1, t2).shape) == (1, 2, 64, 64)

    def test_unbatched_inputs(self, rng):
        net = build_model(DESK, seed=0)
        out = net(rand_t(rng, 3, 64, 64), rand_t(rng, 3, 64, 64))
        assert tuple(out.shape) == (2, 64, 64)

    def test_deterministic_forward(self, rng):
        net = build_model(DESK, seed=0).eval()
        t1, t2 = rand_t(rng, 1, 3, 64, 64), rand_t(rng, 1, 3, 64, 64)
        with torch.no_grad():
            a, b = net(t1, t2), net(t1, t2)
        assert torch.equal(a, b)

    def test_shared_encoder_parameter_identity(self):
        shared = build_model(DESK, seed=0)
        # both temporal streams resolve to the identical parameter objects
        assert shared.stream_encoder(0) is shared.stream_encoder(1)
        p0 = {id(p) for p in shared.stream_encoder(0).parameters()}
        p1 = {id(p) for p in shared.stream_encoder(1).parameters()}
        assert p0 == p1
        cfg = ModelConfig(stage_widths=(16, 32, 64, 128), freq_components=4,
                          decoder_width=64, share_encoder_weights=False)
        unshared = build_model(cfg, seed=0)
        q0 = {id(p) for p in unshared.stream_encoder(0).parameters()}
        q1 = {id(p) for p in unshared.stream_encoder(1).parameters()}
        assert not q0 & q1

    def test_extent_validation(self, rng):
        net = build_model(DESK, seed=0)
        with pytest.raises(ValueError, match="divisible by 32"):
            net(rand_t(rng, 1, 3, 100, 100), rand_t(rng, 1, 3, 100, 100))
        with pytest.raises(ValueError, match="differ"):
            net(rand_t(rng, 1, 3, 64, 64), rand_t(rng, 1, 3, 32, 32))

    def test_load_weights_file(self, rng, tmp_path):
        src = build_model(DESK, seed=4)
        path = tmp_path / "weights.pt"
        torch.save(src.state_dict(), path)
        dst = build_model(DESK, seed=5).load_weights(path)
        for a, b in zip(src.state_dict().values(), dst.state_dict().values()):
            assert torch.equal(a, b)

    def test_frequency_file_override(self, rng, tmp_path):
        path = tmp_path / "freq.txt"
        path.write_text("0 0\n3 3\n1 2\n2 1\n")
        cfg = ModelConfig(stage_widths=(16, 32, 64, 128), freq_components=4,
                          decoder_width=64, freq_file=str(path))
        net = build_model(cfg, seed=0)
        assert net.index_set.indices == ((0, 0), (3, 3), (1, 2), (2, 1))
        out = net(rand_t(rng, 1, 3, 64, 64), rand_t(rng, 1, 3, 64, 64))
        assert tuple(out.shape) == (1, 2, 64, 64)

    def test_gradient_flow_to_every_parameter(self, rng):
        net = build_model(DESK, seed=1)
        net.train()
        t1, t2 = rand_t(rng, 2, 3, 64, 64), rand_t(rng, 2, 3, 64, 64)
        target = torch.from_numpy(rng.normal(size=(2, 2, 64, 64))).float()
        loss = ((net(t1, t2) - target) ** 2).mean()
        loss.backward()
        missing = [name for name, p in net.named_parameters()
                   if p.grad is None or not p.grad.abs().max() > 0]
        assert missing == []


class TestParamCount:
    def test_affine_map_closed_form(self):
        layer = torch.nn.Linear(64, 64)
        assert sum(p.numel() for p in layer.parameters()) == 64 * 64 + 64

    def test_doubling_widths_more_than_doubles(self):
        small = param_count(DESK)
        big = param_count(ModelConfig(stage_widths=(32, 64, 128, 256),
                                      freq_components=4, decoder_width=128))
        assert big > 2 * small

    def test_default_config_near_published_budget(self):
        n = param_count(ModelConfig())
        assert 12.67e6 * 0.8 <= n <= 12.67e6 * 1.2


class TestComponentGradients:
    def probe_sum(self, rng, out):
        w = torch.from_numpy(rng.normal(size=tuple(out.shape)))
        return (out * w).sum()

    def test_temporal_fusion(self, rng):
        fuse = TemporalFusion(4).double().eval()
        z1 = torch.from_numpy(rng.normal(size=(1, 4, 6, 6))).requires_grad_(True)
        z2 = torch.from_numpy(rng.normal(size=(1, 4, 6, 6))).requires_grad_(True)
        probe = torch.from_numpy(rng.normal(size=(1, 4, 6, 6)))
        params = [fuse.block.depthwise.weight, fuse.block.pointwise.weight]
        check_gradients(lambda: (fuse(z1, z2) * probe).sum(), [z1, z2] + params, n_probes=25, seed=11)

    def test_spatial_gate(self, rng):
        gate = SpatialGate().double()
        x = torch.from_numpy(rng.normal(size=(1, 6, 5, 5))).requires_grad_(True)
        probe = torch.from_numpy(rng.normal(size=(1, 1, 5, 5)))
        check_gradients(lambda: (gate(x) * probe).sum(),
                        [x, gate.mix.weight, gate.mix.bias], n_probes=25, seed=12)

    def test_recovery_refine(self, rng):
        stage = RecoveryStage(width=4, deep_width=6, carry_width=6).double()
        weight = torch.from_numpy(rng.uniform(0.1, 0.9, size=(1, 1, 6, 6))).requires_grad_(True)
        deep = torch.from_numpy(rng.normal(size=(1, 6, 3, 3))).requires_grad_(True)
        carry = torch.from_numpy(rng.normal(size=(1, 6, 3, 3))).requires_grad_(True)
        probe = torch.from_numpy(rng.normal(size=(1, 4, 6, 6)))
        tensors = [weight, deep, carry, stage.proj_deep.weight, stage.proj_carry.weight]
        check_gradients(lambda: (stage.refine(weight, deep, carry, (6, 6)) * probe).sum(),
                        tensors, n_probes=25, seed=13)

    def test_decoder_composite(self, rng):
        head = ChangeHead((4, 6, 8, 10), decoder_width=6).double().eval()
        reps = [torch.from_numpy(rng.normal(size=(1, c, s, s))).requires_grad_(True)
                for c, s in zip((4, 6, 8, 10), (8, 4, 2, 2))]
        probe = torch.from_numpy(rng.normal(size=(1, 2, 16, 16)))
        params = [head.mix[0].weight, head.classify.weight, head.classify.bias]
        check_gradients(lambda: (head(reps, (16, 16)) * probe).sum(),
                        reps + params, n_probes=25, seed=14)
