"""DCT bases, frequency index selection, and multi-spectral channel attention.

The channel gate here follows the multi-spectral recipe: the input feature
map is split into channel groups, each group is reduced against a single
2D cosine basis, and the concatenated frequency vector drives a sigmoid
gate over channels. Bases are the unnormalized type-II cosine products;
the normalization factor is intentionally dropped so the (0,0) component
is a plain spatial sum.
"""

import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

DEFAULT_BASE_GRID = 7
PREFERRED_COMPONENT_COUNTS = (4, 8, 16, 32)

_basis_cache = {}
_basis_lock = threading.Lock()


def dct_basis(height, width, u, v):
    """Unnormalized cosine basis matrix for frequency (u, v) on a height x width grid.

    Entry (i, j) is cos(pi*u*(i+1/2)/height) * cos(pi*v*(j+1/2)/width).
    Results are cached per (height, width, u, v) and returned read-only.
    """
    if height < 1 or width < 1:
        raise ValueError(f"grid extent must be positive, got {height}x{width}")
    if not 0 <= u < height:
        raise IndexError(f"frequency index u={u} out of range [0, {height}) for axis of extent {height}")
    if not 0 <= v < width:
        raise IndexError(f"frequency index v={v} out of range [0, {width}) for axis of extent {width}")
    key = (height, width, u, v)
    with _basis_lock:
        hit = _basis_cache.get(key)
    if hit is not None:
        return hit
    rows = np.cos(np.pi * u * (np.arange(height) + 0.5) / height)
    cols = np.cos(np.pi * v * (np.arange(width) + 0.5) / width)
    basis = np.outer(rows, cols)
    basis.flags.writeable = False
    with _basis_lock:
        return _basis_cache.setdefault(key, basis)


def dct2_reference(x):
    """Full 2D spectrum by direct double summation.

    Deliberately the slow, literal path: spectrum[h, w] = sum_ij x[i, j] * B(h, w)[i, j].
    Kept as the reference against which the fast channel reductions are checked.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    height, width = x.shape
    spectrum = np.empty((height, width))
    for h in range(height):
        for w in range(width):
            spectrum[h, w] = float(np.sum(x * dct_basis(height, width, h, w)))
    return spectrum


@dataclass(frozen=True)
class FrequencyIndexSet:
    """Ordered 2D frequency indices on a base grid, one per channel group.

    Indices live on the base grid and are rescaled to each feature map's
    extent before use (see ``scaled_to``). Duplicate pairs are tolerated in
    directly built sets (useful for degenerate diagnostics such as the
    all-(0,0) pooling case); the selection helpers reject them.
    """

    indices: tuple
    base_height: int = DEFAULT_BASE_GRID
    base_width: int = DEFAULT_BASE_GRID

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("index set must not be empty")
        object.__setattr__(self, "indices", tuple((int(u), int(v)) for u, v in self.indices))
        for u, v in self.indices:
            if not 0 <= u < self.base_height:
                raise IndexError(f"frequency index u={u} out of range [0, {self.base_height}) for axis of extent {self.base_height}")
            if not 0 <= v < self.base_width:
                raise IndexError(f"frequency index v={v} out of range [0, {self.base_width}) for axis of extent {self.base_width}")

    def __len__(self):
        return len(self.indices)

    def require_unique(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicate frequency index pairs in index set")
        return self

    def scaled_to(self, height, width):
        """Effective index pairs at a concrete feature extent.

        Base-grid indices are stretched by the integer scale floor(extent / base)
        and clamped to stay in range; extents smaller than the base grid collapse
        onto the lowest frequency.
        """
        scale_h = height // self.base_height
        scale_w = width // self.base_width
        return tuple(
            (min(u * scale_h, height - 1), min(v * scale_w, width - 1))
            for u, v in self.indices
        )


def default_frequency_indices(n, base_height=DEFAULT_BASE_GRID, base_width=DEFAULT_BASE_GRID):
    """Deterministic low-frequency-first ordering on the base grid.

    Pairs are sorted by ascending u+v, ties by ascending u, then ascending v,
    so the constant component comes first and energy-rich low frequencies
    lead. Stands in for any externally learned importance ranking.
    """
    if n < 1:
        raise ValueError(f"component count must be >= 1, got {n}")
    if n > base_height * base_width:
        raise ValueError(f"cannot select {n} distinct indices from a {base_height}x{base_width} grid")
    if n not in PREFERRED_COMPONENT_COUNTS:
        warnings.warn(f"component count {n} is outside the usual set {PREFERRED_COMPONENT_COUNTS}", stacklevel=2)
    ordered = sorted(
        ((u, v) for u in range(base_height) for v in range(base_width)),
        key=lambda p: (p[0] + p[1], p[0], p[1]),
    )
    return FrequencyIndexSet(tuple(ordered[:n]), base_height, base_width)


def load_frequency_file(path, n, base_height=DEFAULT_BASE_GRID, base_width=DEFAULT_BASE_GRID):
    """Read an index set from a plain-text file, one "u v" pair per line.

    Lines starting with '#' (and inline '#' comments) are ignored. The file
    must contain exactly n pairs and no duplicates.
    """
    pairs = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'u v', got {raw!r}")
        try:
            pairs.append((int(fields[0]), int(fields[1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer index in {raw!r}") from exc
    if len(pairs) != n:
        raise ValueError(f"{path}: expected {n} index pairs, found {len(pairs)}")
    return FrequencyIndexSet(tuple(pairs), base_height, base_width).require_unique()


def select_frequencies(n, strategy="default_order", source=None,
                       base_height=DEFAULT_BASE_GRID, base_width=DEFAULT_BASE_GRID):
    """Build the index set for n channel groups.

    strategy "default_order" uses the deterministic low-frequency ordering;
    "file" reads ``source`` verbatim (count must match n).
    """
    if strategy == "default_order":
        return default_frequency_indices(n, base_height, base_width)
    if strategy == "file":
        if source is None:
            raise ValueError("strategy 'file' requires a source path")
        return load_frequency_file(source, n, base_height, base_width)
    raise ValueError(f"unknown frequency selection strategy {strategy!r}")


def frequency_vector(x, index_set):
    """Length-C frequency vector of a C x H x W feature map.

    The channels are split into len(index_set) equal groups; group i is
    reduced against the basis for the i-th (rescaled) index pair, and the
    per-group results are concatenated in group order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a C x H x W array, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    channels, height, width = x.shape
    n = len(index_set)
    if channels % n != 0:
        raise ValueError(f"channel count {channels} is not divisible by component count {n}")
    group = channels // n
    out = np.empty(channels)
    for i, (u, v) in enumerate(index_set.scaled_to(height, width)):
        basis = dct_basis(height, width, u, v)
        out[i * group:(i + 1) * group] = np.tensordot(x[i * group:(i + 1) * group], basis, axes=([1, 2], [0, 1]))
    return out


def _stacked_basis(channels, height, width, index_set):
    """C x H x W weight tensor: each channel group carries its own basis."""
    n = len(index_set)
    group = channels // n
    weight = np.empty((channels, height, width))
    for i, (u, v) in enumerate(index_set.scaled_to(height, width)):
        weight[i * group:(i + 1) * group] = dct_basis(height, width, u, v)
    return weight


class MultiSpectralAttention(nn.Module):
    """Channel gate driven by selected DCT components.

    Computes the per-group frequency vector of the input, maps it through a
    learnable channel-to-channel affine layer, and gates the input channels
    with the sigmoid of the result. Output shape equals input shape.
    """

    def __init__(self, channels, index_set):
        super().__init__()
        if channels % len(index_set) != 0:
            raise ValueError(f"channel count {channels} is not divisible by component count {len(index_set)}")
        self.channels = channels
        self.index_set = index_set
        self.fc = nn.Linear(channels, channels)
        self._weights = {}

    def _weight(self, height, width, dtype, device):
        key = (height, width, dtype, device)
        cached = self._weights.get(key)
        if cached is None:
            base = _stacked_basis(self.channels, height, width, self.index_set)
            cached = torch.from_numpy(base).to(dtype=dtype, device=device)
            self._weights[key] = cached
        return cached

    def frequency_vector(self, x):
        """(B, C, H, W) or (C, H, W) -> (B, C) or (C,) frequency vector."""
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.size(1) != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.size(1)}")
        if not torch.isfinite(x).all():
            raise ValueError("input contains non-finite values")
        weight = self._weight(x.size(2), x.size(3), x.dtype, x.device)
        freq = (x * weight).sum(dim=(2, 3))
        return freq.squeeze(0) if squeeze else freq

    def forward(self, x):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        freq = self.frequency_vector(x)
        gate = torch.sigmoid(self.fc(freq))
        out = x * gate.unsqueeze(-1).unsqueeze(-1)
        return out.squeeze(0) if squeeze else out
