"""Bi-temporal sample ingestion, tiling, deterministic splits, and augmentation.

Datasets follow the common on-disk convention of three sibling directories
``A/``, ``B/``, ``label/`` with matching filenames. Tiles are cut on a fixed
grid in row-major order; pad mode extends the raster to the next multiple of
the tile size (edge replication for images, constant fill for masks) so no
pixel is dropped.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")

# The eight geometric augmentations: quarter-turns crossed with an optional
# horizontal flip (flip applied after the rotation).
DIHEDRAL_ELEMENTS = tuple((rot, flip) for flip in (False, True) for rot in (0, 1, 2, 3))


@dataclass
class BiTemporalSample:
    """One co-registered image pair plus its binary change mask.

    t1 and t2 are 3 x H x W float32 arrays in [0, 1] (unless explicitly
    normalized); mask is H x W uint8 with 1 marking changed pixels.
    """

    t1: np.ndarray
    t2: np.ndarray
    mask: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.t1.shape != self.t2.shape:
            raise ValueError(f"t1 shape {self.t1.shape} does not match t2 shape {self.t2.shape}")
        if self.t1.shape[-2:] != self.mask.shape:
            raise ValueError(f"image extent {self.t1.shape[-2:]} does not match mask extent {self.mask.shape}")

    @property
    def height(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]


@dataclass(frozen=True)
class TileSpec:
    tile_size: int = 256
    mode: str = "pad"  # "pad" extends to the grid, "strict" drops remainders
    pad_value: float = 0.0  # fill for mask padding; images replicate edges

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError(f"tile_size must be positive, got {self.tile_size}")
        if self.mode not in ("pad", "strict"):
            raise ValueError(f"mode must be 'pad' or 'strict', got {self.mode!r}")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError(f"ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios}")


def normalize_image(x):
    """Map [0, 1] pixel values to [-1, 1]."""
    return (np.asarray(x, dtype=np.float32) - 0.5) / 0.5


def _decode(path, mode):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except UnidentifiedImageError as exc:
        raise ValueError(f"{path}: not a decodable raster image") from exc


def load_sample(t1_path, t2_path, mask_path, normalize=False):
    """Load an image pair and mask from disk.

    Images are scaled to [0, 1] float32 (channel-first); the mask is
    binarized at 0.5 of full scale. All three extents must agree.
    """
    t1 = _decode(t1_path, "RGB")
    t2 = _decode(t2_path, "RGB")
    mask = _decode(mask_path, "L")
    extents = {"t1": t1.shape[:2], "t2": t2.shape[:2], "mask": mask.shape[:2]}
    if len(set(extents.values())) != 1:
        detail = ", ".join(f"{k}={v[0]}x{v[1]}" for k, v in extents.items())
        raise ValueError(f"raster extents do not match: {detail}")
    t1 = (t1.astype(np.float32) / 255.0).transpose(2, 0, 1)
    t2 = (t2.astype(np.float32) / 255.0).transpose(2, 0, 1)
    mask = (mask.astype(np.float32) / 255.0 >= 0.5).astype(np.uint8)
    if normalize:
        t1 = normalize_image(t1)
        t2 = normalize_image(t2)
    return BiTemporalSample(t1=t1, t2=t2, mask=mask, name=Path(t1_path).stem)


def load_image_pair(t1_path, t2_path):
    """Load just the two images of a pair, scaled to [0, 1] channel-first."""
    t1 = _decode(t1_path, "RGB")
    t2 = _decode(t2_path, "RGB")
    if t1.shape != t2.shape:
        raise ValueError(f"raster extents do not match: t1={t1.shape[0]}x{t1.shape[1]}, t2={t2.shape[0]}x{t2.shape[1]}")
    t1 = (t1.astype(np.float32) / 255.0).transpose(2, 0, 1)
    t2 = (t2.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return t1, t2


def tile_grid(height, width, spec):
    """(rows, cols) of the tile grid over a height x width raster."""
    s = spec.tile_size
    if spec.mode == "pad":
        return math.ceil(height / s), math.ceil(width / s)
    return height // s, width // s


def tile_coords(height, width, spec):
    """Row-major (row, col, y0, x0) for every tile; cheap, no pixels touched."""
    rows, cols = tile_grid(height, width, spec)
    if rows == 0 or cols == 0:
        log.warning("tile size %d exceeds raster extent %dx%d in strict mode; no tiles emitted",
                    spec.tile_size, height, width)
    return [(r, c, r * spec.tile_size, c * spec.tile_size)
            for r in range(rows) for c in range(cols)]


def _pad_image(img, pad_h, pad_w):
    return np.pad(img, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")


def _pad_mask(mask, pad_h, pad_w, value):
    return np.pad(mask, ((0, pad_h), (0, pad_w)), mode="constant", constant_values=value)


def tile_pair(sample, spec):
    """Cut a sample into tile-sized samples on the shared grid, row-major."""
    s = spec.tile_size
    h, w = sample.height, sample.width
    coords = tile_coords(h, w, spec)
    t1, t2, mask = sample.t1, sample.t2, sample.mask
    if spec.mode == "pad":
        rows, cols = tile_grid(h, w, spec)
        pad_h, pad_w = rows * s - h, cols * s - w
        if pad_h or pad_w:
            t1 = _pad_image(t1, pad_h, pad_w)
            t2 = _pad_image(t2, pad_h, pad_w)
            mask = _pad_mask(mask, pad_h, pad_w, int(spec.pad_value))
    tiles = []
    for r, c, y0, x0 in coords:
        tiles.append(BiTemporalSample(
            t1=t1[:, y0:y0 + s, x0:x0 + s].copy(),
            t2=t2[:, y0:y0 + s, x0:x0 + s].copy(),
            mask=mask[y0:y0 + s, x0:x0 + s].copy(),
            name=f"{sample.name}_r{r:03d}_c{c:03d}",
        ))
    return tiles


def stitch_tiles(tiles, rows, cols):
    """Inverse of the row-major tiling: reassemble a grid of equal tiles."""
    if len(tiles) != rows * cols:
        raise ValueError(f"expected {rows * cols} tiles, got {len(tiles)}")
    strips = [np.concatenate(tiles[r * cols:(r + 1) * cols], axis=-1) for r in range(rows)]
    return np.concatenate(strips, axis=-2)


def split_dataset(items, spec):
    """Disjoint, exhaustive (train, val, test) index lists.

    Sizes are floor(ratio * N) for val and test with the remainder assigned
    to train; the permutation is fully determined by the seed.
    """
    n = len(items)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_val = int(spec.ratios[1] * n)
    n_test = int(spec.ratios[2] * n)
    n_train = n - n_val - n_test
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = sorted(int(i) for i in perm[:n_train])
    val = sorted(int(i) for i in perm[n_train:n_train + n_val])
    test = sorted(int(i) for i in perm[n_train + n_val:])
    return train, val, test


def apply_dihedral(arr, rot, flip):
    """Quarter-turn by ``rot`` then optional horizontal flip, on the last two axes."""
    out = np.rot90(arr, k=rot, axes=(-2, -1))
    if flip:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def augment(sample, rng):
    """Apply one uniformly drawn dihedral element to all three rasters.

    ``rng`` is a seed or numpy Generator. Non-square tiles cannot take
    quarter turns; those fall back to the flip-only subgroup (logged once
    per call).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    rot, flip = DIHEDRAL_ELEMENTS[rng.integers(len(DIHEDRAL_ELEMENTS))]
    if rot % 2 == 1 and sample.height != sample.width:
        log.warning("non-square tile %s: skipping 90-degree rotation, flip-only augmentation", sample.name or "<unnamed>")
        rot = 0
    if rot == 0 and not flip:
        return sample
    return replace(
        sample,
        t1=apply_dihedral(sample.t1, rot, flip),
        t2=apply_dihedral(sample.t2, rot, flip),
        mask=apply_dihedral(sample.mask, rot, flip),
    )


def scan_dataset_dir(root):
    """Matching (t1, t2, mask) file triples under root/{A,B,label}, name-sorted."""
    root = Path(root)
    dirs = {sub: root / sub for sub in ("A", "B", "label")}
    for sub, d in dirs.items():
        if not d.is_dir():
            raise FileNotFoundError(f"dataset directory missing subdirectory {sub}/: {d}")
    names = sorted(p.name for p in dirs["A"].iterdir() if p.is_file())
    triples = []
    for name in names:
        b, m = dirs["B"] / name, dirs["label"] / name
        if not b.is_file() or not m.is_file():
            raise FileNotFoundError(f"no matching B/label file for {name}")
        triples.append((dirs["A"] / name, b, m, Path(name).stem))
    return triples


def write_manifest(path, entries):
    """Tile manifest csv: source file, tile row, tile col, split."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "row", "col", "split"])
        writer.writerows(entries)


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["source", "row", "col", "split"]:
            raise ValueError(f"{path}: unexpected manifest header {header}")
        return [(src, int(row), int(col), split) for src, row, col, split in reader]


def synthetic_change_pairs(count=8, size=64, seed=0, squares=(1, 2)):
    """Small synthetic bi-temporal set: bright squares pasted into t2.

    The background is a smooth random gradient shared by both times; each
    pair's mask marks the pasted squares. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(count):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
        a, b, c = rng.uniform(0.2, 0.8, size=3).astype(np.float32)
        base = 0.25 + 0.5 * (a * yy + b * xx + c * yy * xx) / 2.0
        noise = rng.normal(0.0, 0.02, size=(3, size, size)).astype(np.float32)
        t1 = np.clip(base[None] + noise, 0.0, 1.0).astype(np.float32)
        t2 = t1.copy()
        mask = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(squares[0], squares[1] + 1))):
            side = int(rng.integers(12, 21))
            y0 = int(rng.integers(0, size - side))
            x0 = int(rng.integers(0, size - side))
            color = rng.uniform(0.7, 1.0, size=3).astype(np.float32)
            t2[:, y0:y0 + side, x0:x0 + side] = color[:, None, None]
            mask[y0:y0 + side, x0:x0 + side] = 1
        samples.append(BiTemporalSample(t1=t1, t2=t2, mask=mask, name=f"synthetic_{k:02d}"))
    return samples
