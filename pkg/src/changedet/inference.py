"""Scene-scale prediction and change-map rendering."""

from dataclasses import dataclass

import numpy as np
import torch

from .data import TileSpec, normalize_image, stitch_tiles, tile_grid


@dataclass(frozen=True)
class RenderPalette:
    """RGB triples for the four (prediction, truth) outcomes."""

    tp: tuple = (255, 255, 255)
    tn: tuple = (0, 0, 0)
    fp: tuple = (255, 0, 0)
    fn: tuple = (0, 255, 0)


def render_change_map(pred, gt, palette=None):
    """Color-code each pixel by its confusion outcome; returns H x W x 3 uint8."""
    palette = palette or RenderPalette()
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth shape {gt.shape}")
    out = np.empty(pred.shape + (3,), dtype=np.uint8)
    out[pred & gt] = palette.tp
    out[~pred & ~gt] = palette.tn
    out[pred & ~gt] = palette.fp
    out[~pred & gt] = palette.fn
    return out


@torch.no_grad()
def predict_pair(model, t1, t2):
    """Binary change mask for one pair that fits the network directly.

    t1/t2 are 3 x H x W arrays in [0, 1]; normalization happens here so
    callers feed raw decoded pixels.
    """
    model.eval()
    x1 = torch.from_numpy(normalize_image(t1)).unsqueeze(0)
    x2 = torch.from_numpy(normalize_image(t2)).unsqueeze(0)
    logits = model(x1, x2)
    return logits.argmax(dim=-3).squeeze(0).cpu().numpy().astype(np.uint8)


@torch.no_grad()
def predict_scene(model, t1, t2, tile_size=256):
    """Tiled inference over an arbitrary-extent scene.

    Scenes no larger than one tile whose extent the network accepts run in a
    single shot; everything else is padded to the tile grid (edge
    replication), predicted per tile, stitched row-major, and cropped back.
    """
    t1 = np.asarray(t1, dtype=np.float32)
    t2 = np.asarray(t2, dtype=np.float32)
    if t1.shape != t2.shape:
        raise ValueError(f"scene shapes differ: {t1.shape} vs {t2.shape}")
    if tile_size % 32 != 0:
        raise ValueError(f"tile size must be divisible by 32, got {tile_size}")
    h, w = t1.shape[-2:]
    if h <= tile_size and w <= tile_size and h % 32 == 0 and w % 32 == 0:
        return predict_pair(model, t1, t2)

    spec = TileSpec(tile_size=tile_size, mode="pad")
    rows, cols = tile_grid(h, w, spec)
    pad_h, pad_w = rows * tile_size - h, cols * tile_size - w
    p1 = np.pad(t1, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    p2 = np.pad(t2, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    tiles = []
    for r in range(rows):
        for c in range(cols):
            y0, x0 = r * tile_size, c * tile_size
            tiles.append(predict_pair(
                model,
                p1[:, y0:y0 + tile_size, x0:x0 + tile_size],
                p2[:, y0:y0 + tile_size, x0:x0 + tile_size],
            ))
    full = stitch_tiles(tiles, rows, cols)
    return full[:h, :w]
