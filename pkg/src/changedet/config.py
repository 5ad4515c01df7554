"""Flat key/value config files binding model, loss, and training settings."""

from pathlib import Path

import yaml

from .losses import LossConfig
from .model import ModelConfig
from .train import TrainConfig

MODEL_KEYS = ("stage_widths", "freq_components", "base_grid_height", "base_grid_width",
              "decoder_width", "share_encoder_weights", "freq_file")
TRAIN_KEYS = ("base_lr", "momentum", "weight_decay", "lr_gamma", "lr_milestones",
              "epochs", "batch_size", "seed", "augment", "clip_grad_norm")
LOSS_KEYS = ("alpha", "gamma", "dice_smooth", "reduction", "class_balanced_alpha")
DATA_KEYS = ("tile_size", "ratios")


def load_config(path):
    """Parse a flat mapping of settings; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a flat key/value mapping")
    known = set(MODEL_KEYS) | set(TRAIN_KEYS) | set(LOSS_KEYS) | set(DATA_KEYS)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def _pick(raw, keys, tuple_keys=()):
    out = {}
    for k in keys:
        if k in raw:
            v = raw[k]
            out[k] = tuple(v) if k in tuple_keys and v is not None else v
    return out


def model_config(raw):
    return ModelConfig(**_pick(raw, MODEL_KEYS, tuple_keys=("stage_widths",)))


def train_config(raw):
    return TrainConfig(**_pick(raw, TRAIN_KEYS, tuple_keys=("lr_milestones",)))


def loss_config(raw):
    return LossConfig(**_pick(raw, LOSS_KEYS))


def split_ratios(raw):
    return tuple(raw.get("ratios", (0.8, 0.1, 0.1)))


def write_config(path, settings):
    Path(path).write_text(yaml.safe_dump(dict(settings), sort_keys=True))
