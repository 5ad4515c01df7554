"""Bi-temporal change detection with DCT channel attention and spatial recovery."""

from .data import (BiTemporalSample, SplitSpec, TileSpec, augment, load_sample,
                   split_dataset, synthetic_change_pairs, tile_grid, tile_pair)
from .estimator import ChangeDetector
from .inference import RenderPalette, predict_scene, render_change_map
from .losses import LossConfig, dice_loss, focal_loss, total_loss
from .metrics import ConfusionCounts, ScoreReport, compute_scores, confusion_accumulate
from .model import ChangeNet, ModelConfig, build_model, param_count
from .spectral import (FrequencyIndexSet, MultiSpectralAttention, dct2_reference,
                       dct_basis, frequency_vector, select_frequencies)
from .train import (Checkpoint, TrainConfig, evaluate, frequency_ablation,
                    load_checkpoint, lr_at, overfit_probe, save_checkpoint, train_loop)

__version__ = "0.1.0"

__all__ = [
    "BiTemporalSample", "ChangeDetector", "ChangeNet", "Checkpoint",
    "ConfusionCounts", "FrequencyIndexSet", "LossConfig", "ModelConfig",
    "MultiSpectralAttention", "RenderPalette", "ScoreReport", "SplitSpec",
    "TileSpec", "TrainConfig", "augment", "build_model", "compute_scores",
    "confusion_accumulate", "dct2_reference", "dct_basis", "dice_loss",
    "evaluate", "focal_loss", "frequency_ablation", "frequency_vector",
    "load_checkpoint", "load_sample", "lr_at", "overfit_probe", "param_count",
    "predict_scene", "render_change_map", "save_checkpoint",
    "select_frequencies", "split_dataset", "synthetic_change_pairs",
    "tile_grid", "tile_pair", "total_loss", "train_loop",
]
