"""Scikit-learn style estimator facade over the training pipeline.

``ChangeDetector`` exposes the usual fit/predict/score surface so the model
slots into pipelines, grid searches, and cross-validation. X is a sequence
of bi-temporal pairs shaped (N, 2, 3, H, W) (or a list of (t1, t2) tuples);
y is the matching stack of binary masks (N, H, W).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import BiTemporalSample
from .inference import predict_scene
from .losses import LossConfig
from .metrics import ConfusionCounts, compute_scores, confusion_accumulate
from .model import ModelConfig, build_model
from .train import TrainConfig, train_loop


def _as_pairs(X):
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, (tuple, list)) and len(item) == 2:
            t1, t2 = item
        else:
            arr = np.asarray(item, dtype=np.float32)
            if arr.ndim != 4 or arr.shape[0] != 2:
                raise ValueError(f"sample {i}: expected a (2, 3, H, W) pair, got shape {arr.shape}")
            t1, t2 = arr[0], arr[1]
        t1 = np.asarray(t1, dtype=np.float32)
        t2 = np.asarray(t2, dtype=np.float32)
        if t1.shape != t2.shape or t1.ndim != 3 or t1.shape[0] != 3:
            raise ValueError(f"sample {i}: t1/t2 must both be (3, H, W), got {t1.shape} and {t2.shape}")
        pairs.append((t1, t2))
    if not pairs:
        raise ValueError("X is empty")
    return pairs


def _as_masks(y, pairs):
    masks = [np.asarray(m) for m in y]
    if len(masks) != len(pairs):
        raise ValueError(f"X has {len(pairs)} samples but y has {len(masks)}")
    out = []
    for i, (mask, (t1, _)) in enumerate(zip(masks, pairs)):
        if mask.shape != t1.shape[1:]:
            raise ValueError(f"sample {i}: mask shape {mask.shape} does not match image extent {t1.shape[1:]}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError(f"sample {i}: mask contains non-binary values")
        out.append(mask.astype(np.uint8))
    return out


class ChangeDetector(BaseEstimator):
    """Bi-temporal change detector with a fit/predict interface.

    Defaults use the small laptop-friendly configuration; pass the wide
    stage widths and freq_components=16 for the full-size network.
    """

    def __init__(self, stage_widths=(16, 32, 64, 128), freq_components=4,
                 base_grid=7, decoder_width=64, share_encoder_weights=True,
                 epochs=30, batch_size=8, base_lr=0.05, momentum=0.9,
                 weight_decay=5e-5, lr_gamma=0.1, lr_milestones=None,
                 alpha=0.2, gamma=2.0, dice_smooth=1.0, augment=True,
                 tile_size=256, seed=0):
        self.stage_widths = stage_widths
        self.freq_components = freq_components
        self.base_grid = base_grid
        self.decoder_width = decoder_width
        self.share_encoder_weights = share_encoder_weights
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lr_milestones = lr_milestones
        self.alpha = alpha
        self.gamma = gamma
        self.dice_smooth = dice_smooth
        self.augment = augment
        self.tile_size = tile_size
        self.seed = seed

    def _configs(self):
        model_cfg = ModelConfig(
            stage_widths=tuple(self.stage_widths),
            freq_components=self.freq_components,
            base_grid_height=self.base_grid,
            base_grid_width=self.base_grid,
            decoder_width=self.decoder_width,
            share_encoder_weights=self.share_encoder_weights,
        )
        train_cfg = TrainConfig(
            base_lr=self.base_lr, momentum=self.momentum,
            weight_decay=self.weight_decay, lr_gamma=self.lr_gamma,
            lr_milestones=self.lr_milestones, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, augment=self.augment,
        )
        loss_cfg = LossConfig(alpha=self.alpha, gamma=self.gamma, dice_smooth=self.dice_smooth)
        return model_cfg, train_cfg, loss_cfg

    def fit(self, X, y):
        pairs = _as_pairs(X)
        masks = _as_masks(y, pairs)
        samples = [
            BiTemporalSample(t1=t1, t2=t2, mask=m, name=f"fit_{i:04d}")
            for i, ((t1, t2), m) in enumerate(zip(pairs, masks))
        ]
        model_cfg, train_cfg, loss_cfg = self._configs()
        model = build_model(model_cfg, seed=self.seed)
        _, history = train_loop(model, {"train": samples}, train_cfg,
                                loss_cfg=loss_cfg, model_cfg=model_cfg)
        self.model_ = model
        self.history_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this ChangeDetector is not fitted yet; call fit first")

    def predict(self, X):
        """Binary change masks, one per input pair."""
        self._check_fitted()
        pairs = _as_pairs(X)
        return np.stack([predict_scene(self.model_, t1, t2, self.tile_size) for t1, t2 in pairs])

    def score(self, X, y):
        """F1 on the changed class, accumulated over all pairs."""
        self._check_fitted()
        pairs = _as_pairs(X)
        masks = _as_masks(y, pairs)
        acc = ConfusionCounts()
        for (t1, t2), m in zip(pairs, masks):
            pred = predict_scene(self.model_, t1, t2, self.tile_size)
            acc = confusion_accumulate(pred, m, acc)
        return compute_scores(acc).f1
