"""Hybrid focal + dice training objective.

Changed pixels are rare relative to background, so the objective combines a
focusing cross-entropy term with a soft-overlap term, summed without extra
weighting. Both operate on the two-channel change logits with label 1 for
changed pixels.
"""

from dataclasses import dataclass

import torch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2
    gamma: float = 2.0
    dice_smooth: float = 1.0
    reduction: str = "mean"
    # Apply alpha to positives and (1 - alpha) to negatives instead of a
    # uniform multiplier. Off by default; the printed formula is uniform.
    class_balanced_alpha: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.dice_smooth <= 0.0:
            raise ValueError(f"dice_smooth must be > 0, got {self.dice_smooth}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def _as_tensor(x, ref=None):
    if not torch.is_tensor(x):
        x = torch.as_tensor(x)
    if ref is not None:
        x = x.to(dtype=ref.dtype, device=ref.device)
    return x


def foreground_probability(logits):
    """Softmax over the class axis, foreground (changed) channel.

    Accepts (2, H, W) or (B, 2, H, W); the class axis is dim -3.
    """
    logits = _as_tensor(logits)
    if logits.dim() not in (3, 4) or logits.size(-3) != 2:
        raise ValueError(f"expected (..., 2, H, W) logits, got shape {tuple(logits.shape)}")
    return torch.softmax(logits, dim=-3).select(-3, 1)


def focal_loss(probs, labels, cfg=None):
    """Focusing cross-entropy on foreground probabilities.

    Per pixel: -alpha * (1 - p_hat)^gamma * log(p_hat), where p_hat is the
    probability assigned to the true class. Probabilities are clamped to
    [PROB_EPS, 1 - PROB_EPS] before the log.
    """
    cfg = cfg or LossConfig()
    probs = _as_tensor(probs)
    labels = _as_tensor(labels, probs)
    if probs.shape != labels.shape:
        raise ValueError(f"probs shape {tuple(probs.shape)} does not match labels shape {tuple(labels.shape)}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    p_hat = torch.where(labels > 0.5, p, 1.0 - p)
    if cfg.class_balanced_alpha:
        weight = torch.where(labels > 0.5, torch.full_like(p, cfg.alpha), torch.full_like(p, 1.0 - cfg.alpha))
    else:
        weight = cfg.alpha
    loss = -weight * (1.0 - p_hat) ** cfg.gamma * torch.log(p_hat)
    return loss.mean() if cfg.reduction == "mean" else loss.sum()


def dice_loss(logits, labels, cfg=None):
    """One minus the smoothed soft-overlap coefficient.

    Foreground probabilities come from the softmax of the two-channel
    logits; sums run over all pixels (and the batch, if present), with the
    smoothing constant guarding the empty-mask case.
    """
    cfg = cfg or LossConfig()
    q = foreground_probability(logits)
    labels = _as_tensor(labels, q)
    if q.shape != labels.shape:
        raise ValueError(f"logits spatial shape {tuple(q.shape)} does not match labels shape {tuple(labels.shape)}")
    intersection = (labels * q).sum()
    total = labels.sum() + q.sum()
    return 1.0 - (2.0 * intersection + cfg.dice_smooth) / (total + cfg.dice_smooth)


def total_loss(logits, labels, cfg=None, return_parts=False):
    """Unweighted sum of the focal and dice terms on shared logits."""
    cfg = cfg or LossConfig()
    focal = focal_loss(foreground_probability(logits), labels, cfg)
    dice = dice_loss(logits, labels, cfg)
    if return_parts:
        return focal + dice, focal, dice
    return focal + dice
