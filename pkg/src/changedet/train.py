"""SGD training loop with multi-step decay, evaluation, and checkpointing.

Shuffling and augmentation draw from a generator re-seeded per epoch from
(seed, epoch), so a run resumed from a checkpoint continues exactly as the
uninterrupted run would.
"""

import copy
import csv
import hashlib
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import augment as augment_sample
from .data import normalize_image
from .losses import LossConfig, total_loss
from .metrics import ConfusionCounts, compute_scores, confusion_accumulate
from .model import ModelConfig, build_model

CHECKPOINT_MAGIC = b"CDCKPT1\n"


def deterministic_mode():
    """Pin compute to bitwise-reproducible settings.

    Multi-threaded MKL reductions are not reproducible run to run; tests and
    the CLI call this once so identical seeds give identical numbers.
    """
    torch.set_num_threads(1)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-5
    lr_gamma: float = 0.1
    lr_milestones: tuple = None  # None -> 60% and 80% of epochs
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    augment: bool = True
    clip_grad_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        milestones = self.milestones
        if list(milestones) != sorted(set(milestones)) or any(m >= self.epochs for m in milestones):
            raise ValueError(f"milestones must be strictly increasing and below epochs, got {milestones}")

    @property
    def milestones(self):
        if self.lr_milestones is not None:
            return tuple(self.lr_milestones)
        return default_milestones(self.epochs)


def default_milestones(epochs):
    """Decay points at 60% and 80% of the run."""
    first, second = int(epochs * 0.6), int(epochs * 0.8)
    return tuple(sorted({m for m in (first, second) if 0 < m < epochs}))


def lr_at(epoch, cfg):
    """Piecewise-constant schedule: base_lr * gamma^(milestones passed)."""
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.base_lr * cfg.lr_gamma ** passed


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file fails its integrity check."""


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict
    epoch: int
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _snapshot_state(module_or_dict):
    state = module_or_dict.state_dict() if hasattr(module_or_dict, "state_dict") else module_or_dict
    return {k: (v.detach().clone() if torch.is_tensor(v) else copy.deepcopy(v)) for k, v in state.items()}


def save_checkpoint(ckpt, path):
    """Write the checkpoint with a trailing SHA-256 integrity footer."""
    payload = io.BytesIO()
    torch.save(
        {
            "model_state": ckpt.model_state,
            "optimizer_state": ckpt.optimizer_state,
            "epoch": ckpt.epoch,
            "config": ckpt.config,
            "history": ckpt.history,
        },
        payload,
    )
    raw = payload.getvalue()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(raw)
        fh.write(hashlib.sha256(raw).digest())
    return path


def load_checkpoint(path):
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC) or len(blob) < len(CHECKPOINT_MAGIC) + 32:
        raise CheckpointError(f"{path}: not a recognizable checkpoint file")
    raw, digest = blob[len(CHECKPOINT_MAGIC):-32], blob[-32:]
    if hashlib.sha256(raw).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt or truncated")
    data = torch.load(io.BytesIO(raw), weights_only=True)
    return Checkpoint(
        model_state=data["model_state"],
        optimizer_state=data["optimizer_state"],
        epoch=data["epoch"],
        config=data["config"],
        history=data["history"],
    )


def collate(samples, dtype=torch.float32):
    """Stack samples into normalized (t1, t2, mask) batch tensors."""
    t1 = torch.from_numpy(np.stack([normalize_image(s.t1) for s in samples])).to(dtype)
    t2 = torch.from_numpy(np.stack([normalize_image(s.t2) for s in samples])).to(dtype)
    mask = torch.from_numpy(np.stack([s.mask for s in samples])).to(dtype)
    return t1, t2, mask


@torch.no_grad()
def evaluate(model, samples, batch_size=8):
    """Argmax predictions over a split, accumulated into one ScoreReport."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty split")
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    acc = ConfusionCounts()
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        t1, t2, mask = collate(chunk)
        logits = model(t1, t2)
        pred = logits.argmax(dim=-3)
        acc = confusion_accumulate(pred.cpu().numpy(), mask.numpy().astype(np.uint8), acc)
    if was_training and hasattr(model, "train"):
        model.train()
    return compute_scores(acc)


def _epoch_rng(seed, epoch):
    return np.random.default_rng([seed, epoch])


def _config_snapshot(cfg, model_cfg, loss_cfg, extra=None):
    snap = {"train": asdict(cfg)}
    if model_cfg is not None:
        snap["model"] = asdict(model_cfg)
    if loss_cfg is not None:
        snap["loss"] = asdict(loss_cfg)
    if extra:
        snap.update(extra)
    return snap


def train_loop(model, datasets, cfg, loss_cfg=None, model_cfg=None,
               start_epoch=0, optimizer_state=None, log_path=None,
               extra_config=None):
    """Run SGD over the train split; returns (checkpoint, history).

    ``datasets`` maps "train" (required) and "val" (optional) to sample
    lists. With a val split the returned checkpoint is the best one by val
    F1; otherwise it is the final state. History carries one record per
    epoch (epoch, lr, train_loss, and val scores when available).
    """
    train_samples = datasets.get("train", [])
    val_samples = datasets.get("val", [])
    if len(train_samples) == 0:
        raise ValueError("training split is empty")
    loss_cfg = loss_cfg or LossConfig()
    model_cfg = model_cfg if model_cfg is not None else getattr(model, "config", None)

    optimizer = torch.optim.SGD(
        model.parameters(), lr=cfg.base_lr,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    history = []
    best = None
    best_f1 = -1.0
    log_rows = []

    for epoch in range(start_epoch, cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(train_samples))
        model.train()
        losses = []
        for b_start in range(0, len(order), cfg.batch_size):
            batch_idx = order[b_start:b_start + cfg.batch_size]
            batch = [train_samples[i] for i in batch_idx]
            if cfg.augment:
                batch = [augment_sample(s, rng) for s in batch]
            t1, t2, mask = collate(batch)
            logits = model(t1, t2)
            loss, focal, dice = total_loss(logits, mask, loss_cfg, return_parts=True)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {b_start // cfg.batch_size}: "
                    f"focal={focal.item()}, dice={dice.item()}")
            optimizer.zero_grad()
            loss.backward()
            if cfg.clip_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_grad_norm)
            optimizer.step()
            losses.append(loss.item())

        record = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses))}
        if val_samples:
            report = evaluate(model, val_samples, cfg.batch_size)
            record.update(val_f1=report.f1, val_precision=report.precision,
                          val_recall=report.recall, val_iou=report.iou, val_oa=report.oa)
            if report.f1 > best_f1:
                best_f1 = report.f1
                best = Checkpoint(
                    model_state=_snapshot_state(model),
                    optimizer_state=_snapshot_state(optimizer.state_dict()),
                    epoch=epoch + 1,
                    config=_config_snapshot(cfg, model_cfg, loss_cfg, extra_config),
                    history=copy.deepcopy(history + [record]),
                )
        history.append(record)
        log_rows.append(record)

    final = Checkpoint(
        model_state=_snapshot_state(model),
        optimizer_state=_snapshot_state(optimizer.state_dict()),
        epoch=cfg.epochs,
        config=_config_snapshot(cfg, model_cfg, loss_cfg, extra_config),
        history=copy.deepcopy(history),
    )
    if log_path is not None:
        _write_log(log_path, log_rows)
    return (best if best is not None else final), history


def _write_log(path, rows):
    columns = ["epoch", "lr", "train_loss", "val_f1", "val_precision", "val_recall", "val_iou", "val_oa"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.get(c, "") for c in columns])


def resume_training(ckpt, datasets, cfg, loss_cfg=None, log_path=None):
    """Rebuild model and optimizer from a checkpoint and continue the run."""
    model_cfg = ModelConfig(**ckpt.config["model"]) if "model" in ckpt.config else None
    model = build_model(model_cfg, seed=cfg.seed)
    model.load_state_dict(ckpt.model_state)
    return train_loop(
        model, datasets, cfg, loss_cfg=loss_cfg, model_cfg=model_cfg,
        start_epoch=ckpt.epoch, optimizer_state=ckpt.optimizer_state, log_path=log_path,
    ), model


DESK_MODEL = ModelConfig(stage_widths=(16, 32, 64, 128), freq_components=4, decoder_width=64)
ABLATION_MODEL_WIDTHS = (32, 64, 128, 256)


def overfit_probe(samples, steps=200, model_cfg=DESK_MODEL, seed=0,
                  base_lr=0.05, momentum=0.9, weight_decay=5e-5):
    """Memorization probe: train on the given samples and score them.

    One step per batch; with batch_size == len(samples) each epoch is one
    step. Augmentation is off so the target set is fixed. Returns
    (train-set ScoreReport, history, model).
    """
    cfg = TrainConfig(
        base_lr=base_lr, momentum=momentum, weight_decay=weight_decay,
        epochs=steps, batch_size=len(samples), seed=seed, augment=False,
    )
    model = build_model(model_cfg, seed=seed)
    _, history = train_loop(model, {"train": samples}, cfg, model_cfg=model_cfg)
    report = evaluate(model, samples, batch_size=len(samples))
    return report, history, model


def frequency_ablation(samples, counts=(4, 8, 16, 32), steps=200, seed=0,
                       stage_widths=ABLATION_MODEL_WIDTHS, decoder_width=64):
    """Run the memorization probe across component counts.

    Emits one row per count with the five scores; no ordering is implied.
    Returns (rows, formatted table string).
    """
    rows = []
    for n in counts:
        model_cfg = ModelConfig(stage_widths=stage_widths, freq_components=n, decoder_width=decoder_width)
        report, _, _ = overfit_probe(samples, steps=steps, model_cfg=model_cfg, seed=seed)
        rows.append({
            "n": n, "f1": report.f1, "precision": report.precision,
            "recall": report.recall, "iou": report.iou, "oa": report.oa,
        })
    lines = ["  n      F1     Pre     Rec     IoU      OA"]
    for r in rows:
        lines.append("{n:>3d}  {f1:6.2f}  {precision:6.2f}  {recall:6.2f}  {iou:6.2f}  {oa:6.2f}".format(
            n=r["n"], **{k: v * 100 for k, v in r.items() if k != "n"}))
    return rows, "\n".join(lines)
