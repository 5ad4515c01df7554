"""Confusion tallies and the five standard change-detection scores.

Positive class is "changed". Accumulators merge by fieldwise addition, so
parallel evaluation shards can be combined in any order.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )


def confusion_accumulate(pred, gt, acc=None):
    """Add one binary prediction/ground-truth pair to the running tallies."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth shape {gt.shape}")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} mask contains non-binary values")
    p = pred.astype(bool)
    g = gt.astype(bool)
    counts = ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )
    return counts if acc is None else acc + counts


@dataclass
class ScoreReport:
    f1: float
    precision: float
    recall: float
    iou: float
    oa: float
    # True when any score hit a 0/0 case and fell back to 0 by convention.
    degenerate: bool = False

    def as_text(self):
        lines = [
            f"F1:  {self.f1 * 100:.4f}",
            f"Pre: {self.precision * 100:.4f}",
            f"Rec: {self.recall * 100:.4f}",
            f"IoU: {self.iou * 100:.4f}",
            f"OA:  {self.oa * 100:.4f}",
        ]
        if self.degenerate:
            lines.append("note: degenerate 0/0 score(s) reported as 0")
        return "\n".join(lines)

    @staticmethod
    def csv_header():
        return "F1,Pre,Rec,IoU,OA"

    def csv_row(self):
        return ",".join(
            f"{v * 100:.4f}" for v in (self.f1, self.precision, self.recall, self.iou, self.oa)
        )


def compute_scores(acc):
    """Five scores from the tallies: F1, precision, recall, IoU, overall accuracy.

    Pre = tp/(tp+fp), Rec = tp/(tp+fn), F1 = 2tp/(2tp+fp+fn),
    IoU = tp/(tp+fp+fn), OA = (tp+tn)/total. 0/0 cases return 0 and set the
    degenerate flag.
    """
    if acc.total == 0:
        raise ValueError("cannot score an empty accumulator")
    degenerate = False

    def ratio(num, den):
        nonlocal degenerate
        if den == 0:
            degenerate = True
            return 0.0
        return num / den

    tp, fp, fn, tn = acc.tp, acc.fp, acc.fn, acc.tn
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    iou = ratio(tp, tp + fp + fn)
    oa = ratio(tp + tn, acc.total)
    return ScoreReport(f1=f1, precision=precision, recall=recall, iou=iou, oa=oa, degenerate=degenerate)
