"""Dataset-level intersection-over-union evaluation.

Counts accumulate per class over the whole dataset before any ratio is
taken; partial tallies merge associatively, so per-image work can run in any
order or in parallel. The mean is taken over classes whose accumulated union
is nonzero: a class absent from both prediction and ground truth everywhere
carries no evidence and is excluded rather than counted as 0 or 1. Ground
truth pixels equal to the ignore index take part in no class's counts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EvalInputMismatch

IGNORE_INDEX = 255


@dataclass
class EvalCounts:
    intersection: int = 0
    union: int = 0
    gt_pixels: int = 0

    def merge(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(
            self.intersection + other.intersection,
            self.union + other.union,
            self.gt_pixels + other.gt_pixels,
        )

    @property
    def iou(self) -> float | None:
        if self.union == 0:
            return None
        return self.intersection / self.union


@dataclass
class EvalReport:
    classes: list[str]
    counts: list[EvalCounts]
    dataset_id: str = ""
    bank_id: str = ""

    @property
    def per_class_iou(self) -> dict[str, float | None]:
        return {name: c.iou for name, c in zip(self.classes, self.counts)}

    @property
    def mean_iou(self) -> float | None:
        values = [c.iou for c in self.counts if c.union > 0]
        if not values:
            return None
        return float(np.mean(values))

    def merge(self, other: "EvalReport") -> "EvalReport":
        if self.classes != other.classes:
            raise EvalInputMismatch("cannot merge reports over different class lists")
        return EvalReport(
            classes=list(self.classes),
            counts=[a.merge(b) for a, b in zip(self.counts, other.counts)],
            dataset_id=self.dataset_id or other.dataset_id,
            bank_id=self.bank_id or other.bank_id,
        )

    def to_json_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "bank_id": self.bank_id,
            "mean_iou": self.mean_iou,
            "per_class": {
                name: {
                    "iou": c.iou,
                    "intersection": c.intersection,
                    "union": c.union,
                    "gt_pixels": c.gt_pixels,
                }
                for name, c in zip(self.classes, self.counts)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        width = max([len("class")] + [len(n) for n in self.classes])
        lines = [f"{'class':<{width}}  {'IoU':>8}  {'inter':>10}  {'union':>10}  {'gt px':>10}"]
        lines.append("-" * len(lines[0]))
        for name, c in zip(self.classes, self.counts):
            iou_s = f"{c.iou:.4f}" if c.iou is not None else "--"
            lines.append(
                f"{name:<{width}}  {iou_s:>8}  {c.intersection:>10}  {c.union:>10}  {c.gt_pixels:>10}"
            )
        lines.append("-" * len(lines[0]))
        mean = self.mean_iou
        mean_s = f"{mean:.4f}" if mean is not None else "--"
        lines.append(f"{'mean IoU':<{width}}  {mean_s:>8}")
        return "\n".join(lines) + "\n"


def accumulate_pair(
    pred: np.ndarray,
    gt: np.ndarray,
    num_classes: int,
    ignore_index: int = IGNORE_INDEX,
) -> list[EvalCounts]:
    """Per-class counts for one prediction / ground-truth label-map pair."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise EvalInputMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt != ignore_index
    counts = []
    for c in range(num_classes):
        p = (pred == c) & valid
        g = (gt == c) & valid
        counts.append(
            EvalCounts(
                intersection=int(np.count_nonzero(p & g)),
                union=int(np.count_nonzero(p | g)),
                gt_pixels=int(np.count_nonzero(g)),
            )
        )
    return counts


def evaluate_miou(
    preds,
    gts,
    classes: list[str],
    dataset_id: str = "",
    bank_id: str = "",
    ignore_index: int = IGNORE_INDEX,
) -> EvalReport:
    """Accumulate IoU counts over aligned prediction / ground-truth lists."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise EvalInputMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    totals = [EvalCounts() for _ in classes]
    for pred, gt in zip(preds, gts):
        pair = accumulate_pair(pred, gt, len(classes), ignore_index)
        totals = [a.merge(b) for a, b in zip(totals, pair)]
    return EvalReport(classes=list(classes), counts=totals, dataset_id=dataset_id, bank_id=bank_id)
