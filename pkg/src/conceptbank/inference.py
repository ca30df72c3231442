"""Bank-conditioned inference and semantic-map assembly.

Banked inference retrieves every class anchor from the bank and conditions
the mask predictor in a single call; the text encoder is never touched. The
on-the-fly ensemble baseline exists for cost comparisons: it re-encodes every
candidate prompt and predicts per prompt, which is exactly the overhead the
bank removes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backend.base import FrozenModel, Image
from .bank.store import ConceptBank
from .errors import DimMismatch

BACKGROUND = -1  # label sentinel for pixels no class mask covers


@dataclass
class SemanticPrediction:
    """Per-pixel class labels (BACKGROUND where uncovered) plus the stacked
    per-class confidences they were assembled from."""

    labels: np.ndarray  # (H, W) int64
    class_names: list[str]
    confidences: np.ndarray | None = None  # (C, H, W)


def infer_image(
    model: FrozenModel, bank: ConceptBank, image: Image
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Predict one (mask, confidence) pair per bank class with a single
    predict call; returns (class name, mask, confidence) triples."""
    if bank.dim != model.dimension:
        raise DimMismatch(f"bank dimension {bank.dim} vs model {model.dimension}")
    outputs = model.predict_masks(image, list(bank.anchors))
    return [
        (name, mask, conf)
        for name, (mask, conf) in zip(bank.class_names, outputs)
    ]


def assemble_semantic_map(
    per_class: Sequence[tuple[np.ndarray, np.ndarray]],
    background_mode: str = "with",
) -> np.ndarray:
    """Reduce per-class (mask, confidence) pairs to one label per pixel.

    A pixel takes the argmax-confidence class among those whose mask covers
    it (ties to the lower class index). Uncovered pixels become BACKGROUND in
    "with" mode; "without" mode assigns the unconditional argmax so every
    pixel gets a class.
    """
    if background_mode not in ("with", "without"):
        raise ValueError(f"unknown background mode {background_mode!r}")
    if not per_class:
        raise ValueError("need at least one class")
    shape = per_class[0][0].shape
    for mask, conf in per_class:
        if mask.shape != shape or conf.shape != shape:
            raise DimMismatch("per-class maps disagree on shape")
    masks = np.stack([np.asarray(m, dtype=bool) for m, _ in per_class])
    confs = np.stack([np.asarray(c, dtype=np.float64) for _, c in per_class])
    if background_mode == "without":
        return np.argmax(confs, axis=0).astype(np.int64)
    gated = np.where(masks, confs, -np.inf)
    labels = np.argmax(gated, axis=0).astype(np.int64)
    labels[~masks.any(axis=0)] = BACKGROUND
    return labels


def infer_semantic(
    model: FrozenModel,
    bank: ConceptBank,
    image: Image,
    background_mode: str = "with",
    keep_confidences: bool = False,
) -> SemanticPrediction:
    per_class = infer_image(model, bank, image)
    labels = assemble_semantic_map([(m, c) for _, m, c in per_class], background_mode)
    confs = np.stack([c for _, _, c in per_class]) if keep_confidences else None
    return SemanticPrediction(labels=labels, class_names=list(bank.class_names), confidences=confs)


def infer_image_onthefly(
    model: FrozenModel,
    class_prompts: Mapping[str, Sequence[str]],
    image: Image,
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Multi-prompt ensemble baseline without a bank.

    Every prompt is text-encoded and predicted separately; per class the
    masks union and the confidences take the pixel-wise maximum.
    """
    results = []
    for name, prompts in class_prompts.items():
        mask_acc = None
        conf_acc = None
        for prompt in prompts:
            query = model.encode_text(prompt)
            mask, conf = model.predict_masks(image, [query])[0]
            mask_acc = mask if mask_acc is None else (mask_acc | mask)
            conf_acc = conf if conf_acc is None else np.maximum(conf_acc, conf)
        if mask_acc is None:
            raise ValueError(f"class {name}: no prompts")
        results.append((name, mask_acc, conf_acc))
    return results
