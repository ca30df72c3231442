"""Numeric kernel: normalization, similarity, tempered softmax, overlap metrics,
and mask-pooled feature aggregation.

All operations are pure functions over float64 numpy arrays. Construction-time
math deliberately runs in float64 even though the bank file narrows anchors to
float32 on disk.

Conventions:
    vector       -- 1-D float64 array, dimension d > 0
    binary mask  -- 2-D bool array (height, width)
    feature map  -- 3-D float64 array (height, width, d)
"""
from __future__ import annotations

import numpy as np

from .errors import (
    DegenerateVector,
    DimMismatch,
    EmptyMask,
    InvalidTemperature,
    InvalidVector,
)

DEFAULT_POOL_EPSILON = 1e-6


def as_vector(v) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector or raise InvalidVector."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidVector(f"expected non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidVector("vector contains non-finite entries")
    return arr


def as_mask(m) -> np.ndarray:
    """Coerce to a 2-D bool mask."""
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.size == 0:
        raise DimMismatch(f"expected non-empty 2-D mask, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_feature_map(f) -> np.ndarray:
    """Coerce to a finite (height, width, d) float64 feature map."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] == 0:
        raise DimMismatch(f"expected (H, W, d) feature map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidVector("feature map contains non-finite entries")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Return v / ||v||_2; the zero vector maps to itself.

    Callers that cannot tolerate a directionless result must check the norm
    themselves (see estimate_prototype / cosine).
    """
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        return arr.copy()
    return arr / norm


def cosine(a, b) -> float:
    """Cosine similarity, clamped to [-1, 1] against float rounding."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimMismatch(f"dimension {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine undefined for zero-norm operand")
    value = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, value))


def tempered_softmax(scores, tau: float) -> np.ndarray:
    """Softmax of scores / tau with max-subtraction for stability.

    Weights sum to 1; lowering tau sharpens the distribution toward the
    argmax score.
    """
    if not np.isfinite(tau) or tau <= 0.0:
        raise InvalidTemperature(f"temperature must be positive, got {tau!r}")
    arr = as_vector(scores)
    scaled = arr / float(tau)
    scaled -= scaled.max()
    weights = np.exp(scaled)
    return weights / weights.sum()


def _overlap_counts(pred, gt) -> tuple[int, int, int]:
    p = as_mask(pred)
    g = as_mask(gt)
    if p.shape != g.shape:
        raise DimMismatch(f"mask shapes {p.shape} vs {g.shape}")
    inter = int(np.count_nonzero(p & g))
    return inter, int(np.count_nonzero(p)), int(np.count_nonzero(g))


def dice(pred, gt) -> float:
    """Dice overlap 2|P∩G| / (|P|+|G|); two empty masks agree perfectly (1.0)."""
    inter, np_, ng = _overlap_counts(pred, gt)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred, gt) -> float:
    """Intersection over union |P∩G| / |P∪G|; two empty masks score 1.0."""
    inter, np_, ng = _overlap_counts(pred, gt)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


def mask_pooled_embedding(features, mask, epsilon: float = DEFAULT_POOL_EPSILON) -> np.ndarray:
    """Foreground-aware embedding: normalized mean of features under the mask.

    Computes Norm( sum_u mask(u) * features(u) / (sum_u mask(u) + epsilon) ).
    The epsilon only stabilizes the division; an empty mask is an error
    because it carries no evidence and a zero vector would poison any
    downstream cosine.
    """
    fm = as_feature_map(features)
    m = as_mask(mask)
    if fm.shape[:2] != m.shape:
        raise DimMismatch(f"feature grid {fm.shape[:2]} vs mask {m.shape}")
    count = int(np.count_nonzero(m))
    if count == 0:
        raise EmptyMask("mask selects no pixels")
    pooled = fm[m].sum(axis=0) / (count + epsilon)
    return l2_normalize(pooled)
