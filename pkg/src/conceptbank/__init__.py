"""Toolkit for building, storing, and applying calibrated per-class query
embeddings (a concept bank) against a frozen promptable segmentation backend.
"""

__version__ = "0.1.0"

from . import errors
from .kernel import (
    cosine,
    dice,
    iou,
    l2_normalize,
    mask_pooled_embedding,
    tempered_softmax,
)

__all__ = [
    "errors",
    "l2_normalize",
    "cosine",
    "tempered_softmax",
    "dice",
    "iou",
    "mask_pooled_embedding",
    "__version__",
]
