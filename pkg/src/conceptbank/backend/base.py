"""Frozen-model contract and the image payloads backends accept.

A backend exposes three read-only operations of a frozen model: dense visual
features, text embedding, and query-conditioned mask prediction. Nothing in
this toolkit ever mutates a backend; all implementations must be safe for
concurrent read-only use.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..errors import DimMismatch


@dataclass(frozen=True)
class GridImage:
    """Synthetic image: one unit direction vector per pixel.

    Mock worlds use these instead of rasters; the backend synthesizes dense
    features from the stored directions plus seeded noise. view_tag
    disambiguates crops or resamples of the same source id so feature caches
    never alias distinct content.
    """

    image_id: int
    dirs: np.ndarray  # (H, W, d) float64
    view_tag: str = ""

    @property
    def height(self) -> int:
        return self.dirs.shape[0]

    @property
    def width(self) -> int:
        return self.dirs.shape[1]

    def save(self, path) -> None:
        np.savez_compressed(path, image_id=np.int64(self.image_id), dirs=self.dirs)

    @staticmethod
    def load(path) -> "GridImage":
        with np.load(path) as data:
            return GridImage(image_id=int(data["image_id"]), dirs=np.array(data["dirs"]))


@dataclass(frozen=True)
class RasterImage:
    """Plain pixel image for real checkpoints served behind the wire protocol."""

    pixels: np.ndarray  # (H, W, C) uint8
    image_id: str = ""

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def content_id(self) -> str:
        if self.image_id:
            return self.image_id
        return hashlib.sha1(self.pixels.tobytes()).hexdigest()


Image = GridImage | RasterImage


def load_image(path) -> Image:
    """Load an image file by extension: .npz grid images, rasters via PIL."""
    p = Path(path)
    if p.suffix == ".npz":
        return GridImage.load(p)
    from PIL import Image as PILImage

    with PILImage.open(p) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return RasterImage(pixels=arr, image_id=p.name)


def resize_nearest(image: Image, size: int) -> Image:
    """Nearest-neighbor resample to a square size x size canvas."""
    if size <= 0:
        raise ValueError("size must be positive")
    rows = np.clip((np.arange(size) + 0.5) * image.height / size, 0, image.height - 1).astype(int)
    cols = np.clip((np.arange(size) + 0.5) * image.width / size, 0, image.width - 1).astype(int)
    if isinstance(image, GridImage):
        return GridImage(image_id=image.image_id, dirs=image.dirs[np.ix_(rows, cols)],
                         view_tag=f"{image.view_tag}|r{size}")
    return RasterImage(pixels=image.pixels[np.ix_(rows, cols)], image_id=f"{image.image_id}|r{size}")


def resize_mask_nearest(mask: np.ndarray, size: int) -> np.ndarray:
    rows = np.clip((np.arange(size) + 0.5) * mask.shape[0] / size, 0, mask.shape[0] - 1).astype(int)
    cols = np.clip((np.arange(size) + 0.5) * mask.shape[1] / size, 0, mask.shape[1] - 1).astype(int)
    return mask[np.ix_(rows, cols)]


@runtime_checkable
class FrozenModel(Protocol):
    """Read-only contract of the frozen segmentation backend.

    Implementations must be deterministic per (model identity, inputs) and
    tolerate concurrent invocations.
    """

    @property
    def dimension(self) -> int:
        """Embedding dimension d shared by text and visual features."""
        ...

    @property
    def resolution(self) -> tuple[int, int] | None:
        """Native input resolution, or None when any size is accepted."""
        ...

    @property
    def model_id(self) -> str:
        """Stable identity string recorded into bank metadata."""
        ...

    def dense_features(self, image: Image) -> np.ndarray:
        """Per-pixel visual features, shape (H, W, d)."""
        ...

    def encode_text(self, prompt: str) -> np.ndarray:
        """Embed one prompt string into the shared space, shape (d,)."""
        ...

    def predict_masks(
        self, image: Image, queries: Sequence[np.ndarray]
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """One (binary mask, confidence map) pair per query embedding."""
        ...


def check_query_dims(queries: Sequence[np.ndarray], d: int) -> None:
    for i, q in enumerate(queries):
        arr = np.asarray(q)
        if arr.ndim != 1 or arr.shape[0] != d:
            raise DimMismatch(f"query {i} has shape {arr.shape}, expected ({d},)")
