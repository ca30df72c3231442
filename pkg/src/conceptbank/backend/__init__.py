from .base import FrozenModel, GridImage, Image, RasterImage, load_image, resize_nearest
from .mock import MockModel, MockWorld

__all__ = [
    "FrozenModel",
    "GridImage",
    "RasterImage",
    "Image",
    "load_image",
    "resize_nearest",
    "MockModel",
    "MockWorld",
]
