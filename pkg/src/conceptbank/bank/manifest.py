"""Dataset ingestion: support manifests, mask files, and label maps.

A support manifest is JSON lines, one record per instance:

    {"class": str, "image_path": str, "mask_path": str, "bbox": [x, y, w, h] | null}

Masks are single-channel PNG (nonzero = foreground) or RLE text. An RLE file
is two lines: "width height", then space-separated run lengths alternating
background/foreground in row-major order, starting with background.

Evaluation manifests are JSON lines of {"image_path": str, "gt_path": str};
ground truth is a single-channel PNG label map indexed against a palette file
{"classes": [...], "ignore_index": 255}.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..backend.base import GridImage, RasterImage, load_image
from .pipeline import SupportInstance

IGNORE_INDEX = 255


def save_mask_png(mask: np.ndarray, path) -> None:
    arr = (np.asarray(mask, dtype=bool).astype(np.uint8)) * 255
    PILImage.fromarray(arr, mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    with PILImage.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 0


def save_mask_rle(mask: np.ndarray, path) -> None:
    m = np.asarray(mask, dtype=bool)
    flat = m.reshape(-1)
    runs = []
    current = False  # runs start with background
    run = 0
    for bit in flat:
        if bit == current:
            run += 1
        else:
            runs.append(run)
            current = bit
            run = 1
    runs.append(run)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m.shape[1]} {m.shape[0]}\n")
        fh.write(" ".join(str(r) for r in runs))
        fh.write("\n")


def load_mask_rle(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        width, height = (int(x) for x in fh.readline().split())
        runs = [int(x) for x in fh.readline().split()]
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    if pos != width * height:
        raise ValueError(f"RLE runs cover {pos} pixels, expected {width * height}")
    return flat.reshape(height, width)


def load_mask(path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return load_mask_png(path)
    if suffix in (".rle", ".txt"):
        return load_mask_rle(path)
    raise ValueError(f"unsupported mask format: {path}")


def _crop(image, mask, bbox):
    x, y, w, h = (int(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    mask = mask[y : y + h, x : x + w]
    if isinstance(image, GridImage):
        image = GridImage(image_id=image.image_id, dirs=image.dirs[y : y + h, x : x + w],
                          view_tag=f"{x},{y},{w},{h}")
    else:
        image = RasterImage(pixels=image.pixels[y : y + h, x : x + w],
                            image_id=f"{image.image_id}[{x},{y},{w},{h}]")
    return image, mask


def load_support_manifest(path, base_dir=None) -> list[SupportInstance]:
    """Read a JSONL support manifest into instances, resolving relative paths
    against base_dir (defaults to the manifest's directory)."""
    root = Path(base_dir) if base_dir is not None else Path(path).parent
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            image = load_image(root / rec["image_path"])
            mask = load_mask(root / rec["mask_path"])
            bbox = rec.get("bbox")
            if bbox is not None:
                image, mask = _crop(image, mask, bbox)
            instances.append(
                SupportInstance(
                    class_name=str(rec["class"]),
                    image=image,
                    gt_mask=mask,
                    source_id=rec.get("id") or f"{rec['image_path']}#{lineno}",
                )
            )
    return instances


def write_support_manifest(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def load_eval_manifest(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def save_label_map_png(labels: np.ndarray, path) -> None:
    """Write an integer label map; the sentinel -1 becomes IGNORE_INDEX."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.max(initial=0) >= IGNORE_INDEX:
        raise ValueError(f"label indices must stay below {IGNORE_INDEX}")
    out = np.where(arr < 0, IGNORE_INDEX, arr).astype(np.uint8)
    PILImage.fromarray(out, mode="L").save(path)


def load_label_map_png(path) -> np.ndarray:
    with PILImage.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)


@dataclasses.dataclass
class Palette:
    classes: list[str]
    ignore_index: int = IGNORE_INDEX

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"classes": self.classes, "ignore_index": self.ignore_index}, fh, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "Palette":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return Palette(classes=list(payload["classes"]),
                       ignore_index=int(payload.get("ignore_index", IGNORE_INDEX)))
