"""Wire protocol: length-prefixed JSON frames and payload codecs.

A frame is a 4-byte little-endian unsigned payload length followed by a
UTF-8 JSON object. Requests carry {"id", "method", "params"}; responses
either {"id", "ok": true, "result"} or {"id", "ok": false, "error":
{"code", "msg"}}. Vectors travel as JSON number arrays (lossless for
float64); feature maps and confidence maps as base64 little-endian float32
with explicit width/height/d; masks as base64 bit-packed rows (MSB-first,
row-major, zero padding in the last byte). Grid-image payloads carry their
direction grids as base64 little-endian float64 so synthetic worlds survive
the round trip bit-exactly.
"""
from __future__ import annotations

import base64
import json
import struct

import numpy as np

from ..errors import (
    BackendTimeout,
    BackendUnavailable,
    DegenerateVector,
    DimMismatch,
    ProtocolViolation,
    UnknownPrompt,
    UnsupportedVersion,
)
from .base import GridImage, Image, RasterImage

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
METHODS = ("handshake", "dense_features", "encode_text", "predict_masks")

# stable error codes carried inside error frames
ERROR_CODE_TO_EXC = {
    "unsupported_version": UnsupportedVersion,
    "protocol_violation": ProtocolViolation,
    "unknown_prompt": UnknownPrompt,
    "dim_mismatch": DimMismatch,
    "degenerate_vector": DegenerateVector,
    "backend_unavailable": BackendUnavailable,
    "timeout": BackendTimeout,
}
EXC_TO_ERROR_CODE = {exc: code for code, exc in ERROR_CODE_TO_EXC.items()}


def exception_code(exc: BaseException) -> str:
    for klass, code in EXC_TO_ERROR_CODE.items():
        if isinstance(exc, klass):
            return code
    return "internal"


def raise_for_error(error_obj) -> None:
    code = str(error_obj.get("code", "internal"))
    msg = str(error_obj.get("msg", ""))
    exc_type = ERROR_CODE_TO_EXC.get(code, BackendUnavailable)
    raise exc_type(f"remote error [{code}]: {msg}")


def encode_frame(payload: dict) -> bytes:
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolViolation(f"frame of {len(body)} bytes exceeds the limit")
    return struct.pack("<I", len(body)) + body


def decode_frame_header(header: bytes) -> int:
    if len(header) != 4:
        raise ProtocolViolation("truncated frame header")
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolViolation(f"declared frame of {length} bytes exceeds the limit")
    return length


def decode_frame_body(body: bytes) -> dict:
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ProtocolViolation("frame body must be a JSON object")
    return payload


def read_frame(read_exact) -> dict:
    """Read one frame via a read_exact(n) -> bytes callable."""
    length = decode_frame_header(read_exact(4))
    return decode_frame_body(read_exact(length))


# --- payload codecs ---------------------------------------------------------

def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str, what: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except Exception as exc:
        raise ProtocolViolation(f"{what}: invalid base64: {exc}") from exc


def vector_to_wire(v: np.ndarray) -> list[float]:
    return [float(x) for x in np.asarray(v, dtype=np.float64)]


def wire_to_vector(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 1:
        raise ProtocolViolation(f"vector payload has shape {arr.shape}")
    return arr


def features_to_wire(arr: np.ndarray) -> dict:
    h, w, d = arr.shape
    return {
        "width": w,
        "height": h,
        "d": d,
        "data_b64": _b64(np.ascontiguousarray(arr, dtype="<f4").tobytes()),
    }


def wire_to_features(obj) -> np.ndarray:
    h, w, d = int(obj["height"]), int(obj["width"]), int(obj["d"])
    raw = _unb64(obj["data_b64"], "feature map")
    if len(raw) != 4 * h * w * d:
        raise ProtocolViolation(f"feature map payload holds {len(raw)} bytes, expected {4 * h * w * d}")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, d).astype(np.float64)


def confidence_to_wire(arr: np.ndarray) -> dict:
    h, w = arr.shape
    return {
        "width": w,
        "height": h,
        "data_b64": _b64(np.ascontiguousarray(arr, dtype="<f4").tobytes()),
    }


def wire_to_confidence(obj) -> np.ndarray:
    h, w = int(obj["height"]), int(obj["width"])
    raw = _unb64(obj["data_b64"], "confidence map")
    if len(raw) != 4 * h * w:
        raise ProtocolViolation(f"confidence payload holds {len(raw)} bytes, expected {4 * h * w}")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)


def mask_to_wire(mask: np.ndarray) -> dict:
    h, w = mask.shape
    packed = np.packbits(np.asarray(mask, dtype=bool).reshape(-1))
    return {"width": w, "height": h, "bits_b64": _b64(packed.tobytes())}


def wire_to_mask(obj) -> np.ndarray:
    h, w = int(obj["height"]), int(obj["width"])
    raw = _unb64(obj["bits_b64"], "mask")
    expected = (h * w + 7) // 8
    if len(raw) != expected:
        raise ProtocolViolation(f"mask payload holds {len(raw)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=h * w)
    return bits.astype(bool).reshape(h, w)


def image_to_wire(image: Image) -> dict:
    if isinstance(image, GridImage):
        h, w, d = image.dirs.shape
        return {
            "type": "feature_grid",
            "image_id": image.image_id,
            "view_tag": image.view_tag,
            "width": w,
            "height": h,
            "d": d,
            "dirs_b64": _b64(np.ascontiguousarray(image.dirs, dtype="<f8").tobytes()),
        }
    if isinstance(image, RasterImage):
        h, w, c = image.pixels.shape
        return {
            "type": "raster",
            "image_id": image.image_id,
            "width": w,
            "height": h,
            "channels": c,
            "pixels_b64": _b64(np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()),
        }
    raise ProtocolViolation(f"cannot encode image of type {type(image).__name__}")


def wire_to_image(obj) -> Image:
    kind = obj.get("type")
    if kind == "feature_grid":
        h, w, d = int(obj["height"]), int(obj["width"]), int(obj["d"])
        raw = _unb64(obj["dirs_b64"], "grid image")
        if len(raw) != 8 * h * w * d:
            raise ProtocolViolation(f"grid payload holds {len(raw)} bytes, expected {8 * h * w * d}")
        dirs = np.frombuffer(raw, dtype="<f8").reshape(h, w, d)
        return GridImage(image_id=int(obj["image_id"]), dirs=dirs,
                         view_tag=str(obj.get("view_tag", "")))
    if kind == "raster":
        h, w, c = int(obj["height"]), int(obj["width"]), int(obj["channels"])
        raw = _unb64(obj["pixels_b64"], "raster image")
        if len(raw) != h * w * c:
            raise ProtocolViolation(f"raster payload holds {len(raw)} bytes, expected {h * w * c}")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c)
        return RasterImage(pixels=pixels, image_id=str(obj.get("image_id", "")))
    raise ProtocolViolation(f"unknown image payload type {kind!r}")
