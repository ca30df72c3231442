"""Binary persistence of the anchor matrix plus class table and metadata.

Layout of a .cbnk file, all integers little-endian:

    magic            4 bytes  b"CBNK"
    format version   u32      currently 1
    class count |C|  u32
    dimension d      u32
    flags            u32      reserved, written as 0
    class names      per name: u16 length + UTF-8 bytes
    anchor matrix    |C| * d float32, row-major
    metadata         u32 length + UTF-8 JSON
    checksum         u32      CRC32 over every preceding byte

Anchors are narrowed to float32 on disk; construction stays float64. The
checksum guards against corruption, not tampering. Provenance lives in a
JSON sidecar next to the bank file, keeping the hot-path artifact minimal.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    BadMagic,
    BankFormatError,
    CrcMismatch,
    DuplicateClassName,
    TrailingBytes,
    TruncatedFile,
    UnsupportedVersion,
)

MAGIC = b"CBNK"
FORMAT_VERSION = 1
SIDECAR_SUFFIX = ".meta.json"

_MAX_COUNT = 16_777_216  # parse guard against absurd allocations on fuzz input


@dataclass
class ConceptBank:
    """Calibrated anchors: one row per class plus build metadata."""

    class_names: list[str]
    anchors: np.ndarray  # (|C|, d) float64 in memory
    metric: str = "dice"
    tau: float = 0.1
    k: int | None = 10
    model_id: str = ""
    timestamp: str = ""
    flags: int = 0
    raw_meta: str | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return int(self.anchors.shape[1])

    def validate(self) -> None:
        if len(self.class_names) == 0:
            raise ValueError("a bank must hold at least one class")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        if self.anchors.ndim != 2 or self.anchors.shape[0] != len(self.class_names):
            raise ValueError(
                f"anchor matrix {self.anchors.shape} does not match {len(self.class_names)} classes"
            )
        if self.anchors.shape[1] == 0:
            raise ValueError("dimension must be positive")
        if not np.all(np.isfinite(self.anchors)):
            raise ValueError("anchors contain non-finite entries")

    def meta_json(self) -> str:
        if self.raw_meta is not None:
            return self.raw_meta
        meta = {
            "K": self.k,
            "metric": self.metric,
            "model_id": self.model_id,
            "tau": self.tau,
            "timestamp": self.timestamp,
        }
        return json.dumps(meta, sort_keys=True, separators=(",", ":"))


def serialize_bank(bank: ConceptBank) -> bytes:
    """Encode a valid bank into the .cbnk byte layout."""
    bank.validate()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<III I", FORMAT_VERSION, len(bank.class_names), bank.dim, bank.flags)
    for name in bank.class_names:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"class name too long: {len(encoded)} bytes")
        out += struct.pack("<H", len(encoded))
        out += encoded
    out += np.ascontiguousarray(bank.anchors, dtype="<f4").tobytes()
    meta = bank.meta_json().encode("utf-8")
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def deserialize_bank(data: bytes) -> ConceptBank:
    """Parse bytes into a bank, verifying magic, version, and checksum.

    Never crashes on arbitrary input: every malformation maps to a
    BankFormatError subclass.
    """
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"bank format version {version} is not supported")
    count = r.u32()
    dim = r.u32()
    flags = r.u32()
    if count == 0:
        raise BankFormatError("bank holds zero classes")
    if dim == 0:
        raise BankFormatError("bank dimension is zero")
    if count > _MAX_COUNT or dim > _MAX_COUNT or 4 * count * dim > len(data):
        raise TruncatedFile("declared matrix exceeds file size")

    names = []
    for _ in range(count):
        length = r.u16()
        raw = r.take(length)
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise BankFormatError(f"class name is not valid UTF-8: {exc}") from exc
    if len(set(names)) != len(names):
        raise DuplicateClassName("class-name table contains duplicates")

    matrix = np.frombuffer(r.take(4 * count * dim), dtype="<f4").reshape(count, dim)
    meta_len = r.u32()
    meta_raw = r.take(meta_len)
    try:
        meta_text = meta_raw.decode("utf-8")
        meta = json.loads(meta_text)
        if not isinstance(meta, dict):
            raise BankFormatError("metadata JSON is not an object")
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BankFormatError(f"metadata block is not valid JSON: {exc}") from exc

    crc_offset = r.pos
    stored = r.u32()
    computed = zlib.crc32(data[:crc_offset]) & 0xFFFFFFFF
    if stored != computed:
        raise CrcMismatch(f"stored {stored:#010x}, computed {computed:#010x}")
    if r.pos != len(data):
        raise TrailingBytes(f"{len(data) - r.pos} bytes past the checksum")

    k = meta.get("K")
    return ConceptBank(
        class_names=names,
        anchors=matrix.astype(np.float64),
        metric=str(meta.get("metric", "dice")),
        tau=float(meta.get("tau", 0.1)),
        k=None if k is None else int(k),
        model_id=str(meta.get("model_id", "")),
        timestamp=str(meta.get("timestamp", "")),
        flags=flags,
        raw_meta=meta_text,
    )


def save_bank(bank: ConceptBank, path) -> None:
    """Serialize atomically: write a temp file, then rename over the target."""
    payload = serialize_bank(bank)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_bank(path) -> ConceptBank:
    with open(path, "rb") as fh:
        return deserialize_bank(fh.read())


def sidecar_path(bank_path) -> str:
    return f"{bank_path}{SIDECAR_SUFFIX}"


def save_sidecar(report_dict: dict, bank_path) -> None:
    with open(sidecar_path(bank_path), "w", encoding="utf-8") as fh:
        json.dump(report_dict, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_sidecar(bank_path) -> dict | None:
    path = sidecar_path(bank_path)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
