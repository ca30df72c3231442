"""Remote frozen-model client over the framed wire protocol.

One connection multiplexes interleaved in-flight requests by correlation id:
a reader thread parses response frames and hands each to the waiting caller,
so concurrent pipeline workers may share a client or open one each. TCP and
stdio (spawned subprocess) transports are supported.
"""
from __future__ import annotations

import itertools
import socket
import subprocess
import threading
from typing import Sequence

import numpy as np

from ..errors import (
    BackendTimeout,
    BackendUnavailable,
    ProtocolViolation,
    UnsupportedVersion,
)
from .base import Image, check_query_dims
from . import wire


class _Transport:
    def read_exact(self, n: int) -> bytes:
        raise NotImplementedError

    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class _TcpTransport(_Transport):
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BackendUnavailable(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(timeout)

    def read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout as exc:
                raise BackendTimeout(f"no data within the deadline ({n} bytes pending)") from exc
            except OSError as exc:
                raise BackendUnavailable(f"socket error: {exc}") from exc
            if not chunk:
                raise BackendUnavailable("connection closed by peer")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise BackendUnavailable(f"socket error: {exc}") from exc

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _StdioTransport(_Transport):
    def __init__(self, command: Sequence[str]):
        try:
            self._proc = subprocess.Popen(
                list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise BackendUnavailable(f"cannot spawn {command!r}: {exc}") from exc

    def read_exact(self, n: int) -> bytes:
        data = self._proc.stdout.read(n)
        if data is None or len(data) < n:
            raise BackendUnavailable("adapter process closed its stdout")
        return data

    def write(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BackendUnavailable(f"adapter process pipe error: {exc}") from exc

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class RemoteModel:
    """FrozenModel implementation backed by a protocol server."""

    def __init__(self, transport: _Transport, timeout: float = 30.0):
        self._transport = transport
        self._timeout = timeout
        self._ids = itertools.count(1)
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._reader_error: Exception | None = None
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        try:
            result = self._call("handshake", {"version": wire.PROTOCOL_VERSION})
            version = result.get("version")
            if version != wire.PROTOCOL_VERSION:
                raise UnsupportedVersion(f"server speaks version {version!r}")
            self._dimension = int(result["d"])
            res = result.get("resolution")
            self._resolution = tuple(int(x) for x in res) if res else None
            self._model_id = str(result.get("model_id", "remote"))
        except Exception:
            self.close()
            raise

    @classmethod
    def connect_tcp(cls, host: str, port: int, timeout: float = 30.0) -> "RemoteModel":
        return cls(_TcpTransport(host, port, timeout), timeout)

    @classmethod
    def connect_stdio(cls, command: Sequence[str], timeout: float = 30.0) -> "RemoteModel":
        return cls(_StdioTransport(command), timeout)

    # --- FrozenModel surface -------------------------------------------------

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def resolution(self) -> tuple[int, int] | None:
        return self._resolution

    @property
    def model_id(self) -> str:
        return self._model_id

    def dense_features(self, image: Image) -> np.ndarray:
        result = self._call("dense_features", {"image": wire.image_to_wire(image)})
        feats = wire.wire_to_features(result["features"])
        if feats.shape[2] != self._dimension:
            raise ProtocolViolation(
                f"server returned dimension {feats.shape[2]}, handshake pinned {self._dimension}"
            )
        return feats

    def encode_text(self, prompt: str) -> np.ndarray:
        result = self._call("encode_text", {"prompt": prompt})
        vec = wire.wire_to_vector(result["vector"])
        if vec.shape[0] != self._dimension:
            raise ProtocolViolation(
                f"server returned dimension {vec.shape[0]}, handshake pinned {self._dimension}"
            )
        return vec

    def predict_masks(self, image: Image, queries):
        check_query_dims(queries, self._dimension)
        result = self._call(
            "predict_masks",
            {
                "image": wire.image_to_wire(image),
                "queries": [wire.vector_to_wire(q) for q in queries],
            },
        )
        outputs = result["outputs"]
        if len(outputs) != len(queries):
            raise ProtocolViolation(
                f"server returned {len(outputs)} outputs for {len(queries)} queries"
            )
        return [
            (wire.wire_to_mask(o["mask"]), wire.wire_to_confidence(o["confidence"]))
            for o in outputs
        ]

    # --- plumbing -------------------------------------------------------------

    def _read_loop(self) -> None:
        try:
            while True:
                frame = wire.read_frame(self._transport.read_exact)
                frame_id = frame.get("id")
                with self._pending_lock:
                    slot = self._pending.get(frame_id)
                if slot is None:
                    continue  # stale or unknown correlation id
                slot["frame"] = frame
                slot["event"].set()
        except Exception as exc:  # noqa: BLE001 - reader hands every failure to callers
            self._reader_error = exc
            with self._pending_lock:
                slots = list(self._pending.values())
            for slot in slots:
                slot["event"].set()

    def _call(self, method: str, params: dict) -> dict:
        if self._closed:
            raise BackendUnavailable("client is closed")
        frame_id = next(self._ids)
        slot = {"event": threading.Event(), "frame": None}
        with self._pending_lock:
            self._pending[frame_id] = slot
        try:
            payload = wire.encode_frame({"id": frame_id, "method": method, "params": params})
            with self._write_lock:
                self._transport.write(payload)
            if not slot["event"].wait(self._timeout):
                raise BackendTimeout(f"{method} did not answer within {self._timeout}s")
            if slot["frame"] is None:
                err = self._reader_error or BackendUnavailable("connection lost")
                raise err
            frame = slot["frame"]
        finally:
            with self._pending_lock:
                self._pending.pop(frame_id, None)
        if frame.get("ok") is True:
            result = frame.get("result")
            if not isinstance(result, dict):
                raise ProtocolViolation("response result must be an object")
            return result
        if frame.get("ok") is False:
            error = frame.get("error") or {}
            wire.raise_for_error(error if isinstance(error, dict) else {})
        raise ProtocolViolation("response frame carries no ok field")

    def close(self) -> None:
        self._closed = True
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
