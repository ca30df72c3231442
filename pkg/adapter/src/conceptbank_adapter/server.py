"""Protocol server: answers handshake, dense_features, encode_text, and
predict_masks over length-prefixed JSON frames on TCP or stdio.

Malformed requests are answered with structured error frames and never take
the connection down; only an undecodable frame length (framing lost, no way
to resynchronize the byte stream) ends a connection, and even that is
answered first. Requests on one connection may be answered out of order in
principle; correlation ids are authoritative. The served model is read-only
throughout.
"""
from __future__ import annotations

import logging
import socket
import sys
import threading

from conceptbank.backend import wire
from conceptbank.errors import ProtocolViolation, UnsupportedVersion

log = logging.getLogger(__name__)


class _Session:
    """Per-connection protocol state machine."""

    def __init__(self, model):
        self.model = model
        self.handshaken = False

    def handle(self, frame: dict) -> dict:
        frame_id = frame.get("id")
        if not isinstance(frame_id, int):
            return _error_frame(-1, ProtocolViolation("request id must be an integer"))
        try:
            method = frame.get("method")
            params = frame.get("params")
            if params is None:
                params = {}
            if not isinstance(params, dict):
                raise ProtocolViolation("params must be an object")
            if method == "handshake":
                result = self._handshake(params)
            elif method not in wire.METHODS:
                raise ProtocolViolation(f"unknown method {method!r}")
            elif not self.handshaken:
                raise ProtocolViolation("handshake required before any other method")
            elif method == "dense_features":
                feats = self.model.dense_features(wire.wire_to_image(params["image"]))
                result = {"features": wire.features_to_wire(feats)}
            elif method == "encode_text":
                prompt = params.get("prompt")
                if not isinstance(prompt, str):
                    raise ProtocolViolation("encode_text needs a string prompt")
                result = {"vector": wire.vector_to_wire(self.model.encode_text(prompt))}
            else:  # predict_masks
                image = wire.wire_to_image(params["image"])
                queries = [wire.wire_to_vector(q) for q in params.get("queries", [])]
                outputs = self.model.predict_masks(image, queries)
                result = {
                    "outputs": [
                        {"mask": wire.mask_to_wire(m), "confidence": wire.confidence_to_wire(c)}
                        for m, c in outputs
                    ]
                }
            return {"id": frame_id, "ok": True, "result": result}
        except KeyError as exc:
            return _error_frame(frame_id, ProtocolViolation(f"missing param {exc}"))
        except Exception as exc:  # noqa: BLE001 - every failure becomes an error frame
            return _error_frame(frame_id, exc)

    def _handshake(self, params: dict) -> dict:
        version = params.get("version")
        if version != wire.PROTOCOL_VERSION:
            raise UnsupportedVersion(
                f"protocol version {version!r} unsupported, this server speaks {wire.PROTOCOL_VERSION}"
            )
        self.handshaken = True
        return {
            "version": wire.PROTOCOL_VERSION,
            "d": self.model.dimension,
            "resolution": self.model.resolution,
            "model_id": self.model.model_id,
        }


def _error_frame(frame_id: int, exc: Exception) -> dict:
    return {
        "id": frame_id,
        "ok": False,
        "error": {"code": wire.exception_code(exc), "msg": str(exc)},
    }


def serve_stream(model, read_exact, write) -> None:
    """Run one session over blocking read_exact(n)/write(bytes) callables."""
    session = _Session(model)
    while True:
        try:
            header = read_exact(4)
        except EOFError:
            return
        try:
            length = wire.decode_frame_header(header)
        except ProtocolViolation as exc:
            # framing is lost; answer once, then give up on this stream
            write(wire.encode_frame(_error_frame(-1, exc)))
            return
        try:
            body = read_exact(length)
        except EOFError:
            return
        try:
            frame = wire.decode_frame_body(body)
        except ProtocolViolation as exc:
            write(wire.encode_frame(_error_frame(-1, exc)))
            continue  # framing intact; keep serving
        write(wire.encode_frame(session.handle(frame)))


class TcpServer:
    """Threaded TCP front end; one session per connection."""

    def __init__(self, model, host: str = "127.0.0.1", port: int = 0):
        self.model = model
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(16)
        self.host, self.port = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "TcpServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._accept_loop()

    def _accept_loop(self) -> None:
        log.info("serving on %s:%d", self.host, self.port)
        while not self._stop.is_set():
            try:
                conn, peer = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        def read_exact(n: int) -> bytes:
            chunks = []
            remaining = n
            while remaining:
                chunk = conn.recv(remaining)
                if not chunk:
                    raise EOFError
                chunks.append(chunk)
                remaining -= len(chunk)
            return b"".join(chunks)

        write_lock = threading.Lock()

        def write(data: bytes) -> None:
            with write_lock:
                conn.sendall(data)

        try:
            serve_stream(self.model, read_exact, write)
        except OSError:
            pass
        finally:
            conn.close()

    def close(self) -> None:
        self._stop.set()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_stdio(model, stdin=None, stdout=None) -> None:
    """Serve one session over binary stdio pipes (for remote:stdio clients)."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer

    def read_exact(n: int) -> bytes:
        data = stdin.read(n)
        if data is None or len(data) < n:
            raise EOFError
        return data

    def write(data: bytes) -> None:
        stdout.write(data)
        stdout.flush()

    serve_stream(model, read_exact, write)
