"""Minimal in-test protocol server wrapping a FrozenModel over TCP.

Test scaffolding only: just enough server to exercise the remote client
against a live socket. The production adapter lives in its own package.
"""
from __future__ import annotations

import socket
import threading

from conceptbank.backend import wire


class ModelServer:
    def __init__(self, model):
        self.model = model
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn):
        def read_exact(n):
            chunks = []
            remaining = n
            while remaining:
                chunk = conn.recv(remaining)
                if not chunk:
                    raise ConnectionError("eof")
                chunks.append(chunk)
                remaining -= len(chunk)
            return b"".join(chunks)

        try:
            while True:
                frame = wire.read_frame(read_exact)
                response = self._handle(frame)
                conn.sendall(wire.encode_frame(response))
        except (ConnectionError, OSError):
            pass
        finally:
            conn.close()

    def _handle(self, frame):
        frame_id = frame.get("id")
        method = frame.get("method")
        params = frame.get("params") or {}
        try:
            if method == "handshake":
                if params.get("version") != wire.PROTOCOL_VERSION:
                    raise wire.UnsupportedVersion(f"version {params.get('version')!r}")
                result = {
                    "version": wire.PROTOCOL_VERSION,
                    "d": self.model.dimension,
                    "resolution": self.model.resolution,
                    "model_id": self.model.model_id,
                }
            elif method == "dense_features":
                feats = self.model.dense_features(wire.wire_to_image(params["image"]))
                result = {"features": wire.features_to_wire(feats)}
            elif method == "encode_text":
                result = {"vector": wire.vector_to_wire(self.model.encode_text(params["prompt"]))}
            elif method == "predict_masks":
                image = wire.wire_to_image(params["image"])
                queries = [wire.wire_to_vector(q) for q in params["queries"]]
                outputs = self.model.predict_masks(image, queries)
                result = {
                    "outputs": [
                        {"mask": wire.mask_to_wire(m), "confidence": wire.confidence_to_wire(c)}
                        for m, c in outputs
                    ]
                }
            else:
                raise wire.ProtocolViolation(f"unknown method {method!r}")
            return {"id": frame_id, "ok": True, "result": result}
        except Exception as exc:  # noqa: BLE001
            return {
                "id": frame_id,
                "ok": False,
                "error": {"code": wire.exception_code(exc), "msg": str(exc)},
            }

    def close(self):
        self._stop.set()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
