"""Protocol v1 server loop over stdio or HTTP.

Requests and responses are newline-delimited JSON documents; image and
feature payloads are base64 little-endian float32, row-major, with explicit
shapes. Malformed requests get an ok:false response and the process stays
alive; only a model-load failure at startup exits nonzero.

Pending score requests are drained greedily (up to the batch cap) so bursts
from the client share one forward pass; responses keep request order.
"""

from __future__ import annotations

import base64
import json
import select
import sys

import numpy as np

from .model import FEATURE_DIMS, ClassifierBridge

PROTOCOL_VERSION = 1


def encode_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(a.shape),
        "dtype": "f32le",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(shape, data: str) -> np.ndarray:
    n = int(np.prod(shape))
    raw = base64.b64decode(data)
    if len(raw) != 4 * n:
        raise ValueError(f"payload has {len(raw)} bytes, shape {shape} needs {4 * n}")
    return np.frombuffer(raw, dtype="<f4", count=n).reshape(shape)


class BridgeServer:
    def __init__(self, bridge: ClassifierBridge, batch_cap: int = 256):
        if batch_cap < 1:
            raise ValueError("batch cap must be >= 1")
        self.bridge = bridge
        self.batch_cap = batch_cap

    def handshake_response(self, rid) -> dict:
        return {
            "id": rid,
            "ok": True,
            "class_count": self.bridge.class_count,
            "score_kind": self.bridge.score_kind,
            "feature_dims": FEATURE_DIMS,
        }

    def handle(self, req: dict) -> dict:
        rid = req.get("id", -1)
        try:
            if req.get("v") != PROTOCOL_VERSION:
                return {"id": rid, "ok": False, "error": "unsupported protocol version"}
            op = req.get("op")
            if op == "handshake":
                return self.handshake_response(rid)
            if op == "score":
                arr = decode_array(req["shape"], req["data"])
                scores = self.bridge.score([arr])[0]
                return {"id": rid, "ok": True, "scores": scores}
            if op == "features":
                arr = decode_array(req["shape"], req["data"])
                levels = self.bridge.features(arr)
                return {"id": rid, "ok": True, "levels": [encode_array(lv) for lv in levels]}
            return {"id": rid, "ok": False, "error": f"unknown op {op!r}"}
        except Exception as e:
            return {"id": rid, "ok": False, "error": f"{type(e).__name__}: {e}"}

    def handle_score_batch(self, reqs: list[dict]) -> list[dict]:
        """One forward pass for a burst of score requests."""
        try:
            arrays = [decode_array(r["shape"], r["data"]) for r in reqs]
            all_scores = self.bridge.score(arrays)
            return [
                {"id": r.get("id", -1), "ok": True, "scores": s}
                for r, s in zip(reqs, all_scores)
            ]
        except Exception:
            # Fall back to per-request handling so one bad payload cannot
            # poison its neighbors in the burst.
            return [self.handle(r) for r in reqs]

    # -- stdio -------------------------------------------------------------

    def serve_stdio(self) -> None:
        stdin = sys.stdin
        pending: list[dict] = []
        while True:
            line = stdin.readline()
            if not line:
                break
            if not line.strip():
                continue
            try:
                req = json.loads(line)
            except json.JSONDecodeError as e:
                self._emit({"id": -1, "ok": False, "error": f"malformed request: {e}"})
                continue
            if req.get("op") == "score" and req.get("v") == PROTOCOL_VERSION:
                pending.append(req)
                # Keep draining while more input is already buffered.
                if len(pending) < self.batch_cap and self._stdin_ready():
                    continue
                for resp in self.handle_score_batch(pending):
                    self._emit(resp)
                pending = []
            else:
                self._emit(self.handle(req))

    @staticmethod
    def _stdin_ready() -> bool:
        ready, _, _ = select.select([sys.stdin], [], [], 0.0)
        return bool(ready)

    @staticmethod
    def _emit(resp: dict) -> None:
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()

    # -- HTTP --------------------------------------------------------------

    def serve_http(self, host: str, port: int) -> None:
        from http.server import BaseHTTPRequestHandler, HTTPServer

        server_self = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length).decode("utf-8")
                responses = []
                for ln in body.split("\n"):
                    if not ln.strip():
                        continue
                    try:
                        req = json.loads(ln)
                    except json.JSONDecodeError as e:
                        responses.append(
                            {"id": -1, "ok": False, "error": f"malformed request: {e}"}
                        )
                        continue
                    responses.append(server_self.handle(req))
                payload = ("\n".join(json.dumps(r) for r in responses) + "\n").encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        HTTPServer((host, port), Handler).serve_forever()
