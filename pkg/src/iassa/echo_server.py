"""Reference protocol server wrapping the in-process synthetic oracles.

Runs over stdio (the CI transport) or HTTP. Useful for exercising the wire
path end to end: the scores it returns are computed by exactly the same
code as the in-process oracles, so any disagreement is a transport bug.

    python -m iassa.echo_server --scorer mean
    python -m iassa.echo_server --scorer region --target 20,20,24 --transport http --port 8099
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .grid import ImageTensor
from .masking import RegionMask
from .oracle import (
    PROTOCOL_VERSION,
    MeanIntensityScorer,
    SyntheticPyramidProvider,
    SyntheticRegionScorer,
    decode_array,
    encode_array,
)


class EchoHandler:
    """Protocol v1 request handler over synthetic oracles."""

    def __init__(self, scorer, provider):
        self.scorer = scorer
        self.provider = provider

    def handle_line(self, line: str) -> dict:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            return {"id": -1, "ok": False, "error": f"malformed request: {e}"}
        rid = req.get("id", -1)
        try:
            if req.get("v") != PROTOCOL_VERSION:
                return {"id": rid, "ok": False, "error": "unsupported protocol version"}
            op = req.get("op")
            if op == "handshake":
                return {
                    "id": rid,
                    "ok": True,
                    "class_count": self.scorer.class_count,
                    "score_kind": self.scorer.score_kind,
                    "feature_dims": None,  # pyramid dims follow the input size
                }
            if op == "score":
                img = ImageTensor(decode_array(req["shape"], req["data"]))
                vec = self.scorer.batch([img])[0]
                return {"id": rid, "ok": True, "scores": [float(v) for v in vec]}
            if op == "features":
                img = ImageTensor(decode_array(req["shape"], req["data"]))
                levels = self.provider.features(img)
                return {
                    "id": rid,
                    "ok": True,
                    "levels": [encode_array(lv) for lv in levels.levels],
                }
            return {"id": rid, "ok": False, "error": f"unknown op {op!r}"}
        except Exception as e:  # stay alive; report per-request failures
            return {"id": rid, "ok": False, "error": f"{type(e).__name__}: {e}"}


def serve_stdio(handler: EchoHandler) -> None:
    for line in sys.stdin:
        if not line.strip():
            continue
        resp = handler.handle_line(line)
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


def serve_http(handler: EchoHandler, port: int) -> None:
    from http.server import BaseHTTPRequestHandler, HTTPServer

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8")
            out = []
            for line in body.split("\n"):
                if line.strip():
                    out.append(json.dumps(handler.handle_line(line)))
            payload = ("\n".join(out) + "\n").encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    HTTPServer(("127.0.0.1", port), Handler).serve_forever()


def build_handler(scorer_name: str, target: str | None) -> EchoHandler:
    if scorer_name == "mean":
        scorer = MeanIntensityScorer()
    elif scorer_name == "region":
        if not target:
            raise SystemExit("--scorer region requires --target y,x,side")
        y, x, side = (int(v) for v in target.split(","))
        # Target grid is materialized lazily per request shape.
        scorer = _LazyRegionScorer(y, x, side)
    else:
        raise SystemExit(f"unknown scorer {scorer_name!r}")
    return EchoHandler(scorer, SyntheticPyramidProvider())


class _LazyRegionScorer:
    """Region scorer that builds its target grid from each image's shape."""

    def __init__(self, y: int, x: int, side: int):
        self.y, self.x, self.side = y, x, side
        self.class_count = 2
        self.score_kind = "probabilities"
        self._cache: dict[tuple[int, int], SyntheticRegionScorer] = {}

    def batch(self, images):
        out = []
        for img in images:
            key = (img.height, img.width)
            if key not in self._cache:
                grid = np.zeros(key, dtype=np.uint8)
                grid[self.y : self.y + self.side, self.x : self.x + self.side] = 1
                self._cache[key] = SyntheticRegionScorer(RegionMask(grid))
            out.extend(self._cache[key].batch([img]))
        return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--scorer", default="mean", choices=["mean", "region"])
    parser.add_argument("--target", default=None, help="y,x,side for the region scorer")
    parser.add_argument("--transport", default="stdio", choices=["stdio", "http"])
    parser.add_argument("--port", type=int, default=8099)
    args = parser.parse_args(argv)
    handler = build_handler(args.scorer, args.target)
    if args.transport == "stdio":
        serve_stdio(handler)
    else:
        serve_http(handler, args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
