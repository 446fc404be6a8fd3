"""The black-box boundary: scoring-oracle and feature-provider interfaces,
in-process synthetic implementations for testing, and wire adapters that
speak newline-delimited JSON to external model processes.

Protocol v1, one JSON document per line, UTF-8:

  request  {"v":1,"id":N,"op":"handshake"}
           {"v":1,"id":N,"op":"score","shape":[H,W,C],"dtype":"f32le","data":"<b64>"}
           {"v":1,"id":N,"op":"features","shape":[H,W,C],"dtype":"f32le","data":"<b64>"}
  response {"id":N,"ok":true,"class_count":c,"score_kind":"...","feature_dims":[[h,w,c],...]|null}
           {"id":N,"ok":true,"scores":[...]}
           {"id":N,"ok":true,"levels":[{"shape":[h,w,c],"data":"<b64>"},x4]}
           {"id":N,"ok":false,"error":"..."}

A batch is a run of request lines; responses are matched back by id.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import subprocess
from abc import ABC, abstractmethod

import numpy as np

from .attention import FeatureLevels
from .errors import ContractError, OracleError, ProtocolError, TransportError
from .grid import ImageTensor, resize_bilinear
from .masking import RegionMask

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 30.0


class ScoringOracle(ABC):
    """Black-box classifier: a batch of images in, one score vector each out."""

    class_count: int
    score_kind: str  # "probabilities" or "logits"

    @abstractmethod
    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        """Score a batch; output list length equals input length."""


class FeatureProvider(ABC):
    """Produces four multi-level feature grids for an image."""

    @abstractmethod
    def features(self, image: ImageTensor) -> FeatureLevels:
        ...


# ---------------------------------------------------------------------------
# Synthetic in-process oracles
# ---------------------------------------------------------------------------


class SyntheticRegionScorer(ScoringOracle):
    """Two-class scorer with a hidden ground-truth region.

    score[0] is the mean intensity over the target pixels of the input (so
    masking target pixels away can only lower it), score[1] = 1 - score[0].
    A desk-scale stand-in for a real classifier with a known object.
    """

    def __init__(self, target: RegionMask):
        if target.empty:
            raise ValueError("target region must be nonempty")
        self.target = target
        self.class_count = 2
        self.score_kind = "probabilities"
        self._rows, self._cols = np.nonzero(target.grid)

    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        out = []
        for img in images:
            if (img.height, img.width) != self.target.grid.shape:
                raise ValueError("image dimensions do not match the target region")
            s0 = float(img.data[self._rows, self._cols, :].mean())
            out.append(np.array([s0, 1.0 - s0]))
        return out


class LinearProbeScorer(ScoringOracle):
    """score[0] = sum over pixels of weight * intensity (channel mean).

    Linear in the input, which makes the aggregation formula analytically
    tractable: score(masked image) is exactly the sum of weights over the
    visible pixels times their intensities.
    """

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weight image must be 2-D")
        self.class_count = 1
        self.score_kind = "logits"

    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        out = []
        for img in images:
            if (img.height, img.width) != self.weights.shape:
                raise ValueError("image dimensions do not match the weight image")
            out.append(np.array([float((self.weights * img.data.mean(axis=2)).sum())]))
        return out


class MeanIntensityScorer(ScoringOracle):
    """score = [mean intensity, 1 - mean intensity]; the simplest echo oracle."""

    def __init__(self):
        self.class_count = 2
        self.score_kind = "probabilities"

    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        out = []
        for img in images:
            m = float(img.data.mean())
            out.append(np.array([m, 1.0 - m]))
        return out


class ConstantScorer(ScoringOracle):
    """Returns the same score vector for every input (degenerate-case tests)."""

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=np.float64)
        self.class_count = self.vector.size
        self.score_kind = "logits"

    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        return [self.vector.copy() for _ in images]


PYRAMID_FACTORS = (4, 8, 16, 32)


class SyntheticPyramidProvider(FeatureProvider):
    """Parameter-free features: the image downsampled to 1/4, 1/8, 1/16 and
    1/32 of its side, channels preserved."""

    def features(self, image: ImageTensor) -> FeatureLevels:
        levels = []
        for f in PYRAMID_FACTORS:
            h = max(1, round(image.height / f))
            w = max(1, round(image.width / f))
            levels.append(resize_bilinear(image, h, w).data)
        return FeatureLevels(tuple(levels))


# ---------------------------------------------------------------------------
# Wire codec
# ---------------------------------------------------------------------------


def encode_array(arr: np.ndarray) -> dict:
    """Base64 little-endian float32 payload with an explicit shape field."""
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
        raise ProtocolError(f"payload has {len(raw)} bytes, shape {shape} needs {4 * n}")
    return np.frombuffer(raw, dtype="<f4", count=n).astype(np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class SubprocessTransport:
    """NDJSON over a child process's stdin/stdout. Strictly serial."""

    capacity = 1

    def __init__(self, command: list[str], timeout: float = DEFAULT_TIMEOUT_S):
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as e:
            raise TransportError(f"cannot spawn {command!r}: {e}") from e
        self._buf = b""

    def _read_line(self) -> bytes:
        while b"\n" not in self._buf:
            ready, _, _ = select.select([self.proc.stdout], [], [], self.timeout)
            if not ready:
                raise TransportError(f"endpoint timed out after {self.timeout}s")
            # bufsize=0 makes stdout a raw FileIO; read() returns what is
            # available (select guarantees data or EOF).
            chunk = self.proc.stdout.read(65536)
            if not chunk:
                code = self.proc.poll()
                raise TransportError(f"endpoint closed its stream (exit code {code})")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def round_trip(self, requests: list[dict]) -> list[dict]:
        payload = b"".join(json.dumps(r).encode() + b"\n" for r in requests)
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"endpoint pipe broken: {e}") from e
        responses = []
        for _ in requests:
            line = self._read_line()
            try:
                responses.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ProtocolError(f"malformed response line: {line[:200]!r}") from e
        return responses

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()


class HttpTransport:
    """The same NDJSON messages POSTed to a long-lived model server."""

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT_S, max_inflight: int = 1):
        self.url = url
        self.timeout = timeout
        self.capacity = max_inflight
        import requests

        self._session = requests.Session()
        self._requests = requests

    def round_trip(self, requests_: list[dict]) -> list[dict]:
        body = b"".join(json.dumps(r).encode() + b"\n" for r in requests_)
        try:
            resp = self._session.post(
                self.url,
                data=body,
                headers={"Content-Type": "application/x-ndjson"},
                timeout=self.timeout,
            )
        except self._requests.RequestException as e:
            raise TransportError(f"HTTP request to {self.url} failed: {e}") from e
        if resp.status_code != 200:
            raise TransportError(f"HTTP status {resp.status_code} from {self.url}")
        lines = [ln for ln in resp.content.split(b"\n") if ln.strip()]
        if len(lines) != len(requests_):
            raise ProtocolError(
                f"expected {len(requests_)} response lines, got {len(lines)}"
            )
        out = []
        for ln in lines:
            try:
                out.append(json.loads(ln))
            except json.JSONDecodeError as e:
                raise ProtocolError(f"malformed response line: {ln[:200]!r}") from e
        return out

    def close(self):
        self._session.close()


# ---------------------------------------------------------------------------
# Wire adapter (client side)
# ---------------------------------------------------------------------------


class WireOracle(ScoringOracle, FeatureProvider):
    """Scoring oracle and feature provider backed by a wire endpoint.

    Performs the handshake on construction and enforces the declared
    capabilities on every subsequent response.
    """

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 0
        caps = self._handshake()
        self.class_count = caps["class_count"]
        self.score_kind = caps["score_kind"]
        self.feature_dims = caps.get("feature_dims")
        self.capabilities = caps

    @property
    def capacity(self) -> int:
        return self.transport.capacity

    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _exchange(self, requests: list[dict]) -> list[dict]:
        responses = self.transport.round_trip(requests)
        by_id = {}
        for r in responses:
            if not isinstance(r, dict) or "id" not in r or "ok" not in r:
                raise ProtocolError(f"response missing id/ok fields: {r!r}")
            by_id[r["id"]] = r
        ordered = []
        for req in requests:
            r = by_id.get(req["id"])
            if r is None:
                raise ProtocolError(f"no response for request id {req['id']}")
            if "v" in r and r["v"] != PROTOCOL_VERSION:
                raise ProtocolError(f"protocol version mismatch: {r['v']}")
            if not r["ok"]:
                raise OracleError(f"endpoint error: {r.get('error', 'unspecified')}")
            ordered.append(r)
        return ordered

    def _handshake(self) -> dict:
        req = {"v": PROTOCOL_VERSION, "id": self._take_id(), "op": "handshake"}
        resp = self._exchange([req])[0]
        if "class_count" not in resp or "score_kind" not in resp:
            raise ProtocolError("handshake response missing class_count or score_kind")
        dims = resp.get("feature_dims")
        if dims is not None:
            if len(dims) != 4:
                raise ProtocolError(f"handshake declared {len(dims)} feature levels")
            dims = [tuple(int(x) for x in d) for d in dims]
        return {
            "class_count": int(resp["class_count"]),
            "score_kind": str(resp["score_kind"]),
            "feature_dims": dims,
        }

    def batch(self, images: list[ImageTensor]) -> list[np.ndarray]:
        if not images:
            return []
        requests = []
        for img in images:
            req = {"v": PROTOCOL_VERSION, "id": self._take_id(), "op": "score"}
            req.update(encode_array(img.data))
            requests.append(req)
        out = []
        for resp in self._exchange(requests):
            scores = resp.get("scores")
            if scores is None:
                raise ProtocolError("score response missing 'scores'")
            vec = np.asarray(scores, dtype=np.float64)
            if vec.shape != (self.class_count,):
                raise ContractError(
                    f"endpoint returned {vec.size} scores, handshake declared {self.class_count}"
                )
            out.append(vec)
        return out

    def features(self, image: ImageTensor) -> FeatureLevels:
        req = {"v": PROTOCOL_VERSION, "id": self._take_id(), "op": "features"}
        req.update(encode_array(image.data))
        resp = self._exchange([req])[0]
        levels = resp.get("levels")
        if levels is None:
            raise ProtocolError("features response missing 'levels'")
        if len(levels) != 4:
            raise ContractError(f"endpoint returned {len(levels)} feature levels, need 4")
        arrays = []
        for i, lv in enumerate(levels):
            if "shape" not in lv or "data" not in lv:
                raise ProtocolError(f"level {i} missing shape or data")
            shape = tuple(int(x) for x in lv["shape"])
            if self.feature_dims is not None and shape != self.feature_dims[i]:
                raise ContractError(
                    f"level {i} dims {shape} do not match handshake {self.feature_dims[i]}"
                )
            arrays.append(decode_array(shape, lv["data"]))
        return FeatureLevels(tuple(arrays))

    def close(self):
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# Descriptor resolution and conformance checking
# ---------------------------------------------------------------------------


def _builtin_scorer(name: str, h: int, w: int) -> ScoringOracle:
    parts = name.split(":", 1)
    kind = parts[0]
    if kind == "region":
        if len(parts) == 2:
            y, x, side = (int(v) for v in parts[1].split(","))
        else:
            side = max(1, min(h, w) // 3)
            y, x = (h - side) // 2, (w - side) // 2
        grid = np.zeros((h, w), dtype=np.uint8)
        grid[y : y + side, x : x + side] = 1
        return SyntheticRegionScorer(RegionMask(grid))
    if kind == "mean":
        return MeanIntensityScorer()
    raise ValueError(f"unknown builtin oracle {name!r}")


def resolve_oracle(descriptor: str, h: int, w: int, timeout: float = DEFAULT_TIMEOUT_S):
    """Build a scoring oracle from a builtin:/exec:/http: descriptor."""
    if descriptor.startswith("builtin:"):
        return _builtin_scorer(descriptor[len("builtin:") :], h, w)
    if descriptor.startswith("exec:"):
        return WireOracle(SubprocessTransport(shlex.split(descriptor[len("exec:") :]), timeout))
    if descriptor.startswith("http:") or descriptor.startswith("https:"):
        return WireOracle(HttpTransport(descriptor, timeout))
    raise ValueError(f"oracle descriptor must start with builtin:/exec:/http:, got {descriptor!r}")


def resolve_features(descriptor: str, oracle=None, timeout: float = DEFAULT_TIMEOUT_S):
    """Build a feature provider; 'same' reuses the oracle's connection."""
    if descriptor == "same":
        if not isinstance(oracle, FeatureProvider):
            raise ValueError("--features same requires a wire oracle endpoint")
        return oracle
    if descriptor == "builtin:pyramid":
        return SyntheticPyramidProvider()
    if descriptor.startswith("exec:"):
        return WireOracle(SubprocessTransport(shlex.split(descriptor[len("exec:") :]), timeout))
    if descriptor.startswith("http:") or descriptor.startswith("https:"):
        return WireOracle(HttpTransport(descriptor, timeout))
    raise ValueError(f"unknown features descriptor {descriptor!r}")


def verify_protocol(adapter: WireOracle, side: int = 8) -> dict:
    """Exercise an endpoint's protocol surface and return its capabilities.

    Scores a three-image batch (checking order preservation by id) and, if
    the endpoint serves features, requests one level set. Raises the usual
    Transport/Protocol/Contract errors on any violation.
    """
    rng = np.random.default_rng(0)
    imgs = [
        ImageTensor(rng.random((side, side, 1), dtype=np.float32).astype(np.float64))
        for _ in range(3)
    ]
    scores = adapter.batch(imgs)
    if len(scores) != 3:
        raise ProtocolError("batch of 3 produced a different number of responses")
    for vec in scores:
        if vec.shape != (adapter.class_count,):
            raise ContractError("score vector length drifted from handshake")
    report = dict(adapter.capabilities)
    try:
        levels = adapter.features(imgs[0])
        report["features_ok"] = len(levels.levels) == 4
    except OracleError as e:
        # A plain ok:false means "features unsupported"; transport, protocol
        # and contract violations still propagate.
        if type(e) is not OracleError:
            raise
        report["features_ok"] = False
    return report
