import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from iassa.errors import ContractError, ProtocolError, TransportError
from iassa.grid import ImageTensor
from iassa.masking import RegionMask
from iassa.oracle import (
    HttpTransport,
    LinearProbeScorer,
    MeanIntensityScorer,
    SubprocessTransport,
    SyntheticPyramidProvider,
    SyntheticRegionScorer,
    WireOracle,
    decode_array,
    encode_array,
    resolve_oracle,
    verify_protocol,
)

FIXTURES = Path(__file__).parent / "fixtures"
ECHO = [sys.executable, "-m", "iassa.echo_server"]


def _misbehaving(mode):
    return [sys.executable, str(FIXTURES / "misbehaving_server.py"), mode]


def _f32_image(seed, h=8, w=8, c=1):
    # Values exactly representable in float32, so the wire round trip is lossless.
    rng = np.random.default_rng(seed)
    return ImageTensor(rng.random((h, w, c), dtype=np.float32).astype(np.float64))


# ---------------------------------------------------------------------------
# Synthetic oracles
# ---------------------------------------------------------------------------


def test_region_scorer_monotone_in_target_coverage():
    grid = np.zeros((6, 6), dtype=np.uint8)
    grid[2:5, 2:5] = 1
    scorer = SyntheticRegionScorer(RegionMask(grid))
    img = np.ones((6, 6, 1))
    partial = img.copy()
    partial[3:5, :, :] = 0.0  # hide part of the target
    s_full = scorer.batch([ImageTensor(img)])[0][0]
    s_part = scorer.batch([ImageTensor(partial)])[0][0]
    assert s_full >= s_part
    assert s_full == 1.0


def test_linear_probe_closed_form():
    rng = np.random.default_rng(0)
    w = rng.random((4, 4))
    scorer = LinearProbeScorer(w)
    img = rng.random((4, 4, 1))
    mask = (rng.random((4, 4)) > 0.5).astype(np.float64)
    masked = ImageTensor(img * mask[:, :, None])
    got = scorer.batch([masked])[0][0]
    want = (w * img[:, :, 0] * mask).sum()
    assert got == pytest.approx(want, abs=1e-12)


def test_pyramid_provider_level_dims():
    img = ImageTensor(np.random.default_rng(1).random((64, 64, 3)))
    levels = SyntheticPyramidProvider().features(img)
    dims = [lv.shape for lv in levels.levels]
    assert dims == [(16, 16, 3), (8, 8, 3), (4, 4, 3), (2, 2, 3)]


def test_codec_round_trip():
    rng = np.random.default_rng(2)
    arr = rng.random((3, 4, 2), dtype=np.float32).astype(np.float64)
    payload = encode_array(arr)
    back = decode_array(payload["shape"], payload["data"])
    np.testing.assert_array_equal(back, arr)


# ---------------------------------------------------------------------------
# Echo server over subprocess
# ---------------------------------------------------------------------------


def test_echo_scores_match_in_process():
    img = _f32_image(3)
    with WireOracle(SubprocessTransport(ECHO + ["--scorer", "mean"])) as wire:
        assert wire.class_count == 2
        assert wire.score_kind == "probabilities"
        got = wire.batch([img])[0]
    want = MeanIntensityScorer().batch([img])[0]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_echo_batch_order_preserved():
    imgs = [_f32_image(i) for i in range(3)]
    with WireOracle(SubprocessTransport(ECHO)) as wire:
        got = wire.batch(imgs)
    want = MeanIntensityScorer().batch(imgs)
    assert len(got) == 3
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, atol=1e-6)


def test_echo_features_match_pyramid_provider():
    img = _f32_image(4, 16, 16)
    with WireOracle(SubprocessTransport(ECHO)) as wire:
        levels = wire.features(img)
    want = SyntheticPyramidProvider().features(img)
    for got_lv, want_lv in zip(levels.levels, want.levels):
        np.testing.assert_allclose(got_lv, want_lv, atol=1e-6)


def test_repeated_handshake_is_stable():
    a = WireOracle(SubprocessTransport(ECHO))
    caps_a = dict(a.capabilities)
    a.close()
    b = WireOracle(SubprocessTransport(ECHO))
    caps_b = dict(b.capabilities)
    b.close()
    assert caps_a == caps_b


def test_verify_protocol_passes_on_echo():
    with WireOracle(SubprocessTransport(ECHO)) as wire:
        report = verify_protocol(wire)
    assert report["class_count"] == 2
    assert report["features_ok"]


def test_region_echo_matches_in_process_region_scorer():
    img = _f32_image(5, 12, 12)
    grid = np.zeros((12, 12), dtype=np.uint8)
    grid[2:8, 3:9] = 1
    want = SyntheticRegionScorer(RegionMask(grid)).batch([img])[0]
    cmd = ECHO + ["--scorer", "region", "--target", "2,3,6"]
    with WireOracle(SubprocessTransport(cmd)) as wire:
        got = wire.batch([img])[0]
    np.testing.assert_allclose(got, want, atol=1e-6)


# ---------------------------------------------------------------------------
# Contract and protocol violations
# ---------------------------------------------------------------------------


def test_wrong_score_count_is_contract_error():
    with WireOracle(SubprocessTransport(_misbehaving("wrong-score-count"))) as wire:
        with pytest.raises(ContractError, match="handshake declared 3"):
            wire.batch([_f32_image(0, 4, 4)])


def test_missing_score_kind_is_protocol_error():
    with pytest.raises(ProtocolError, match="score_kind"):
        WireOracle(SubprocessTransport(_misbehaving("missing-score-kind")))


def test_version_mismatch_is_protocol_error():
    with pytest.raises(ProtocolError, match="version"):
        WireOracle(SubprocessTransport(_misbehaving("version-mismatch")))


def test_missing_level_is_contract_error():
    with WireOracle(SubprocessTransport(_misbehaving("three-levels"))) as wire:
        with pytest.raises(ContractError, match="3 feature levels"):
            wire.features(_f32_image(0, 4, 4))


def test_level_dims_mismatch_is_contract_error():
    with WireOracle(SubprocessTransport(_misbehaving("wrong-dims"))) as wire:
        with pytest.raises(ContractError, match="do not match handshake"):
            wire.features(_f32_image(0, 4, 4))


def test_garbage_response_is_protocol_error():
    with pytest.raises(ProtocolError, match="malformed"):
        WireOracle(SubprocessTransport(_misbehaving("garbage")))


def test_timeout_is_transport_error():
    with pytest.raises(TransportError, match="timed out"):
        WireOracle(SubprocessTransport(_misbehaving("sleep"), timeout=0.5))


def test_server_exit_is_transport_error():
    with WireOracle(SubprocessTransport(_misbehaving("drop"))) as wire:
        with pytest.raises(TransportError):
            wire.batch([_f32_image(0, 4, 4)])


def test_missing_executable_is_transport_error():
    with pytest.raises(TransportError):
        SubprocessTransport(["/no/such/binary"])


def test_resolver_descriptor_syntax():
    scorer = resolve_oracle("builtin:region", 12, 12)
    assert scorer.class_count == 2
    scorer = resolve_oracle("builtin:mean", 12, 12)
    assert scorer.class_count == 2
    with pytest.raises(ValueError):
        resolve_oracle("ftp://nope", 12, 12)
    with pytest.raises(ValueError):
        resolve_oracle("builtin:unknown", 12, 12)


# ---------------------------------------------------------------------------
# HTTP transport
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def echo_http_server():
    import json
    from http.server import BaseHTTPRequestHandler, HTTPServer

    from iassa.echo_server import build_handler

    handler = build_handler("mean", None)

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8")
            out = [
                json.dumps(handler.handle_line(ln))
                for ln in body.split("\n")
                if ln.strip()
            ]
            payload = ("\n".join(out) + "\n").encode()
            self.send_response(200)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/"
    server.shutdown()


def test_http_scores_match_subprocess(echo_http_server):
    img = _f32_image(6)
    with WireOracle(HttpTransport(echo_http_server)) as wire:
        got = wire.batch([img])[0]
    want = MeanIntensityScorer().batch([img])[0]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_http_features_work(echo_http_server):
    img = _f32_image(7, 16, 16)
    with WireOracle(HttpTransport(echo_http_server)) as wire:
        levels = wire.features(img)
    want = SyntheticPyramidProvider().features(img)
    for got_lv, want_lv in zip(levels.levels, want.levels):
        np.testing.assert_allclose(got_lv, want_lv, atol=1e-6)


def test_http_unreachable_is_transport_error():
    with pytest.raises(TransportError):
        WireOracle(HttpTransport("http://127.0.0.1:1/", timeout=0.5))
