import numpy as np
import pytest

from iassa.attention import adjust_saliency, affinity_attention, apply_attention, fuse_features
from iassa.engine import (
    ExplainConfig,
    explain,
    explain_rise_baseline,
    plain_occlusion_config,
)
from iassa.errors import NumericError, OracleError, TransportError
from iassa.grid import ImageTensor, minmax_normalize
from iassa.masking import schedule_at, sliding_window_masks
from iassa.oracle import (
    ConstantScorer,
    LinearProbeScorer,
    ScoringOracle,
    SyntheticPyramidProvider,
)
from iassa.saliency import aggregate, masked_image
from iassa.scenes import make_scene

PYRAMID = SyntheticPyramidProvider()


def _small_cfg(**over):
    params = dict(input_side=16, w0=6.0, s0=3.0, w_step=0.5, s_step=0.1, max_iters=3)
    params.update(over)
    return ExplainConfig(**params)


class NaNScorer(ScoringOracle):
    class_count = 1
    score_kind = "logits"

    def __init__(self, bad_index):
        self.bad_index = bad_index
        self.calls = 0

    def batch(self, images):
        out = []
        for _ in images:
            v = np.array([np.nan if self.calls == self.bad_index else 0.5])
            out.append(v)
            self.calls += 1
        return out


class DyingScorer(ScoringOracle):
    class_count = 1
    score_kind = "logits"

    def __init__(self, die_after):
        self.die_after = die_after
        self.calls = 0

    def batch(self, images):
        out = []
        for _ in images:
            self.calls += 1
            if self.calls > self.die_after:
                raise TransportError("endpoint fell over")
            out.append(np.array([0.5]))
        return out


# ---------------------------------------------------------------------------
# Loop structure
# ---------------------------------------------------------------------------


def test_single_iteration_equals_manual_composition():
    rng = np.random.default_rng(0)
    img = ImageTensor(rng.random((16, 16, 1)))
    scorer = LinearProbeScorer(rng.random((16, 16)))
    cfg = _small_cfg(max_iters=1, target_class=0)

    result = explain(img, scorer, PYRAMID, cfg)

    operator = affinity_attention(
        fuse_features(PYRAMID.features(img), max_side=cfg.feature_side_cap)
    )
    win, stride = schedule_at(cfg.schedule(), 0)
    ms = sliding_window_masks(16, 16, win, stride)
    scores = np.array([scorer.batch([masked_image(img, m)])[0] for m in ms.masks])
    s0 = aggregate(ms, scores, 0)
    manual = minmax_normalize(
        adjust_saliency(s0, apply_attention(operator, s0), cfg.lambda_reg, cfg.adjust_mode)
    )
    assert np.array_equal(result.final_map.values, manual.values)
    assert len(result.per_iteration) == 1


def test_lambda_one_reduces_to_plain_occlusion_bitwise():
    rng = np.random.default_rng(1)
    img = ImageTensor(rng.random((16, 16, 1)))
    scorer = LinearProbeScorer(rng.random((16, 16)))
    cfg = _small_cfg(max_iters=1, lambda_reg=1.0, target_class=0)

    # No feature provider needed: with lambda 1 the attention term is skipped.
    result = explain(img, scorer, None, cfg)

    win, stride = schedule_at(cfg.schedule(), 0)
    ms = sliding_window_masks(16, 16, win, stride)
    scores = np.array([scorer.batch([masked_image(img, m)])[0] for m in ms.masks])
    manual = minmax_normalize(aggregate(ms, scores, 0))
    assert np.array_equal(result.final_map.values, manual.values)


def test_constant_scorer_yields_all_zero_map():
    img = ImageTensor(np.random.default_rng(2).random((16, 16, 1)))
    result = explain(img, ConstantScorer([0.6]), PYRAMID, _small_cfg(target_class=0))
    np.testing.assert_array_equal(result.final_map.values, 0.0)
    # Zero delta fires the convergence test on the first adaptive round.
    assert result.converged
    assert result.converged_at == 1


def test_localizes_hidden_bright_target():
    scene = make_scene(0, 3)
    cfg = ExplainConfig.for_side(64, max_iters=10, seed=0)
    result = explain(scene.image, scene.scorer(), PYRAMID, cfg)
    idx = np.unravel_index(np.argmax(result.final_map.values), (64, 64))
    assert scene.target.grid[idx] == 1


def test_budget_and_diagnostics_bookkeeping():
    img = ImageTensor(np.random.default_rng(3).random((16, 16, 1)))
    scorer = LinearProbeScorer(np.random.default_rng(4).random((16, 16)))
    cfg = _small_cfg(max_iters=4, target_class=0, epsilon_conv=1e-12)
    result = explain(img, scorer, PYRAMID, cfg)
    assert len(result.per_iteration) <= cfg.max_iters + 1
    for d in result.per_iteration:
        assert d.oracle_calls == d.mask_count
        assert d.mean_abs_delta >= 0.0
    ks = [d.k for d in result.per_iteration]
    assert ks == list(range(len(ks)))
    assert result.converged == (result.converged_at is not None)


def test_deterministic_across_runs_and_threads():
    scene = make_scene(7, 0, side=32)
    cfg = ExplainConfig.for_side(32, max_iters=3, seed=7, batch_size=4)
    a = explain(scene.image, scene.scorer(), PYRAMID, cfg)
    b = explain(scene.image, scene.scorer(), PYRAMID, cfg)
    threaded = ExplainConfig.for_side(32, max_iters=3, seed=7, batch_size=4, threads=4)
    c = explain(scene.image, scene.scorer(), PYRAMID, threaded)
    assert np.array_equal(a.final_map.values, b.final_map.values)
    assert np.array_equal(a.final_map.values, c.final_map.values)
    assert [d.mean_abs_delta for d in a.per_iteration] == [
        d.mean_abs_delta for d in c.per_iteration
    ]


def test_argmax_invariant_under_score_scaling():
    rng = np.random.default_rng(5)
    img = ImageTensor(rng.random((16, 16, 1)))
    w = rng.random((16, 16))
    cfg = _small_cfg(max_iters=2, target_class=0)
    a = explain(img, LinearProbeScorer(w), PYRAMID, cfg)
    b = explain(img, LinearProbeScorer(w * 7.0), PYRAMID, cfg)
    assert np.argmax(a.final_map.values) == np.argmax(b.final_map.values)
    assert a.final_map.values.min() >= 0.0 and a.final_map.values.max() <= 1.0


def test_top1_class_selection():
    img = ImageTensor(np.full((16, 16, 1), 0.9))
    result = explain(img, ConstantScorer([0.2, 0.7, 0.1]), PYRAMID, _small_cfg())
    assert result.target_class == 1


# ---------------------------------------------------------------------------
# Failure modes
# ---------------------------------------------------------------------------


def test_nonfinite_score_names_mask_index():
    img = ImageTensor(np.random.default_rng(6).random((16, 16, 1)))
    scorer = NaNScorer(bad_index=3)
    with pytest.raises(NumericError, match="mask index 2"):
        # Call 0 is the top-1 probe, so mask index 2 is the failing one.
        explain(img, scorer, PYRAMID, _small_cfg())


def test_oracle_failure_carries_partial_diagnostics():
    img = ImageTensor(np.random.default_rng(7).random((16, 16, 1)))
    # 16x16 with win 6 stride 3 gives 25 init masks plus the top-1 probe;
    # dying at call 27 means the failure lands in the first adaptive round.
    scorer = DyingScorer(die_after=26)
    with pytest.raises(OracleError) as exc:
        explain(img, scorer, PYRAMID, _small_cfg(max_iters=5))
    assert len(exc.value.partial) >= 1  # the init round completed
    assert exc.value.partial[0]["mask_count"] == 25


# ---------------------------------------------------------------------------
# RISE baseline
# ---------------------------------------------------------------------------


def test_rise_deterministic_per_seed():
    img = ImageTensor(np.random.default_rng(8).random((16, 16, 1)))
    cfg = _small_cfg(target_class=0, rise_masks=32, rise_grid_n=4, seed=5)
    a = explain_rise_baseline(img, MeanScorer(), cfg)
    b = explain_rise_baseline(img, MeanScorer(), cfg)
    assert np.array_equal(a.final_map.values, b.final_map.values)


class MeanScorer(ScoringOracle):
    class_count = 1
    score_kind = "logits"

    def batch(self, images):
        return [np.array([float(img.data.mean())]) for img in images]


def test_rise_single_mask_is_proportional_to_it():
    img = ImageTensor(np.random.default_rng(9).random((16, 16, 1)))
    cfg = _small_cfg(target_class=0, rise_masks=1, rise_grid_n=4, seed=3)
    result = explain_rise_baseline(img, MeanScorer(), cfg)
    from iassa.masking import random_rise_masks

    mask = random_rise_masks(16, 16, 4, 0.5, 1, seed=3).masks[0]
    np.testing.assert_array_equal(result.final_map.values, mask.astype(np.float64))


def test_rise_map_correlates_with_linear_weights():
    # The weight image must be smooth at the mask-cell scale: random masks
    # cannot resolve per-pixel structure, only blobs like this one.
    yy, xx = np.mgrid[0:56, 0:56]
    w = np.exp(-((yy - 30) ** 2 + (xx - 20) ** 2) / (2 * 10.0**2))
    img = ImageTensor(np.ones((56, 56, 1)))
    cfg = ExplainConfig(
        input_side=56, target_class=0, rise_masks=4000, rise_grid_n=7, rise_p=0.5, seed=11
    )
    result = explain_rise_baseline(img, LinearProbeScorer(w), cfg)
    r = np.corrcoef(result.final_map.values.reshape(-1), w.reshape(-1))[0, 1]
    assert r >= 0.9


def test_occlusion_config_helper():
    cfg = plain_occlusion_config(_small_cfg())
    assert cfg.lambda_reg == 1.0 and cfg.max_iters == 1
