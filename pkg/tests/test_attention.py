import numpy as np
import pytest

from iassa.attention import (
    AttentionOperator,
    FeatureLevels,
    adjust_saliency,
    affinity_attention,
    apply_attention,
    fuse_features,
    row_softmax,
)
from iassa.grid import SaliencyMap
from oracles import bilinear_oracle, matvec_oracle, row_softmax_oracle


def _levels_same_res(rng, h=4, w=4, channels=(2, 3, 1, 2)):
    return FeatureLevels(tuple(rng.random((h, w, c)) for c in channels))


# ---------------------------------------------------------------------------
# Feature fusion
# ---------------------------------------------------------------------------


def test_fuse_concatenates_channels():
    rng = np.random.default_rng(0)
    levels = _levels_same_res(rng)
    fused = fuse_features(levels, l2_normalize=False)
    assert fused.grid.shape == (4, 4, 8)
    np.testing.assert_array_equal(fused.grid[:, :, :2], levels.levels[0])


def test_fuse_l2_normalizes_each_level_per_pixel():
    rng = np.random.default_rng(1)
    levels = _levels_same_res(rng)
    fused = fuse_features(levels, l2_normalize=True)
    start = 0
    for lv in levels.levels:
        c = lv.shape[2]
        norms = np.linalg.norm(fused.grid[:, :, start : start + c], axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)
        start += c


def test_fuse_single_pixel_levels():
    rng = np.random.default_rng(2)
    levels = FeatureLevels(tuple(rng.random((1, 1, c)) for c in (4, 3, 2, 1)))
    fused = fuse_features(levels)
    assert fused.grid.shape == (1, 1, 10)


def test_fuse_pyramid_upsamples_to_shallowest():
    rng = np.random.default_rng(3)
    l1 = rng.random((4, 4, 1))
    l2 = rng.random((2, 2, 1))
    l3 = rng.random((1, 1, 1))
    l4 = rng.random((1, 1, 1))
    fused = fuse_features(FeatureLevels((l1, l2, l3, l4)), l2_normalize=False)
    assert fused.grid.shape == (4, 4, 4)
    np.testing.assert_allclose(
        fused.grid[:, :, 1], bilinear_oracle(l2[:, :, 0], 4, 4), atol=1e-12
    )


def test_fuse_caps_feature_side():
    rng = np.random.default_rng(4)
    levels = FeatureLevels(tuple(rng.random((80, 80, 1)) for _ in range(4)))
    fused = fuse_features(levels, max_side=56)
    assert (fused.height, fused.width) == (56, 56)


def test_levels_validate_count_and_shape():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        FeatureLevels(tuple(rng.random((2, 2, 1)) for _ in range(3)))
    with pytest.raises(ValueError):
        FeatureLevels((np.zeros((2, 2, 0)),) * 4)


# ---------------------------------------------------------------------------
# Affinity attention operator
# ---------------------------------------------------------------------------


def test_uniform_features_give_uniform_rows():
    from iassa.attention import FusedFeatures

    fused = FusedFeatures(np.full((3, 3, 2), 0.5))
    a = affinity_attention(fused)
    np.testing.assert_allclose(a.matrix, 1.0 / 9.0, atol=1e-12)


def test_scaled_orthonormal_rows_approach_identity():
    from iassa.attention import FusedFeatures

    beta = 30.0
    grid = (beta * np.eye(4)).reshape(2, 2, 4)
    a = affinity_attention(FusedFeatures(grid))
    np.testing.assert_allclose(a.matrix, np.eye(4), atol=1e-6)


def test_two_pixel_closed_form():
    from iassa.attention import FusedFeatures

    grid = np.array([[[1.0, 0.0], [0.0, 1.0]]])  # 1x2 pixels, 2 channels
    a = affinity_attention(FusedFeatures(grid))
    e = np.e
    want = np.array([[e / (e + 1.0), 1.0 / (e + 1.0)], [1.0 / (e + 1.0), e / (e + 1.0)]])
    np.testing.assert_allclose(a.matrix, want, atol=1e-12)


def test_rows_stochastic_and_positive():
    rng = np.random.default_rng(6)
    from iassa.attention import FusedFeatures

    for _ in range(25):
        h, w = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        fused = FusedFeatures(rng.normal(size=(h, w, 3)))
        a = affinity_attention(fused)
        np.testing.assert_allclose(a.matrix.sum(axis=1), 1.0, atol=1e-6)
        assert (a.matrix > 0).all()


def test_softmax_matches_oracle_and_shift_invariance():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(6, 6)) * 10
    np.testing.assert_allclose(row_softmax(logits), row_softmax_oracle(logits), atol=1e-12)
    shifted = row_softmax(logits + 123.456)
    np.testing.assert_allclose(shifted, row_softmax(logits), atol=1e-6)


# ---------------------------------------------------------------------------
# Applying the operator
# ---------------------------------------------------------------------------


def test_uniform_operator_averages_map():
    n = 9
    a = AttentionOperator(np.full((n, n), 1.0 / n), 3, 3)
    rng = np.random.default_rng(8)
    s = SaliencyMap(rng.random((3, 3)))
    out = apply_attention(a, s)
    np.testing.assert_allclose(out.values, s.values.mean(), atol=1e-9)


def test_identity_operator_at_native_resolution_is_exact():
    rng = np.random.default_rng(9)
    s = SaliencyMap(rng.random((4, 4)))
    a = AttentionOperator(np.eye(16), 4, 4)
    out = apply_attention(a, s)
    assert np.array_equal(out.values, s.values)


def test_apply_matches_naive_matvec():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(12, 12))
    a = AttentionOperator(row_softmax(logits), 3, 4)
    s = SaliencyMap(rng.random((3, 4)))
    got = apply_attention(a, s).values.reshape(-1)
    want = matvec_oracle(a.matrix, s.values.reshape(-1))
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_apply_resamples_across_resolutions():
    rng = np.random.default_rng(11)
    a = AttentionOperator(row_softmax(rng.normal(size=(4, 4))), 2, 2)
    s = SaliencyMap(rng.random((6, 6)))
    out = apply_attention(a, s)
    assert (out.height, out.width) == (6, 6)
    down = np.array([[bilinear_oracle(s.values, 2, 2)]]).reshape(-1)
    assert out.values.min() >= down.min() - 1e-12
    assert out.values.max() <= down.max() + 1e-12


def test_row_stochastic_operator_cannot_overshoot():
    rng = np.random.default_rng(12)
    a = AttentionOperator(row_softmax(rng.normal(size=(9, 9)) * 3), 3, 3)
    s = SaliencyMap(rng.random((3, 3)))
    out = apply_attention(a, s)
    assert out.values.min() >= s.values.min() - 1e-12
    assert out.values.max() <= s.values.max() + 1e-12


# ---------------------------------------------------------------------------
# Saliency adjustment
# ---------------------------------------------------------------------------


def test_adjust_convex_blend():
    s = SaliencyMap(np.array([[0.0, 1.0]]))
    att = SaliencyMap(np.array([[1.0, 0.0]]))
    out = adjust_saliency(s, att, 0.5, "convex")
    np.testing.assert_array_equal(out.values, [[0.5, 0.5]])


def test_adjust_literal_form():
    s = SaliencyMap(np.array([[0.0, 1.0]]))
    att = SaliencyMap(np.array([[1.0, 0.0]]))
    out = adjust_saliency(s, att, 0.5, "literal")
    np.testing.assert_array_equal(out.values, [[-0.5, 0.5]])


def test_adjust_lambda_one_returns_map_in_both_modes():
    rng = np.random.default_rng(13)
    s = SaliencyMap(rng.random((3, 3)))
    att = SaliencyMap(rng.random((3, 3)))
    for mode in ("convex", "literal"):
        out = adjust_saliency(s, att, 1.0, mode)
        np.testing.assert_allclose(out.values, s.values, atol=1e-15)


def test_adjust_convex_is_elementwise_bounded():
    rng = np.random.default_rng(14)
    s = SaliencyMap(rng.random((4, 4)))
    att = SaliencyMap(rng.random((4, 4)))
    for lam in (0.0, 0.3, 0.7, 1.0):
        out = adjust_saliency(s, att, lam, "convex").values
        lo = np.minimum(s.values, att.values)
        hi = np.maximum(s.values, att.values)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


def test_adjust_validates_inputs():
    s = SaliencyMap(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        adjust_saliency(s, SaliencyMap(np.zeros((3, 3))), 0.5)
    with pytest.raises(ValueError):
        adjust_saliency(s, s, 1.5)
    with pytest.raises(ValueError):
        adjust_saliency(s, s, 0.5, "weird")
