"""Long-range parameter-free spatial attention.

Multi-level features are fused into one grid, every pixel pair's feature
affinity (dot product) is softmaxed row-wise into a row-stochastic operator,
and that operator redistributes saliency mass toward feature-correlated
pixels. No parameters are learned anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .grid import SaliencyMap, resize_bilinear

# The affinity matrix is (HW)^2; capping the fused resolution bounds it.
DEFAULT_FEATURE_SIDE_CAP = 56


@dataclass(frozen=True)
class FeatureLevels:
    """Four feature grids ordered shallow to deep; level 0 has the largest
    spatial resolution."""

    levels: tuple[np.ndarray, ...]  # each (Hi, Wi, Ci) float64

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValueError(f"expected 4 feature levels, got {len(self.levels)}")
        cast = []
        for i, lv in enumerate(self.levels):
            a = np.asarray(lv, dtype=np.float64)
            if a.ndim != 3 or a.shape[2] < 1 or a.shape[0] < 1 or a.shape[1] < 1:
                raise ValueError(f"level {i} must be (H, W, C>=1), got {a.shape}")
            if not np.isfinite(a).all():
                raise NumericError(f"level {i} contains non-finite values")
            cast.append(a)
        h0, w0 = cast[0].shape[:2]
        for i, a in enumerate(cast[1:], start=1):
            if a.shape[0] > h0 or a.shape[1] > w0:
                raise ValueError(f"level {i} is spatially larger than level 0")
        object.__setattr__(self, "levels", tuple(cast))


@dataclass(frozen=True)
class FusedFeatures:
    """Channel-concatenated multi-level features at one spatial resolution."""

    grid: np.ndarray  # (H, W, C_total)

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def channels(self) -> int:
        return self.grid.shape[2]

    @property
    def flat(self) -> np.ndarray:
        """HW x C view used for the affinity product."""
        return self.grid.reshape(-1, self.grid.shape[2])


@dataclass(frozen=True)
class AttentionOperator:
    """Row-stochastic (HW x HW) matrix at feature resolution."""

    matrix: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        n = self.height * self.width
        if m.shape != (n, n):
            raise ValueError(f"operator must be {n}x{n}, got {m.shape}")
        object.__setattr__(self, "matrix", m)


def _resample_level(level: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if level.shape[:2] == (out_h, out_w):
        return level
    planes = [
        resize_bilinear(SaliencyMap(level[:, :, c]), out_h, out_w).values
        for c in range(level.shape[2])
    ]
    return np.stack(planes, axis=2)


def _l2_normalize_pixels(level: np.ndarray) -> np.ndarray:
    norms = np.sqrt((level * level).sum(axis=2, keepdims=True))
    return np.divide(level, norms, out=np.zeros_like(level), where=norms > 0)


def fuse_features(
    levels: FeatureLevels,
    l2_normalize: bool = True,
    max_side: int | None = DEFAULT_FEATURE_SIDE_CAP,
) -> FusedFeatures:
    """Upsample deeper levels to the shallowest resolution and concatenate
    channels.

    Each level is L2-normalized per pixel before fusion (switchable): raw
    multi-level activations differ by orders of magnitude and unnormalized
    dot products saturate the softmax. If the shallowest level exceeds
    `max_side`, everything is resampled down to the cap instead, bounding
    the (HW)^2 affinity matrix.
    """
    h, w = levels.levels[0].shape[:2]
    if max_side is not None:
        h, w = min(h, max_side), min(w, max_side)
    parts = []
    for lv in levels.levels:
        lv = _resample_level(lv, h, w)
        if l2_normalize:
            lv = _l2_normalize_pixels(lv)
        parts.append(lv)
    return FusedFeatures(np.concatenate(parts, axis=2))


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def affinity_attention(f: FusedFeatures) -> AttentionOperator:
    """Softmax over the pixel-to-pixel feature affinity (dot product) matrix."""
    x = f.flat
    if not np.isfinite(x).all():
        raise NumericError("fused features contain non-finite values")
    logits = x @ x.T
    return AttentionOperator(row_softmax(logits), f.height, f.width)


def apply_attention(a: AttentionOperator, s: SaliencyMap) -> SaliencyMap:
    """Left-multiply the saliency map by the attention operator.

    The map is resampled to the operator's feature resolution for the
    product and back afterwards; matching resolutions skip resampling.
    """
    native = (s.height, s.width) == (a.height, a.width)
    down = s if native else resize_bilinear(s, a.height, a.width)
    mixed = a.matrix @ down.values.reshape(-1)
    out = SaliencyMap(mixed.reshape(a.height, a.width))
    return out if native else resize_bilinear(out, s.height, s.width)


def adjust_saliency(
    s: SaliencyMap, attended: SaliencyMap, lambda_reg: float, mode: str = "convex"
) -> SaliencyMap:
    """Blend a saliency map with its attention-transformed counterpart.

    convex (default): lam*s + (1-lam)*attended, an interpolation between the
    sampled map and the attention-redistributed one. literal: lam*s +
    (lam-1)*attended, which subtracts the attended map for lam < 1; kept
    behind this flag for fidelity to the method's printed update rule.
    """
    if s.values.shape != attended.values.shape:
        raise ValueError("saliency and attended map dimensions must match")
    if not 0.0 <= lambda_reg <= 1.0:
        raise ValueError("lambda_reg must lie in [0, 1]")
    if mode == "convex":
        coeff = 1.0 - lambda_reg
    elif mode == "literal":
        coeff = lambda_reg - 1.0
    else:
        raise ValueError(f"unknown adjust mode {mode!r}")
    return SaliencyMap(lambda_reg * s.values + coeff * attended.values)
