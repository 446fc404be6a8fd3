"""Mask generation: sliding windows, random RISE-style masks, thresholded
high-activation regions, region-restricted adaptive windows, and the
window/stride depreciation schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import SaliencyMap, save_pgm


@dataclass(frozen=True)
class MaskSet:
    """Ordered stack of binary H x W masks plus per-pixel coverage counts.

    Coverage C(pixel) = sum over masks of mask(pixel); it is the empirical
    stand-in for the expected mask value used by the aggregation divisor.
    """

    masks: np.ndarray  # uint8, shape (N, H, W), values {0, 1}
    window: int
    stride: int
    coverage: np.ndarray = field(default=None)  # int64, shape (H, W)

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=np.uint8)
        if m.ndim != 3:
            raise ValueError(f"masks must be (N, H, W), got {m.shape}")
        if m.size and not np.isin(m, (0, 1)).all():
            raise ValueError("masks must be binary")
        object.__setattr__(self, "masks", m)
        if self.coverage is None:
            object.__setattr__(self, "coverage", m.sum(axis=0, dtype=np.int64))
        else:
            object.__setattr__(self, "coverage", np.asarray(self.coverage, dtype=np.int64))

    def __len__(self) -> int:
        return self.masks.shape[0]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]


@dataclass(frozen=True)
class RegionMask:
    """Binary H x W region with its set-pixel count."""

    grid: np.ndarray  # uint8, shape (H, W)
    count: int = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.uint8)
        if g.ndim != 2:
            raise ValueError(f"region must be 2-D, got {g.shape}")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("region must be binary")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "count", int(g.sum()))

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class Schedule:
    """Per-iteration subtractive depreciation of window size and stride.

    Subtractive steps land the default (45, 8) start at (8, 3) exactly when
    the 25-iteration budget runs out; multiplicative decay would collapse
    the window within a handful of iterations.
    """

    w0: float = 45.0
    s0: float = 8.0
    w_step: float = 1.5
    s_step: float = 0.2
    w_min: int = 2
    s_min: int = 1

    def __post_init__(self):
        if self.w0 < self.w_min or self.w_min < 1:
            raise ValueError("need w0 >= w_min >= 1")
        if self.s0 < self.s_min or self.s_min < 1:
            raise ValueError("need s0 >= s_min >= 1")
        if self.w_step < 0 or self.s_step < 0:
            raise ValueError("steps must be non-negative")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def schedule_at(sch: Schedule, k: int) -> tuple[int, int]:
    """Window and stride at iteration k (half-up rounding, floored at minima)."""
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    win = max(sch.w_min, _round_half_up(sch.w0 - sch.w_step * k))
    stride = max(sch.s_min, _round_half_up(sch.s0 - sch.s_step * k))
    return win, stride


def _axis_positions(dim: int, win: int, stride: int) -> list[int]:
    """Window origins 0, stride, 2*stride, ... plus a final origin flushed to
    the edge so border pixels are always covered."""
    positions = list(range(0, dim - win + 1, stride))
    if positions[-1] + win < dim:
        positions.append(dim - win)
    return positions


def sliding_window_masks(h: int, w: int, win: int, stride: int) -> MaskSet:
    """One full win x win mask per sliding-window position, row-major order."""
    if win < 1 or win > min(h, w):
        raise ValueError(f"window {win} does not fit a {h}x{w} image")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = _axis_positions(h, win, stride)
    cols = _axis_positions(w, win, stride)
    masks = np.zeros((len(rows) * len(cols), h, w), dtype=np.uint8)
    i = 0
    for r in rows:
        for c in cols:
            masks[i, r : r + win, c : c + win] = 1
            i += 1
    return MaskSet(masks, window=win, stride=stride)


def random_rise_masks(
    h: int, w: int, grid_n: int, p: float, count: int, seed: int
) -> MaskSet:
    """Random low-resolution Bernoulli cell grids, bilinearly upsampled with a
    random sub-cell shift and binarized at 0.5. Deterministic per seed."""
    if not 0.0 < p < 1.0:
        raise ValueError("keep probability must satisfy 0 < p < 1")
    if grid_n < 1 or count < 1:
        raise ValueError("grid_n and count must be >= 1")
    rng = np.random.default_rng(seed)
    cell_h = int(np.ceil(h / grid_n))
    cell_w = int(np.ceil(w / grid_n))
    up_h = (grid_n + 1) * cell_h
    up_w = (grid_n + 1) * cell_w
    masks = np.zeros((count, h, w), dtype=np.uint8)
    for i in range(count):
        cells = (rng.random((grid_n, grid_n)) < p).astype(np.float64)
        up = _upsample_values(cells, up_h, up_w)
        sy = int(rng.integers(0, cell_h))
        sx = int(rng.integers(0, cell_w))
        masks[i] = (up[sy : sy + h, sx : sx + w] >= 0.5).astype(np.uint8)
    return MaskSet(masks, window=0, stride=0)


def _upsample_values(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    from .grid import resize_bilinear

    return resize_bilinear(SaliencyMap(values), out_h, out_w).values


def har_threshold(s_norm: SaliencyMap, t: float) -> RegionMask:
    """Highest-activated region: pixels whose normalized value exceeds t."""
    if not 0.0 <= t < 1.0:
        raise ValueError("threshold must satisfy 0 <= t < 1")
    return RegionMask((s_norm.values > t).astype(np.uint8))


def region_center(region: RegionMask, h: int, w: int) -> tuple[int, int]:
    """Centroid pixel of a region (image center if the region is empty)."""
    if region.empty:
        return h // 2, w // 2
    ys, xs = np.nonzero(region.grid)
    # floor(mean + 0.5): deterministic half-up rounding of the centroid
    return int(ys.mean() + 0.5), int(xs.mean() + 0.5)


def adaptive_window_masks(
    region: RegionMask, win: int, stride: int, overlap_frac: float = 0.25
) -> MaskSet:
    """Sliding-window masks restricted to positions overlapping the region.

    Candidate positions are identical to sliding_window_masks; a position
    survives iff at least `overlap_frac` of its window area lies inside the
    region. Masks stay full windows (they are not intersected with the
    region). If nothing survives, a single window centered on the region's
    centroid (or the image center for an empty region) is produced so the
    iteration loop always has samples.
    """
    h, w = region.grid.shape
    if win < 1 or win > min(h, w):
        raise ValueError(f"window {win} does not fit a {h}x{w} region")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = _axis_positions(h, win, stride)
    cols = _axis_positions(w, win, stride)

    # Summed-area table makes each window's overlap an O(1) lookup.
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = region.grid.cumsum(axis=0).cumsum(axis=1)
    need = overlap_frac * win * win
    kept: list[tuple[int, int]] = []
    for r in rows:
        for c in cols:
            overlap = (
                sat[r + win, c + win] - sat[r, c + win] - sat[r + win, c] + sat[r, c]
            )
            if overlap >= need:
                kept.append((r, c))

    if not kept:
        cy, cx = region_center(region, h, w)
        r = min(max(cy - win // 2, 0), h - win)
        c = min(max(cx - win // 2, 0), w - win)
        kept = [(r, c)]

    masks = np.zeros((len(kept), h, w), dtype=np.uint8)
    for i, (r, c) in enumerate(kept):
        masks[i, r : r + win, c : c + win] = 1
    return MaskSet(masks, window=win, stride=stride)


def save_masks_pgm(mask_set: MaskSet, directory: str | Path, prefix: str = "mask") -> None:
    """Debug dump: one PGM per mask plus the normalized coverage grid."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(mask_set)):
        save_pgm(mask_set.masks[i].astype(np.float64), directory / f"{prefix}_{i:04d}.pgm")
    cov = mask_set.coverage.astype(np.float64)
    peak = cov.max()
    save_pgm(cov / peak if peak > 0 else cov, directory / f"{prefix}_coverage.pgm")
