"""Turn (mask set, per-mask classifier scores) into a saliency map.

The importance of a pixel is the mean class score over the masks that keep
it visible: a coverage-normalized weighted average of the mask stack. The
reduction order is fixed so results are bit-stable across runs and thread
counts.
"""

from __future__ import annotations

import numpy as np

from .grid import ImageTensor, SaliencyMap
from .masking import MaskSet


def masked_image(image: ImageTensor, mask: np.ndarray, fill: float = 0.0) -> ImageTensor:
    """Keep pixels where mask=1, replace with `fill` where mask=0."""
    m = np.asarray(mask)
    if m.shape != (image.height, image.width):
        raise ValueError(f"mask shape {m.shape} != image shape {(image.height, image.width)}")
    keep = m.astype(np.float64)[:, :, None]
    return ImageTensor(image.data * keep + fill * (1.0 - keep))


def masked_batch(image: ImageTensor, masks: np.ndarray, fill: float = 0.0) -> list[ImageTensor]:
    """Vectorized masked_image over a (N, H, W) mask stack."""
    keep = masks.astype(np.float64)[:, :, :, None]
    batch = image.data[None] * keep + fill * (1.0 - keep)
    return [ImageTensor(batch[i]) for i in range(batch.shape[0])]


def aggregate(masks: MaskSet, scores: np.ndarray, cls: int) -> SaliencyMap:
    """Coverage-normalized weighted average of the mask stack.

    S(pixel) = sum_i scores[i][cls] * mask_i(pixel) / coverage(pixel) where
    coverage > 0, and 0 elsewhere (the caller merges uncovered pixels with a
    prior map). Equivalently the mean score over masks covering the pixel.
    """
    if len(masks) == 0:
        raise ValueError("cannot aggregate an empty mask set")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(masks):
        raise ValueError(f"scores shape {scores.shape} inconsistent with {len(masks)} masks")
    if not 0 <= cls < scores.shape[1]:
        raise ValueError(f"class index {cls} out of range for {scores.shape[1]} classes")
    weights = scores[:, cls]
    flat = masks.masks.reshape(len(masks), -1).astype(np.float64)
    # einsum without optimization runs a fixed-order sequential reduction.
    total = np.einsum("i,ij->j", weights, flat, optimize=False)
    cov = masks.coverage.reshape(-1).astype(np.float64)
    out = np.divide(total, cov, out=np.zeros_like(total), where=cov > 0)
    return SaliencyMap(out.reshape(masks.height, masks.width))


def rise_aggregate(masks: MaskSet, scores: np.ndarray, cls: int, p: float) -> SaliencyMap:
    """RISE-style aggregation: global 1/(p*N) divisor instead of per-pixel coverage."""
    if len(masks) == 0:
        raise ValueError("cannot aggregate an empty mask set")
    scores = np.asarray(scores, dtype=np.float64)
    weights = scores[:, cls]
    flat = masks.masks.reshape(len(masks), -1).astype(np.float64)
    total = np.einsum("i,ij->j", weights, flat, optimize=False)
    out = total / (p * len(masks))
    return SaliencyMap(out.reshape(masks.height, masks.width))


def merge_carry_forward(
    prev: SaliencyMap, fresh: SaliencyMap, coverage: np.ndarray
) -> SaliencyMap:
    """Take fresh values where the new mask set sampled, prior values elsewhere."""
    cov = np.asarray(coverage)
    if prev.values.shape != fresh.values.shape or cov.shape != prev.values.shape:
        raise ValueError("prev, fresh, and coverage dimensions must all match")
    return SaliencyMap(np.where(cov > 0, fresh.values, prev.values))
