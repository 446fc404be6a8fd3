"""Five-metric evaluation harness: deletion, insertion, F1, IoU and the
pointing game, reported at image level and at pixel level (image-level
values divided by the count of highly activated pixels, which penalizes
diffuse explanations)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ImageTensor, SaliencyMap, gaussian_blur, minmax_normalize
from .masking import RegionMask, har_threshold

GREY_FILL = 0.5
INSERTION_BLUR_SIGMA_AT_224 = 10.0
HIGH_ACTIVATION_CUTOFF = 0.7  # top 30% of the normalized value range


@dataclass(frozen=True)
class Curve:
    """Oracle scores tracked along a pixel-removal/reveal trajectory."""

    fractions: np.ndarray  # ascending, starts at 0, ends at 1
    scores: np.ndarray
    auc: float = None

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64)
        s = np.asarray(self.scores, dtype=np.float64)
        if f.size != s.size or f.size < 2:
            raise ValueError("curve needs >= 2 matching (fraction, score) points")
        if f[0] != 0.0 or f[-1] != 1.0 or (np.diff(f) <= 0).any():
            raise ValueError("fractions must ascend from 0 to 1")
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "auc", auc(f, s))


def auc(fractions: np.ndarray, scores: np.ndarray) -> float:
    """Trapezoidal area under (fraction, score) points."""
    f = np.asarray(fractions, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if f.size < 2:
        raise ValueError("AUC needs at least 2 points")
    if (np.diff(f) <= 0).any():
        raise ValueError("fractions must be strictly ascending")
    return float(np.trapezoid(s, f))


@dataclass(frozen=True)
class EvalReport:
    """Per-image metric record at image and pixel level."""

    deletion_auc: float
    insertion_auc: float
    f1: float
    iou: float
    pointing_hit: bool
    pixel_norm_divisor: int = 1

    @property
    def pixel_level(self) -> dict:
        d = float(self.pixel_norm_divisor)
        return {
            "deletion_auc": self.deletion_auc / d,
            "insertion_auc": self.insertion_auc / d,
            "f1": self.f1 / d,
            "iou": self.iou / d,
            "pointing": (1.0 if self.pointing_hit else 0.0) / d,
        }

    def to_json_dict(self) -> dict:
        return {
            "image_level": {
                "deletion_auc": self.deletion_auc,
                "insertion_auc": self.insertion_auc,
                "f1": self.f1,
                "iou": self.iou,
                "pointing_hit": self.pointing_hit,
            },
            "pixel_norm_divisor": self.pixel_norm_divisor,
            "pixel_level": self.pixel_level,
        }


def _saliency_order(s: SaliencyMap) -> np.ndarray:
    """Flat pixel indices by descending saliency, ties by row-major index."""
    flat = s.values.reshape(-1)
    return np.argsort(-flat, kind="stable")


def _score_canvases(scorer, canvases: list[ImageTensor], cls: int, batch: int = 256) -> list[float]:
    out = []
    for start in range(0, len(canvases), batch):
        for vec in scorer.batch(canvases[start : start + batch]):
            out.append(float(vec[cls]))
    return out


def _perturbation_curve(
    scorer, start_canvas: np.ndarray, replacement: np.ndarray,
    order: np.ndarray, cls: int, step_px: int,
) -> Curve:
    h, w, c = start_canvas.shape
    n = h * w
    canvas = start_canvas.reshape(n, c).copy()
    repl = replacement.reshape(n, c)
    canvases = [ImageTensor(canvas.reshape(h, w, c).copy())]
    counts = [0]
    done = 0
    while done < n:
        take = min(step_px, n - done)
        idx = order[done : done + take]
        canvas[idx] = repl[idx]
        done += take
        canvases.append(ImageTensor(canvas.reshape(h, w, c).copy()))
        counts.append(done)
    scores = _score_canvases(scorer, canvases, cls)
    fractions = np.array(counts, dtype=np.float64) / n
    return Curve(fractions, np.array(scores))


def deletion_curve(
    scorer, image: ImageTensor, s: SaliencyMap, cls: int,
    step_px: int | None = None, fill: float = GREY_FILL,
) -> Curve:
    """Score trajectory as pixels are greyed out in saliency order.

    step_px defaults to 1% of the pixel count (about 100 curve points).
    """
    step = _resolve_step(step_px, image)
    order = _saliency_order(s)
    grey = np.full_like(image.data, fill)
    return _perturbation_curve(scorer, image.data, grey, order, cls, step)


def insertion_curve(
    scorer, image: ImageTensor, s: SaliencyMap, cls: int,
    step_px: int | None = None, blur_sigma: float | None = None,
) -> Curve:
    """Score trajectory as pixels are unblurred in saliency order.

    Revealing originals on a blurred canvas (rather than a blank one) avoids
    biasing the model with sharp shape edges. The blur defaults to 10 px at
    224 px input, scaled proportionally for other sizes.
    """
    step = _resolve_step(step_px, image)
    if blur_sigma is None:
        blur_sigma = INSERTION_BLUR_SIGMA_AT_224 * min(image.height, image.width) / 224.0
    order = _saliency_order(s)
    blurred = gaussian_blur(image, blur_sigma)
    return _perturbation_curve(scorer, blurred.data, image.data, order, cls, step)


def _resolve_step(step_px: int | None, image: ImageTensor) -> int:
    if step_px is None:
        return max(1, (image.height * image.width) // 100)
    if step_px < 1:
        raise ValueError("step_px must be >= 1")
    return step_px


def f1_iou(s_norm: SaliencyMap, gt: RegionMask, t: float = 0.3) -> tuple[float, float]:
    """Threshold the normalized map and compare against ground truth.

    Returns (f1, iou); an empty prediction yields (0, 0).
    """
    if s_norm.values.shape != gt.grid.shape:
        raise ValueError("saliency map and ground truth dimensions must match")
    if gt.empty:
        raise ValueError("ground-truth region must be nonempty")
    pred = har_threshold(s_norm, t).grid.astype(bool)
    gtb = gt.grid.astype(bool)
    inter = int((pred & gtb).sum())
    union = int((pred | gtb).sum())
    n_pred = int(pred.sum())
    if inter == 0:
        return 0.0, 0.0
    return 2.0 * inter / (n_pred + gt.count), inter / union


def pointing_game(s: SaliencyMap, gt: RegionMask) -> bool:
    """True iff the single most salient pixel (ties: lowest row-major index)
    lies inside the ground-truth region."""
    if s.values.shape != gt.grid.shape:
        raise ValueError("saliency map and ground truth dimensions must match")
    if gt.empty:
        raise ValueError("ground-truth region must be nonempty")
    idx = int(np.argmax(s.values))
    return bool(gt.grid.reshape(-1)[idx] == 1)


def pixel_norm_divisor(s_norm: SaliencyMap) -> int:
    """Count of pixels carrying the top 30% of the normalized range, floored at 1."""
    return max(1, int((s_norm.values >= HIGH_ACTIVATION_CUTOFF).sum()))


def pixel_level(report: EvalReport, s_norm: SaliencyMap) -> EvalReport:
    """Attach the pixel-level divisor derived from the normalized map."""
    return EvalReport(
        deletion_auc=report.deletion_auc,
        insertion_auc=report.insertion_auc,
        f1=report.f1,
        iou=report.iou,
        pointing_hit=report.pointing_hit,
        pixel_norm_divisor=pixel_norm_divisor(s_norm),
    )


def evaluate_saliency(
    scorer, image: ImageTensor, s: SaliencyMap, gt: RegionMask, cls: int,
    t: float = 0.3, step_px: int | None = None,
) -> tuple[EvalReport, Curve, Curve]:
    """Full five-metric report plus the two curves for one image."""
    s_norm = minmax_normalize(s)
    dele = deletion_curve(scorer, image, s, cls, step_px)
    ins = insertion_curve(scorer, image, s, cls, step_px)
    f1, iou = f1_iou(s_norm, gt, t)
    report = EvalReport(
        deletion_auc=dele.auc,
        insertion_auc=ins.auc,
        f1=f1,
        iou=iou,
        pointing_hit=pointing_game(s, gt),
    )
    return pixel_level(report, s_norm), dele, ins
