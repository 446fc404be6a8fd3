"""Orchestration of the full explanation loop.

Initialize with sliding-window sampling, score the masked inputs, aggregate
into a saliency map, blend with the spatial-attention transform, threshold
the high-activation region, and resample adaptively inside it with gradually
shrinking windows until the normalized map stops changing or the iteration
budget runs out. A single-pass random-mask baseline is provided alongside
for comparison.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    DEFAULT_FEATURE_SIDE_CAP,
    AttentionOperator,
    adjust_saliency,
    affinity_attention,
    apply_attention,
    fuse_features,
)
from .errors import NumericError, OracleError
from .grid import ImageTensor, SaliencyMap, minmax_normalize, resize_bilinear
from .masking import (
    MaskSet,
    Schedule,
    adaptive_window_masks,
    har_threshold,
    random_rise_masks,
    save_masks_pgm,
    schedule_at,
    sliding_window_masks,
)
from .saliency import aggregate, masked_batch, merge_carry_forward, rise_aggregate


@dataclass(frozen=True)
class ExplainConfig:
    """Hyperparameters of the iterative explainer.

    Defaults follow the reference operating point: 224 px inputs, 45/8
    window/stride depreciated by 1.5/0.2 per iteration, blend factor 0.5,
    activation threshold 0.3, and a 25-iteration budget.
    """

    input_side: int = 224
    w0: float = 45.0
    s0: float = 8.0
    w_step: float = 1.5
    s_step: float = 0.2
    lambda_reg: float = 0.5
    t_thresh: float = 0.3
    max_iters: int = 25
    epsilon_conv: float = 1e-3
    overlap_frac: float = 0.25
    adjust_mode: str = "convex"
    target_class: int | None = None  # None = top-1 of the unmasked image
    seed: int = 0
    batch_size: int = 256
    threads: int = 1
    mask_fill: float = 0.0
    l2_normalize_features: bool = True
    feature_side_cap: int = DEFAULT_FEATURE_SIDE_CAP
    emit_raw: bool = False
    dump_masks_dir: str | None = None  # debug: write each round's masks as PGMs
    rise_grid_n: int = 7
    rise_p: float = 0.5
    rise_masks: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.lambda_reg <= 1.0:
            raise ValueError("lambda_reg must lie in [0, 1]")
        if not 0.0 <= self.t_thresh < 1.0:
            raise ValueError("t_thresh must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.epsilon_conv <= 0:
            raise ValueError("epsilon_conv must be positive")

    def schedule(self) -> Schedule:
        return Schedule(w0=self.w0, s0=self.s0, w_step=self.w_step, s_step=self.s_step)

    @classmethod
    def for_side(cls, side: int, **overrides) -> "ExplainConfig":
        """Config with window geometry scaled proportionally from 224 px."""
        scale = side / 224.0
        params = dict(
            input_side=side,
            w0=max(2.0, 45.0 * scale),
            s0=max(1.0, 8.0 * scale),
            w_step=1.5 * scale,
            s_step=0.2 * scale,
        )
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class IterationDiag:
    k: int
    win: int
    stride: int
    mask_count: int
    oracle_calls: int
    mean_abs_delta: float


@dataclass
class ExplanationResult:
    """Final normalized map plus the per-iteration trajectory."""

    final_map: SaliencyMap
    per_iteration: list[IterationDiag]
    target_class: int
    converged_at: int | None  # iteration where the epsilon test fired; None = budget
    raw_final: SaliencyMap | None = None
    iter_wall_ms: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.converged_at is not None

    @property
    def total_oracle_calls(self) -> int:
        return sum(d.oracle_calls for d in self.per_iteration)

    def to_json_dict(self, final_map_ref: str = "") -> dict:
        return {
            "final_map": final_map_ref,
            "target_class": self.target_class,
            "converged": self.converged,
            "converged_at": self.converged_at,
            "per_iteration": [
                {
                    "k": d.k,
                    "win": d.win,
                    "stride": d.stride,
                    "mask_count": d.mask_count,
                    "oracle_calls": d.oracle_calls,
                    "mean_abs_delta": d.mean_abs_delta,
                }
                for d in self.per_iteration
            ],
        }


def _score_mask_set(scorer, image: ImageTensor, mask_set: MaskSet, cfg: ExplainConfig) -> np.ndarray:
    """Score every masked variant, batched and optionally threaded.

    Each mask's score is computed independently and stored by index, so the
    result is bit-identical for any worker count.
    """
    n = len(mask_set)
    chunks = [
        (start, min(start + cfg.batch_size, n)) for start in range(0, n, cfg.batch_size)
    ]

    def run(chunk):
        start, stop = chunk
        imgs = masked_batch(image, mask_set.masks[start:stop], fill=cfg.mask_fill)
        return scorer.batch(imgs)

    workers = max(1, min(cfg.threads, getattr(scorer, "capacity", cfg.threads)))
    if workers == 1 or len(chunks) == 1:
        per_chunk = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(run, chunks))

    rows = [vec for chunk in per_chunk for vec in chunk]
    scores = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(scores).all():
        bad = int(np.argwhere(~np.isfinite(scores).all(axis=1))[0][0])
        raise NumericError(f"oracle returned a non-finite score for mask index {bad}")
    return scores


def _prepare_image(image: ImageTensor, cfg: ExplainConfig) -> ImageTensor:
    if (image.height, image.width) == (cfg.input_side, cfg.input_side):
        return image
    return resize_bilinear(image, cfg.input_side, cfg.input_side)


def _maybe_dump(mask_set: MaskSet, cfg: ExplainConfig, k: int) -> None:
    if cfg.dump_masks_dir is not None:
        save_masks_pgm(mask_set, cfg.dump_masks_dir, prefix=f"iter{k:02d}")


def _pick_class(scorer, image: ImageTensor, cfg: ExplainConfig) -> tuple[int, int]:
    """Target class and the number of oracle calls spent picking it."""
    if cfg.target_class is not None:
        return cfg.target_class, 0
    probe = scorer.batch([image])[0]
    return int(np.argmax(probe)), 1


def _build_attention(features, image: ImageTensor, cfg: ExplainConfig) -> AttentionOperator:
    levels = features.features(image)
    fused = fuse_features(
        levels,
        l2_normalize=cfg.l2_normalize_features,
        max_side=cfg.feature_side_cap,
    )
    return affinity_attention(fused)


def explain(image: ImageTensor, scorer, features, cfg: ExplainConfig) -> ExplanationResult:
    """Run the full iterative adaptive-sampling explanation.

    Raises OracleError (with partial diagnostics attached) if the scorer
    fails mid-run and NumericError if it returns non-finite scores.
    """
    image = _prepare_image(image, cfg)
    diags: list[IterationDiag] = []
    wall: list[float] = []
    try:
        cls, _ = _pick_class(scorer, image, cfg)
        # The operator depends only on the image, so it is built once. With
        # lambda_reg == 1 the attention term has zero weight and the whole
        # module is skipped.
        operator = None
        if cfg.lambda_reg < 1.0:
            operator = _build_attention(features, image, cfg)

        sch = cfg.schedule()
        t0 = time.perf_counter()
        win, stride = schedule_at(sch, 0)
        mask_set = sliding_window_masks(cfg.input_side, cfg.input_side, win, stride)
        _maybe_dump(mask_set, cfg, 0)
        scores = _score_mask_set(scorer, image, mask_set, cfg)
        s_cur = aggregate(mask_set, scores, cls)
        diags.append(IterationDiag(0, win, stride, len(mask_set), len(mask_set), 0.0))
        wall.append((time.perf_counter() - t0) * 1000.0)

        converged_at = None
        s_prime = s_cur
        for k in range(cfg.max_iters):
            t0 = time.perf_counter()
            if operator is None:
                s_prime = s_cur
            else:
                s_prime = adjust_saliency(
                    s_cur, apply_attention(operator, s_cur), cfg.lambda_reg, cfg.adjust_mode
                )
            if converged_at is not None or k + 1 == cfg.max_iters:
                break
            region = har_threshold(minmax_normalize(s_prime), cfg.t_thresh)
            win, stride = schedule_at(sch, k + 1)
            mask_set = adaptive_window_masks(region, win, stride, cfg.overlap_frac)
            _maybe_dump(mask_set, cfg, k + 1)
            scores = _score_mask_set(scorer, image, mask_set, cfg)
            fresh = aggregate(mask_set, scores, cls)
            s_next = merge_carry_forward(s_prime, fresh, mask_set.coverage)
            delta = float(
                np.abs(minmax_normalize(s_next).values - minmax_normalize(s_cur).values).mean()
            )
            diags.append(
                IterationDiag(k + 1, win, stride, len(mask_set), len(mask_set), delta)
            )
            wall.append((time.perf_counter() - t0) * 1000.0)
            s_cur = s_next
            if delta < cfg.epsilon_conv:
                converged_at = k + 1
    except OracleError as e:
        e.partial = [d.__dict__ for d in diags]
        raise

    return ExplanationResult(
        final_map=minmax_normalize(s_prime),
        per_iteration=diags,
        target_class=cls,
        converged_at=converged_at,
        raw_final=s_prime if cfg.emit_raw else None,
        iter_wall_ms=wall,
    )


def explain_rise_baseline(image: ImageTensor, scorer, cfg: ExplainConfig) -> ExplanationResult:
    """Single-pass random-mask baseline: no attention, no iterations.

    The map is the score-weighted mask sum divided by p*N, minmax-normalized
    at the end like the iterative result.
    """
    image = _prepare_image(image, cfg)
    try:
        cls, _ = _pick_class(scorer, image, cfg)
        t0 = time.perf_counter()
        mask_set = random_rise_masks(
            cfg.input_side, cfg.input_side, cfg.rise_grid_n, cfg.rise_p, cfg.rise_masks, cfg.seed
        )
        scores = _score_mask_set(scorer, image, mask_set, cfg)
        raw = rise_aggregate(mask_set, scores, cls, cfg.rise_p)
        wall = [(time.perf_counter() - t0) * 1000.0]
    except OracleError as e:
        e.partial = []
        raise
    diag = IterationDiag(0, 0, 0, len(mask_set), len(mask_set), 0.0)
    return ExplanationResult(
        final_map=minmax_normalize(raw),
        per_iteration=[diag],
        target_class=cls,
        converged_at=None,
        raw_final=raw if cfg.emit_raw else None,
        iter_wall_ms=wall,
    )


def plain_occlusion_config(cfg: ExplainConfig) -> ExplainConfig:
    """The iterative config reduced to one sliding-window pass, no attention."""
    return replace(cfg, lambda_reg=1.0, max_iters=1)
