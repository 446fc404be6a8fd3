"""Command-line surface: explain images, evaluate saliency maps against
ground truth, compare methods on the synthetic suite, and benchmark.

Exit codes: 0 success, 1 usage, 2 oracle failure, 3 I/O. Every run writes a
manifest echoing its configuration; re-running with the same seed and an
in-process oracle reproduces the SMAP/JSON outputs bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from .engine import ExplainConfig, explain, explain_rise_baseline, plain_occlusion_config
from .errors import FormatError, OracleError
from .grid import (
    ImageTensor,
    SaliencyMap,
    load_image,
    load_saliency,
    resize_bilinear,
    save_saliency,
    _format_value,
)
from .masking import RegionMask
from .oracle import SyntheticPyramidProvider, WireOracle, resolve_features, resolve_oracle
from .scenes import make_suite, suite_config

EXIT_USAGE = 1
EXIT_ORACLE = 2
EXIT_IO = 3

METHODS = ("iassa", "rise", "occlusion")

# Stateless, safe to share across commands.
_PYRAMID = SyntheticPyramidProvider()


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    partial = path.with_name(path.name + ".partial")
    with open(partial, "wb") as f:
        f.write(data)
    os.replace(partial, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())


def _write_saliency(s: SaliencyMap, out_dir: Path, stem: str, formats: list[str]) -> list[str]:
    written = []
    ext = {"smap": ".smap", "csv": ".csv", "png-heatmap": ".png"}
    for fmt in formats:
        path = out_dir / (stem + ext[fmt])
        partial = path.with_name(path.name + ".partial")
        save_saliency(s, partial, fmt)
        os.replace(partial, path)
        written.append(str(path))
    return written


def _write_curve_csv(curve: metrics.Curve, path: Path) -> None:
    lines = [
        f"{_format_value(f)},{_format_value(s)}"
        for f, s in zip(curve.fractions, curve.scores)
    ]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


class _Manifest:
    """Records the run's provenance; timing fields vary between runs and are
    deliberately kept out of the deterministic result files."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.doc = {
            "command": command,
            "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "outputs": [],
            "wall_clock_s": {},
        }
        self._t = time.perf_counter()

    def stage(self, name: str) -> None:
        now = time.perf_counter()
        self.doc["wall_clock_s"][name] = round(now - self._t, 6)
        self._t = now

    def write(self, out_dir: Path) -> None:
        _write_json(out_dir / "manifest.json", self.doc)


# ---------------------------------------------------------------------------
# Shared argument plumbing
# ---------------------------------------------------------------------------


def _add_oracle_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--oracle",
        default=os.environ.get("IASSA_ORACLE"),
        help="builtin:<name> | exec:<command> | http:<url> (default: $IASSA_ORACLE)",
    )
    p.add_argument("--timeout", type=float, default=30.0, help="wire timeout in seconds")


def _add_engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", default="builtin:pyramid",
                   help="builtin:pyramid | same | exec:<command> | http:<url>")
    p.add_argument("--iters", type=int, default=25, help="iteration budget")
    p.add_argument("--lambda", dest="lambda_reg", type=float, default=0.5)
    p.add_argument("--t-thresh", type=float, default=0.3)
    p.add_argument("--window", type=float, default=45.0, help="initial window size")
    p.add_argument("--stride", type=float, default=8.0, help="initial stride")
    p.add_argument("--adjust-mode", default="convex", choices=["convex", "literal"])
    p.add_argument("--input-side", type=int, default=224)
    p.add_argument("--class", dest="target_class", type=int, default=None,
                   help="explicit class index (default: top-1 of the unmasked image)")
    p.add_argument("--method", default="iassa", choices=list(METHODS))
    p.add_argument("--rise-masks", type=int, default=2000)
    p.add_argument("--dump-masks", default=None, metavar="DIR",
                   help="debug: dump each round's masks as PGM files")


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--format", default="smap,png-heatmap",
                   help="comma list of smap,csv,png-heatmap")


def _config_from_args(args: argparse.Namespace) -> ExplainConfig:
    return ExplainConfig(
        input_side=args.input_side,
        w0=args.window,
        s0=args.stride,
        lambda_reg=args.lambda_reg,
        t_thresh=args.t_thresh,
        max_iters=args.iters,
        adjust_mode=args.adjust_mode,
        target_class=args.target_class,
        seed=args.seed,
        threads=args.threads,
        rise_masks=args.rise_masks,
        dump_masks_dir=args.dump_masks,
    )


def _run_method(method: str, image: ImageTensor, scorer, provider, cfg: ExplainConfig):
    if method == "rise":
        return explain_rise_baseline(image, scorer, cfg)
    if method == "occlusion":
        return explain(image, scorer, provider, plain_occlusion_config(cfg))
    return explain(image, scorer, provider, cfg)


def _close_quietly(*objs) -> None:
    for o in objs:
        if isinstance(o, WireOracle):
            o.close()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_explain(args: argparse.Namespace) -> int:
    if not args.oracle:
        print("explain: --oracle is required (or set IASSA_ORACLE)", file=sys.stderr)
        return EXIT_USAGE
    manifest = _Manifest("explain", args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    image = load_image(args.image)
    cfg = _config_from_args(args)
    manifest.stage("load")

    scorer = resolve_oracle(args.oracle, cfg.input_side, cfg.input_side, args.timeout)
    provider = None
    if args.method != "rise":
        provider = resolve_features(args.features, scorer, args.timeout)
    try:
        result = _run_method(args.method, image, scorer, provider, cfg)
    finally:
        _close_quietly(scorer, provider)
    manifest.stage("run")

    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    written = _write_saliency(result.final_map, out_dir, "saliency", formats)
    # Reference the map relative to result.json so outputs are portable and
    # re-runs into any directory stay bit-identical.
    smap_ref = next((w for w in written if w.endswith(".smap")), written[0] if written else "")
    _write_json(out_dir / "result.json", result.to_json_dict(final_map_ref=Path(smap_ref).name))
    manifest.stage("write")
    manifest.doc["outputs"] = written + [str(out_dir / "result.json")]
    manifest.write(out_dir)
    return 0


def _load_region(path: str) -> RegionMask:
    img = load_image(path)
    return RegionMask((img.data.mean(axis=2) > 0).astype(np.uint8))


def cmd_evaluate(args: argparse.Namespace) -> int:
    if not args.oracle:
        print("evaluate: --oracle is required (or set IASSA_ORACLE)", file=sys.stderr)
        return EXIT_USAGE
    manifest = _Manifest("evaluate", args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    s = load_saliency(args.saliency)
    gt = _load_region(args.gt)
    image = load_image(args.image)
    if (image.height, image.width) != (s.height, s.width):
        image = resize_bilinear(image, s.height, s.width)
    if gt.grid.shape != s.values.shape:
        raise FormatError("ground-truth mask dimensions do not match the saliency map")
    manifest.stage("load")

    scorer = resolve_oracle(args.oracle, s.height, s.width, args.timeout)
    try:
        if args.target_class is None:
            cls = int(np.argmax(scorer.batch([image])[0]))
        else:
            cls = args.target_class
        report, dele, ins = metrics.evaluate_saliency(
            scorer, image, s, gt, cls, t=args.t_thresh, step_px=args.step_px
        )
    finally:
        _close_quietly(scorer)
    manifest.stage("run")

    _write_json(out_dir / "report.json", report.to_json_dict())
    _write_curve_csv(dele, out_dir / "deletion.csv")
    _write_curve_csv(ins, out_dir / "insertion.csv")
    manifest.stage("write")
    manifest.doc["outputs"] = [
        str(out_dir / n) for n in ("report.json", "deletion.csv", "insertion.csv")
    ]
    manifest.write(out_dir)
    return 0


def compare_suite(
    seed: int, scenes: int, side: int, iters: int, rise_masks: int, threads: int = 1
) -> dict[str, dict[str, float]]:
    """Mean five-metric table (image and pixel level) per method."""
    suite = make_suite(seed, scenes, side)
    columns = ["deletion", "insertion", "f1", "iou", "pointing"]
    sums = {m: {f"{c}_{lvl}": 0.0 for c in columns for lvl in ("img", "px")} for m in METHODS}

    for scene in suite:
        scorer = scene.scorer()
        base = suite_config(
            side, max_iters=iters, seed=seed, threads=threads, rise_masks=rise_masks
        )
        for method in METHODS:
            result = _run_method(method, scene.image, scorer, None if method == "rise" else _PYRAMID, base)
            report, _, _ = metrics.evaluate_saliency(
                scorer, scene.image, result.final_map, scene.target, result.target_class
            )
            px = report.pixel_level
            row = sums[method]
            row["deletion_img"] += report.deletion_auc
            row["insertion_img"] += report.insertion_auc
            row["f1_img"] += report.f1
            row["iou_img"] += report.iou
            row["pointing_img"] += 1.0 if report.pointing_hit else 0.0
            row["deletion_px"] += px["deletion_auc"]
            row["insertion_px"] += px["insertion_auc"]
            row["f1_px"] += px["f1"]
            row["iou_px"] += px["iou"]
            row["pointing_px"] += px["pointing"]

    n = float(len(suite))
    return {m: {k: v / n for k, v in row.items()} for m, row in sums.items()}


def cmd_compare(args: argparse.Namespace) -> int:
    manifest = _Manifest("compare", args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table = compare_suite(
        args.seed, args.scenes, args.side, args.iters, args.rise_masks, args.threads
    )
    manifest.stage("run")

    header = [
        "method",
        "deletion_img", "insertion_img", "f1_img", "iou_img", "pointing_img",
        "deletion_px", "insertion_px", "f1_px", "iou_px", "pointing_px",
    ]
    lines = [",".join(header)]
    for method in METHODS:
        row = table[method]
        lines.append(method + "," + ",".join(_format_value(row[c]) for c in header[1:]))
    _atomic_write(out_dir / "compare.csv", ("\n".join(lines) + "\n").encode())
    manifest.stage("write")
    manifest.doc["outputs"] = [str(out_dir / "compare.csv")]
    manifest.write(out_dir)
    print("\n".join(lines))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    manifest = _Manifest("bench", args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    suite = make_suite(args.seed, 1, args.side)
    scene = suite[0]
    cfg = suite_config(args.side, max_iters=args.iters, seed=args.seed, threads=args.threads)
    result = explain(scene.image, scene.scorer(), _PYRAMID, cfg)
    manifest.stage("run")

    doc = {
        "side": args.side,
        "iterations": [
            {
                "k": d.k,
                "win": d.win,
                "stride": d.stride,
                "mask_count": d.mask_count,
                "oracle_calls": d.oracle_calls,
                "wall_ms": round(result.iter_wall_ms[i], 3),
            }
            for i, d in enumerate(result.per_iteration)
        ],
        "total_oracle_calls": result.total_oracle_calls,
        "total_wall_ms": round(sum(result.iter_wall_ms), 3),
        "converged_at": result.converged_at,
    }
    _write_json(out_dir / "bench.json", doc)
    manifest.stage("write")
    manifest.doc["outputs"] = [str(out_dir / "bench.json")]
    manifest.write(out_dir)
    print(json.dumps(doc, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iassa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="produce a saliency map for one image")
    p.add_argument("--image", required=True)
    _add_oracle_args(p)
    _add_engine_args(p)
    _add_common_args(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="score a saliency map against ground truth")
    p.add_argument("--saliency", required=True, help="SMAP file to evaluate")
    p.add_argument("--gt", required=True, help="ground-truth mask image (nonzero = object)")
    p.add_argument("--image", required=True)
    p.add_argument("--t-thresh", type=float, default=0.3)
    p.add_argument("--step-px", type=int, default=None)
    p.add_argument("--class", dest="target_class", type=int, default=None)
    _add_oracle_args(p)
    _add_common_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare methods on the synthetic suite")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--rise-masks", type=int, default=1000)
    _add_common_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time the loop on a synthetic scene")
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--iters", type=int, default=25)
    _add_common_args(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except OracleError as e:
        print(f"iassa: oracle failure: {e}", file=sys.stderr)
        return EXIT_ORACLE
    except (OSError, FormatError) as e:
        print(f"iassa: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"iassa: invalid arguments: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
