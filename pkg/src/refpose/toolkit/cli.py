"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 pipeline failure, 4 check failure.

A view directory holds ``color.png`` (8-bit RGB), ``depth.png`` (16-bit mm),
``mask.png`` (8-bit, nonzero = object) and, for the reference, ``pose.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import FormatError, RefPoseError

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_CHECK = 0, 2, 3, 4
SCAN_TOL = {"single": 1e-5, "double": 1e-10}
GRAD_TOL = 1e-4

log = logging.getLogger("refpose")


class InputError(Exception):
    pass


def seed_arg(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def feature_mode_arg(text: str) -> str:
    if text in ("oracle", "untrained") or (text.startswith("weights:") and len(text) > len("weights:")):
        return text
    raise argparse.ArgumentTypeError("expected oracle, untrained or weights:<path>")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=seed_arg, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--precision", choices=("single", "double"), default="single")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refpose", description="Single-reference-view 6D pose estimation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the query pose from one posed reference view")
    p.add_argument("reference", type=Path, help="reference view directory (with pose.json)")
    p.add_argument("query", type=Path, help="query view directory")
    p.add_argument("--intrinsics", type=Path, required=True)
    p.add_argument("--gt-pose", type=Path, help="query ground truth, required by the oracle feature mode "
                                                "(defaults to pose.json in the query directory)")
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--feature-mode", type=feature_mode_arg, default="oracle")
    p.add_argument("--n-points", type=int, default=2048)
    _common(p)

    p = sub.add_parser("synth-eval", help="evaluate on seeded synthetic view pairs")
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--feature-mode", type=feature_mode_arg, default="oracle")
    p.add_argument("--rot-gap", type=float, default=30.0, help="max reference-to-query rotation (deg)")
    p.add_argument("--trans-gap", type=float, default=0.05, help="max query shift (m)")
    p.add_argument("--init-gap", type=float, default=None, help="start from ground truth rotated by this (deg)")
    p.add_argument("--capture-radius", type=float, default=math.inf, help="oracle reliability radius (m)")
    p.add_argument("--points-only", action="store_true", help="drop image features")
    p.add_argument("--n-points", type=int, default=2048)
    _common(p)

    p = sub.add_parser("scan-check", help="selective scan against the naive recurrence")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--max-len", type=int, default=2048)
    p.add_argument("--max-state", type=int, default=32)
    _common(p)

    p = sub.add_parser("gradcheck", help="loss gradient against central differences")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--entries", type=int, default=10)
    _common(p)

    p = sub.add_parser("train-toy", help="micro-scale aligner training")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.02)
    _common(p)

    sub.add_parser("version", help="print the package version")
    return parser


def _dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise InputError(f"{path}: missing {what}")
    return path


def _load_view(directory: Path, with_pose: bool):
    from ..align.pipeline import View
    from .io import read_color, read_depth, read_mask, read_pose

    color = read_color(_require(directory / "color.png", "color image"))
    depth = read_depth(_require(directory / "depth.png", "depth image"))
    mask = read_mask(_require(directory / "mask.png", "mask image"))
    pose = read_pose(_require(directory / "pose.json", "reference pose")) if with_pose else None
    if not (color.shape[:2] == depth.shape == mask.shape):
        raise InputError(f"{directory}: color {color.shape[:2]}, depth {depth.shape} and mask {mask.shape} differ")
    return View(color, depth, mask, pose, depth_scale=0.001)


def _cast(weights, aligners, precision: str):
    if precision == "single" or weights is None:
        return weights, aligners
    from ..align.pipeline import AlignerWeights
    from ..seqmodel.weights import WeightBundle

    to64 = lambda d: {k: v.astype(np.float64) for k, v in d.items()}
    return (WeightBundle(to64(weights.tensors), weights.config),
            AlignerWeights(to64(aligners.initial), to64(aligners.iterative), aligners.heads))


def cmd_estimate(args) -> int:
    from ..align.pipeline import SSMExtractor, estimate
    from ..synth.evaluate import EvalConfig, _models
    from ..synth.oracle import OracleExtractor
    from .io import pose_to_dict, read_intrinsics, read_pose, write_pose

    intr = read_intrinsics(_require(args.intrinsics, "intrinsics file"))
    ref = _load_view(args.reference, with_pose=True)
    query = _load_view(args.query, with_pose=False)
    if args.feature_mode == "oracle":
        gt_path = args.gt_pose or args.query / "pose.json"
        extractor = OracleExtractor(read_pose(_require(gt_path, "ground-truth pose for oracle features")), seed=args.seed)
        aligners = None
    else:
        weights, aligners = _cast(*_models(EvalConfig(feature_mode=args.feature_mode, n_points=args.n_points)),
                                  args.precision)
        extractor = SSMExtractor(weights)
    try:
        res = estimate(ref, query, intr, extractor, aligners, iters=args.iters, n_points=args.n_points, seed=args.seed)
    except RefPoseError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        _dump({"failed": True, "message": str(exc), "iterations": []}, args.out_dir / "trace.json")
        return EXIT_PIPELINE
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_pose(res.pose, args.out_dir / "pose.json")
    trace = [{"iteration": i, "pose": pose_to_dict(r.pose), "correspondences": r.n_correspondences,
              "mean_similarity": r.mean_similarity} for i, r in enumerate(res.trace, start=1)]
    _dump({"failed": res.failed, "message": res.message, "iterations": trace}, args.out_dir / "trace.json")
    for t in trace:
        print(f"iter {t['iteration']}: {t['correspondences']} correspondences, mean similarity {t['mean_similarity']:.4f}")
    if res.failed:
        print(f"pipeline failure: {res.message} (last estimate written)", file=sys.stderr)
        return EXIT_PIPELINE
    print(f"pose written to {args.out_dir / 'pose.json'}")
    return EXIT_OK


def cmd_synth_eval(args) -> int:
    from ..synth.evaluate import EvalConfig, _models, eval_run
    from ..synth.scene import PoseGap
    from .io import write_report

    if args.pairs < 1 or args.iters < 1 or args.threads < 1:
        raise InputError("--pairs, --iters and --threads must be positive")
    cfg = EvalConfig(n_pairs=args.pairs, seed=args.seed, iters=args.iters, feature_mode=args.feature_mode,
                     pose_gap=PoseGap(args.rot_gap, args.trans_gap), init_gap_deg=args.init_gap,
                     capture_radius=args.capture_radius, use_rgb=not args.points_only,
                     n_points=args.n_points, threads=args.threads)
    report = eval_run(cfg, _cast(*_models(cfg), args.precision))
    report.config["precision"] = args.precision
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, args.out_dir / "report.json")
    agg = report.aggregate
    print(f"pairs {agg['n']}  failed {agg['n_failed']}  ADD-0.1d {agg['recall_add_0.1d']:.3f}  "
          f"AUC {agg['auc_add']:.3f}  median ADD {agg['median_add']:.6f} m")
    print("median ADD per iteration: " + " ".join(f"{v:.6f}" for v in agg["median_add_per_iteration"]))
    return EXIT_OK


def cmd_scan_check(args) -> int:
    from .checks import ScanCheckConfig, scan_check

    cfg = ScanCheckConfig(instances=args.instances, max_len=args.max_len, max_state=args.max_state, seed=args.seed)
    err = scan_check(cfg, np.float32 if args.precision == "single" else np.float64)
    tol = SCAN_TOL[args.precision]
    print(f"scan-check ({args.precision}, {cfg.instances} instances): max abs error {err:.3e} (tolerance {tol:.0e})")
    return EXIT_OK if err < tol else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    from .checks import GradCheckConfig, gradcheck

    err = gradcheck(GradCheckConfig(instances=args.instances, entries=args.entries, seed=args.seed))
    print(f"gradcheck: max relative error {err:.3e} (tolerance {GRAD_TOL:.0e})")
    return EXIT_OK if err < GRAD_TOL else EXIT_CHECK


def cmd_train_toy(args) -> int:
    from ..align.toy import train_toy

    _, summary = train_toy(steps=args.steps, seed=args.seed, lr=args.lr)
    _dump(summary, args.out_dir / "toy.json")
    ratio = summary["final_loss"] / summary["initial_loss"]
    print(f"loss {summary['initial_loss']:.4f} -> {summary['final_loss']:.4f} (ratio {ratio:.3f})")
    print("held-out accuracy (iter 1, iter 2): "
          f"{summary['initial_heldout_accuracy']} -> {summary['final_heldout_accuracy']}")
    ok = ratio <= 0.5 and all(a >= b for a, b in zip(summary["final_heldout_accuracy"],
                                                       summary["initial_heldout_accuracy"]))
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"estimate": cmd_estimate, "synth-eval": cmd_synth_eval, "scan-check": cmd_scan_check,
            "gradcheck": cmd_gradcheck, "train-toy": cmd_train_toy}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "version":
        print(f"refpose {__version__}")
        return EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (InputError, FormatError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RefPoseError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
