"""Command-line entry point: dataset, check-grad, train, eval, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger("stackrecon")


class UsageError(ValueError):
    """Bad or missing inputs detected before any work starts."""


@dataclass
class RunConfig:
    subcommand: str
    inputs: list[Path] = field(default_factory=list)
    output: Path | None = None

    def check(self) -> None:
        missing = [str(p) for p in self.inputs if not p.exists()]
        if missing:
            raise UsageError(f"missing input path(s): {', '.join(missing)}")
        if self.output is not None:
            self.output.mkdir(parents=True, exist_ok=True)


def _mesh_paths(items: list[str]) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("*.obj")) if p.is_dir() else [p])
    return paths


# -- subcommands --------------------------------------------------------------


def cmd_dataset(args) -> int:
    from .geometry.dataset import build_dataset

    meshes = _mesh_paths(args.meshes)
    RunConfig("dataset", meshes, Path(args.out)).check()
    if not meshes:
        raise UsageError("no .obj files found")
    manifest = build_dataset(
        meshes, args.out, category=args.category, seed=args.seed, train_ratio=args.train_ratio,
        n_polar=args.n_polar, n_azimuth=args.n_azimuth, resolution=args.resolution,
        voxel_resolution=args.voxel_resolution, silhouette_format=args.format, workers=args.workers,
    )
    n_train, n_test = len(manifest.split("train")), len(manifest.split("test"))
    print(f"{len(manifest.models)} models ({n_train} train, {n_test} test), "
          f"{manifest.n_polar * manifest.n_azimuth} views each, {manifest.warnings} skipped")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_check_grad(args) -> int:
    from .gradcheck import OP_TOLERANCE, STACK_TOLERANCE, op_suite, stack_report

    failures = []
    print(f"{'op':<26}{'max rel error':>16}  status")
    for name, check in op_suite().items():
        err = check(args.seed)
        ok = err <= OP_TOLERANCE
        print(f"{name:<26}{err:>16.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failures.append({"op": name, "error": err, "tolerance": OP_TOLERANCE})
    if not args.skip_stack:
        t0 = time.perf_counter()
        rep = stack_report(args.seed, max_coords=args.stack_coords)
        ok = rep.worst <= STACK_TOLERANCE
        print(f"{'stack (R=16, w=1/16)':<26}{rep.worst:>16.3e}  {'ok' if ok else 'FAIL'}"
              f"  ({rep.checked} coords checked, {rep.skipped} on kinks, {time.perf_counter() - t0:.1f}s)")
        if not ok:
            failures.append({"op": "stack", "error": rep.worst, "tolerance": STACK_TOLERANCE})
    if failures:
        names = ", ".join(f["op"] for f in failures)
        _emit_error("check-grad", "GradientMismatch", f"gradient check failed for: {names}", failures=failures)
        return 1
    return 0


def _train_config(args):
    from .training import TrainConfig

    base = TrainConfig.load(args.config).to_dict() if args.config else {}
    overrides = {
        "n_stages": args.n_stages, "lambdas": args.lambdas, "eps": args.eps, "lr": args.lr,
        "momentum": args.momentum, "optimizer": args.optimizer, "batch_size": args.batch_size,
        "max_steps": args.max_steps, "val_every": args.val_every, "seed": args.seed,
        "width_mult": args.width_mult, "resolution": args.resolution, "dtype": args.dtype,
        "activation": args.activation,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.share_weights:
        base["share_weights"] = True
    if args.n_stages is not None and args.lambdas is None and "lambdas" in base:
        if len(base["lambdas"] or ()) != args.n_stages:
            base["lambdas"] = None
    if args.n_stages is not None and len(base.get("etas") or ()) != args.n_stages:
        base["etas"] = None
    return TrainConfig.from_dict(base)


def cmd_train(args) -> int:
    from .geometry.dataset import DatasetManifest
    from .training import train

    manifest_path = Path(args.dataset)
    inputs = [manifest_path] + ([Path(args.config)] if args.config else [])
    RunConfig("train", inputs, Path(args.out)).check()
    config = _train_config(args)
    manifest = DatasetManifest.load(manifest_path)
    if manifest.voxel_resolution != config.resolution and not args.resample:
        raise UsageError(f"dataset voxels are R={manifest.voxel_resolution} but training at "
                         f"R={config.resolution}; pass --resample to resample")
    t0 = time.perf_counter()
    result = train(config, manifest, args.out)
    last = result.state.history[-1]
    print(f"trained {result.state.step} steps in {time.perf_counter() - t0:.1f}s; "
          f"final combined loss {last.combined:.4f}; best validation {result.state.best_score:.4f} "
          f"at step {result.state.best_step}")
    (Path(args.out) / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import run_experiment
    from .geometry.dataset import DatasetManifest

    ckpt, manifest_path, out = Path(args.checkpoint), Path(args.dataset), Path(args.out)
    RunConfig("eval", [ckpt, manifest_path], out).check()
    params, header = load_checkpoint(ckpt)
    manifest = DatasetManifest.load(manifest_path)
    report = run_experiment(params, manifest, args.mode, args.seed, hard_threshold_deg=args.hard_threshold,
                            threshold=args.threshold, resample=args.resample,
                            config_hash=header.get("config_hash", ""), split=args.split,
                            network=args.network)
    stem = f"{manifest.category}_{report.network}_{args.mode}"
    (out / f"{stem}.json").write_text(report.to_json())
    (out / f"{stem}_iou.csv").write_text(report.records_csv())
    agg = report.aggregates()
    print(f"{stem}: mean IoU {agg['all']['mean']:.4f} ± {agg['all']['stderr']:.4f} over {agg['all']['count']} images; "
          f"hard {_fmt(agg['hard']['mean'])} over {agg['hard']['count']}")
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def cmd_report(args) -> int:
    from .evaluation import ExperimentReport, report_table
    from .plotting import plot_hard_view_ious, plot_iou_histogram, plot_training_curve, read_train_log

    if not args.reports and not args.reference:
        raise UsageError("nothing to report: give report files or --reference")
    paths = [Path(p) for p in args.reports]
    logs = [Path(p) for p in args.train_logs or []]
    out = Path(args.out)
    RunConfig("report", paths + logs, out).check()
    reports = [ExperimentReport.from_json(p.read_text()) for p in paths]
    markdown, table_csv = report_table(reports, reference=args.reference)
    (out / "table.md").write_text(markdown)
    (out / "table.csv").write_text(table_csv)
    figures = []
    groups: dict[tuple[str, str], list[ExperimentReport]] = {}
    for rep in reports:
        groups.setdefault((rep.category, rep.experiment), []).append(rep)
    for (category, experiment), reps in sorted(groups.items()):
        figures.append(plot_hard_view_ious(reps, out / f"{category}_{experiment}_hard_views.png",
                                           title=f"{category}, {experiment}: hard views"))
        figures.append(plot_iou_histogram(reps, out / f"{category}_{experiment}_histogram.png"))
    for p in logs:
        figures.append(plot_training_curve(read_train_log(p), out / f"{p.parent.name or 'run'}_training.png"))
    print(markdown, end="")
    for f in figures:
        print(f"figure: {f}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stackrecon", description="Single-view voxel reconstruction with stacked networks")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="render silhouettes and voxelize a folder of meshes")
    p.add_argument("meshes", nargs="+", help=".obj files or directories containing them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--category", default="objects")
    p.add_argument("--seed", type=int, default=0, help="train/test split seed")
    p.add_argument("--train-ratio", type=float, default=0.78)
    p.add_argument("--resolution", type=int, default=32, help="silhouette size and default voxel R")
    p.add_argument("--voxel-resolution", type=int, default=None)
    p.add_argument("--n-polar", type=int, default=10)
    p.add_argument("--n-azimuth", type=int, default=18)
    p.add_argument("--format", choices=("pbm", "bits"), default="pbm")
    p.add_argument("--workers", type=int, default=1, help="worker processes (0 = all cores)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("check-grad", help="finite-difference check of every op and the tiny stack")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stack-coords", type=int, default=8, help="coordinates probed per stack tensor")
    p.add_argument("--skip-stack", action="store_true")
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("train", help="train a single or stacked network on a dataset")
    p.add_argument("--dataset", required=True, help="manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TrainConfig JSON; flags override it")
    p.add_argument("--n-stages", type=int)
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", help="per-stage loss weights, sum 1")
    p.add_argument("--eps", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--optimizer", choices=("sgd_momentum", "adam"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--val-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--width-mult", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--activation", choices=("leaky_relu", "relu"))
    p.add_argument("--share-weights", action="store_true")
    p.add_argument("--resample", action="store_true", help="resample voxels to the training resolution")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint under the E1 or E2 view protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("E1", "E2"), default="E1")
    p.add_argument("--seed", type=int, default=0, help="E2 view perturbation seed")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--network", choices=("single", "stacked"), help="label override")
    p.add_argument("--hard-threshold", type=float, default=15.0, help="degrees from a hard axis")
    p.add_argument("--threshold", type=float, default=0.5, help="occupancy binarization threshold")
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tables and figures from evaluation reports")
    p.add_argument("reports", nargs="*", help="report JSON files written by eval")
    p.add_argument("--out", required=True)
    p.add_argument("--train-logs", nargs="*", help="train_log.csv files to plot")
    p.add_argument("--reference", action="store_true", help="add published values as labelled rows")
    p.set_defaults(func=cmd_report)
    return parser


def _emit_error(command: str, kind: str, message: str, **extra) -> None:
    payload = {"command": command, "error": kind, "message": message, **extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) == 0:
        args.workers = None
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON summary
        if args.verbose:
            log.exception("command failed")
        _emit_error(args.command, type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
