""" ``repcnn`` command line: synth, train, fuse, eval, ablate and bench.

Every command exits 0 on success and 1 with a one-line ``[ERROR]`` message
on a validation failure; argparse usage errors exit 2. Log verbosity comes
from ``--log-level`` or the REPCNN_LOG environment variable.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from ._errors import ConfigError, RepCNNError
from ._logger import LOGGER_NAME, setup_logger
from ._version import __version__
from .data.synth import MANIFEST_NAME, generate_synthetic_dataset
from .eval.bench import ITERATIONS, WARMUP, bench, write_bench_csv
from .eval.metrics import write_det_csv, write_summary_csv
from .eval.plot import plot_files
from .experiment import (
    ExperimentSpec, ablate, calibration_inputs, evaluate_model, load_experiment, merged_curve, train_experiment,
    write_ablation_csv,
)
from .data.manifest import load_manifest
from .graph import FUSED, TRAIN
from .model import build_repcnn
from .model_file import load_model, save_model
from .reparam import calibrate_clip_bounds, equivalence_report, fuse_model
from .train import export_loss_curves

log = logging.getLogger(LOGGER_NAME)

MODEL_SUFFIX = ".rpcn"
""" Model file extension """


def _branch_list(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError(f"branch counts must be >= 1, got {text!r}")
    return counts


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _prepare_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_spec(args, require_manifest: bool = True) -> ExperimentSpec:
    spec = load_experiment(args.spec, require_manifest=False)
    if getattr(args, "manifest", None):
        spec.manifest = os.path.abspath(args.manifest)
    if getattr(args, "fa_target", None) is not None:
        spec.eval.fa_target = args.fa_target
    return spec.validate(require_manifest=require_manifest)


def cmd_synth(args) -> int:
    """ Generate the synthetic dataset next to the spec's manifest path """
    spec = _load_spec(args, require_manifest=False)
    out_dir = args.out or os.path.dirname(spec.manifest_path)
    manifest = generate_synthetic_dataset(spec.synth, _prepare_out(out_dir), seed=args.seed)
    if args.out is None and os.path.basename(spec.manifest_path) != MANIFEST_NAME:
        manifest.save(spec.manifest_path)
    log.info(f"synthetic dataset ready in {out_dir}")
    return 0


def cmd_train(args) -> int:
    """ Train one model per seed, write model files and loss curves """
    spec = _load_spec(args)
    if args.seed is not None:
        spec.seeds = [args.seed]
    if args.branches is not None:
        spec.model.num_branches = args.branches
    spec.validate()
    out = _prepare_out(args.out or spec.output_path)
    runs = train_experiment(spec, threads=args.threads, progress=not args.no_progress)
    for run in runs:
        path = os.path.join(out, f"model_seed{run.seed}{MODEL_SUFFIX}")
        size = save_model(run.model, path)
        export_loss_curves(run.curve, os.path.join(out, f"loss_seed{run.seed}.csv"))
        log.info(f"seed {run.seed}: wrote {path} ({size} bytes), final val loss {run.curve.final_val_loss():.6f}")
    curve = merged_curve(runs)
    export_loss_curves(curve, os.path.join(out, "loss_curves.csv"))
    log.info(f"mean final val loss over {len(runs)} seed(s): {curve.final_val_loss():.6f}")
    return 0


def cmd_fuse(args) -> int:
    """ Fuse a training model file, calibrating clip bounds on validation windows when a spec is given """
    graph = load_model(args.model)
    if graph.mode != TRAIN:
        raise ConfigError(f"{args.model} is already {graph.mode}, only train-mode models can be fused")
    bounds = None
    if args.spec:
        spec = _load_spec(args)
        inputs = calibration_inputs(spec, seed=args.seed or 0, threads=args.threads)
        if inputs is not None:
            bounds = calibrate_clip_bounds(graph, inputs)
        else:
            log.warning("no validation windows for calibration, clip bounds left at +inf")
    fused = fuse_model(graph, bounds)
    report = equivalence_report(graph, fused, seed=args.seed or 0)
    fused.hyperparameters["equivalence"] = report
    out = args.out or os.path.splitext(args.model)[0] + f"_fused{MODEL_SUFFIX}"
    if os.path.dirname(out):
        _prepare_out(os.path.dirname(out))
    size = save_model(fused, out)
    log.debug(fused.summary())
    log.info(f"fused {args.model} -> {out} ({size} bytes, {fused.num_parameters()} parameters); "
             f"max deviation {report['max_abs']:.3e} abs, {report['max_rel']:.3e} rel "
             f"over {report['num_inputs']} inputs")
    return 0


def cmd_eval(args) -> int:
    """ Stream the test splits through a model and write the DET curve and metric summary """
    graph = load_model(args.model)
    if args.spec:
        spec = _load_spec(args)
        manifest = load_manifest(spec.manifest_path)
        cfg = spec.eval
        default_out = spec.output_path
    elif args.manifest:
        manifest = load_manifest(args.manifest)
        cfg = ExperimentSpec().eval
        if args.fa_target is not None:
            cfg.fa_target = args.fa_target
        default_out = os.path.dirname(os.path.abspath(args.model))
    else:
        raise ConfigError("eval needs --manifest or --spec")
    out = _prepare_out(args.out or default_out)
    summary, curve = evaluate_model(graph, manifest, cfg.validate(), threads=args.threads)
    write_det_csv(curve, os.path.join(out, "det.csv"))
    write_summary_csv(summary, os.path.join(out, "summary.csv"))
    log.info(f"{args.model}: FRR {summary.frr_at_target:.3f}% @ {summary.fa_target} FA/hr"
             f"{' (clamped)' if summary.clamped else ''}, AUC {summary.auc:.4f}; wrote det.csv and summary.csv to {out}")
    return 0


def cmd_ablate(args) -> int:
    """ Train every branch count over the spec's seeds and tabulate accuracy """
    spec = _load_spec(args)
    if args.seed is not None:
        spec.seeds = [args.seed]
        spec.validate()
    out = _prepare_out(args.out or spec.output_path)
    rows = ablate(spec, args.branches, threads=args.threads, progress=not args.no_progress)
    for row in rows:
        export_loss_curves(row.curve, os.path.join(out, f"ablation_loss_n{row.branches}.csv"))
    write_ablation_csv(rows, os.path.join(out, "ablation.csv"))
    log.info(f"wrote ablation.csv with {len(rows)} rows to {out}")
    return 0


def cmd_bench(args) -> int:
    """ Latency and peak activation memory of a training graph and its fused graph """
    if args.model:
        graph = load_model(args.model)
        if graph.mode == FUSED:
            raise ConfigError(f"{args.model} is fused; bench needs the train-mode model to compare against")
    else:
        graph = build_repcnn(rng=args.seed or 0)
    fused = fuse_model(graph)
    report = bench(graph, fused, input_seconds=args.seconds, iterations=args.iterations, warmup=args.warmup)
    out = _prepare_out(args.out or ".")
    write_bench_csv(report, os.path.join(out, "bench.csv"))
    log.info(f"wrote bench.csv to {out}")
    return 0


def cmd_plot(args) -> int:
    """ Draw DET and loss-curve CSV files as PNG figures """
    written = plot_files(args.det or [], args.loss or [], _prepare_out(args.out or "."), args.fa_target)
    log.info(f"wrote {', '.join(os.path.basename(p) for p in written)} to {args.out or '.'}")
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repcnn", description="RepCNN wake-word toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Log level, default is REPCNN_LOG or info")
    parser.add_argument("--log-file", default=None, help="Also log to this rotating file")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p, spec_required=False):
        p.add_argument("--spec", required=spec_required, help="Experiment spec JSON")
        p.add_argument("--out", default=None, help="Output path")
        p.add_argument("--seed", type=int, default=None, help="Seed override")
        p.add_argument("--threads", type=_positive_int, default=1, help="Worker threads, default is 1")

    p = sub.add_parser("synth", help="Generate the synthetic keyword dataset")
    common(p, spec_required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="Train one model per seed")
    common(p, spec_required=True)
    p.add_argument("--manifest", default=None, help="Manifest override")
    p.add_argument("--branches", type=_positive_int, default=None, help="Branches per RepConvBlock override")
    p.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="Fuse a training model into its inference graph")
    common(p)
    p.add_argument("--model", required=True, help="Train-mode model file")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="FRR at the target FA/hr, DET curve and AUC on the test splits")
    common(p)
    p.add_argument("--model", required=True, help="Model file")
    p.add_argument("--manifest", default=None, help="Manifest with test-positive and test-negative records")
    p.add_argument("--fa-target", type=float, default=None, help="FA/hr operating point, default is 3.0")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Branch-count ablation")
    common(p, spec_required=True)
    p.add_argument("--manifest", default=None, help="Manifest override")
    p.add_argument("--branches", type=_branch_list, default=None, help="Comma-separated branch counts, default 1,2,3,4,5")
    p.add_argument("--fa-target", type=float, default=None, help="FA/hr operating point, default is 3.0")
    p.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="Latency and peak memory, training graph against fused graph")
    p.add_argument("--model", default=None, help="Train-mode model file, default is a freshly built RepCNN")
    p.add_argument("--out", default=None, help="Output directory")
    p.add_argument("--seed", type=int, default=None, help="Initialization seed without --model")
    p.add_argument("--iterations", type=_positive_int, default=ITERATIONS, help=f"Timed outputs, default is {ITERATIONS}")
    p.add_argument("--warmup", type=int, default=WARMUP, help=f"Untimed outputs, default is {WARMUP}")
    p.add_argument("--seconds", type=float, default=1.0, help="Input length of the peak-memory pass, default is 1.0")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="DET and loss-curve figures, needs the plot extra")
    p.add_argument("--det", nargs="+", default=None, metavar="CSV", help="DET curve CSV files")
    p.add_argument("--loss", nargs="+", default=None, metavar="CSV", help="Loss-curve CSV files")
    p.add_argument("--fa-target", type=float, default=None, help="FA/hr operating point marked on the DET plot")
    p.add_argument("--out", default=None, help="Output directory, default is the working directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    setup_logger(level=args.log_level, file=args.log_file)
    try:
        return args.func(args)
    except (RepCNNError, OSError) as e:
        message = " ".join(str(e).split())
        log.error(f"{args.command}: {message}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
