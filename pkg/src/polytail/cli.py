"""Command-line entry point: ``polytail <subcommand> ...``.

Exit status is 0 when every cell succeeded and every gating check passed,
1 when a cell or check failed, and 2 for bad input (config, schema, usage).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import (
    Noise,
    ShiftConfig,
    generate_label_shift,
    generate_toy_2d,
    read_dataset,
    write_dataset,
    write_toy_csv,
)
from .harness import Experiment, apply_profile, load_config, run_experiment
from .losses import LeftPiece, exponential_loss, logistic_loss, poly_loss
from .plotting import PlotSpec, SchemaError, emit_plot
from .solvers import write_direction_csv
from .trainer import TrainingDiverged, TrainOptions, train, write_trace_csv
from .weights import minority_scheme, write_weights_csv

log = logging.getLogger("polytail")

EXPERIMENT_COMMANDS = {
    "sweep-tau": Experiment.SWEEP_TAU,
    "sweep-w": Experiment.SWEEP_W,
    "figure1": Experiment.FIGURE1,
    "verify-bias": Experiment.VERIFY_BIAS,
    "good-run": Experiment.GOOD_RUN,
}


def _shift_from_args(args) -> ShiftConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        base = dict(raw.get("shift", raw))
    for key in ("d", "n", "tau", "mu_norm_sq", "noise", "rotation_seed"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
            if key == "d" and args.mu_norm_sq is None:
                base.pop("mu_norm_sq", None)
    return ShiftConfig(**base)


def _add_shift_args(p):
    p.add_argument("--config", type=Path, help="JSON file with ShiftConfig keys (or a 'shift' block)")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--mu-norm-sq", dest="mu_norm_sq", type=float)
    p.add_argument("--noise", choices=[m.value for m in Noise])
    p.add_argument("--rotation-seed", dest="rotation_seed", type=int)


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "toy2d":
        ds = generate_toy_2d(args.n_major, args.n_minor, args.separation, args.seed)
        write_toy_csv(ds, out / "toy2d.csv")
    else:
        ds = generate_label_shift(_shift_from_args(args), args.seed)
    write_dataset(ds, out / "dataset.bin")
    print(f"wrote {ds.n} x {ds.d} dataset to {out / 'dataset.bin'}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        ds = read_dataset(args.data)
    else:
        ds = generate_label_shift(_shift_from_args(args), args.seed)
    if args.loss == "poly":
        spec = poly_loss(args.alpha, args.beta, args.left_piece)
    elif args.loss == "logistic":
        spec = logistic_loss()
    else:
        spec = exponential_loss()
    ws = minority_scheme(ds.labels, args.w)
    step = args.step_size
    if step is not None and step != "local":
        step = float(step)
    opts = TrainOptions(step_size=step, step_scale=args.step_scale, max_iters=args.max_iters,
                        direction_tol=args.direction_tol, init=args.init, record_every=args.record_every)
    try:
        trace = train(ds, ws, spec, opts)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        if exc.trace is not None:
            write_trace_csv(exc.trace, out / "trace.csv", {"loss": spec.label(), "status": "diverged"})
        return 1
    header = {"loss": spec.label(), "w": args.w, "seed": args.seed, "iterations": trace.iterations,
              "stop_reason": trace.stop_reason, "flags": ";".join(trace.flags)}
    write_trace_csv(trace, out / "trace.csv", header)
    write_direction_csv(trace.direction, out / "direction.csv")
    write_weights_csv(ws, ds.group_of, out / "weights.csv")
    emit_plot(out / "trace.csv", PlotSpec("iter", "loss", logx=True, logy=True, ylabel="weighted loss"),
              out / "trace.svg")
    print(f"{trace.iterations} iterations, stop: {trace.stop_reason}, final loss {trace.final.loss:.6g}")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, EXPERIMENT_COMMANDS[args.command])
    if args.profile:
        cfg = apply_profile(cfg, args.profile)
    if args.seed is not None:
        cfg.seeds = list(range(args.seed, args.seed + len(cfg.seeds)))
    if args.out:
        cfg.output_dir = str(args.out)
    result = run_experiment(cfg)
    for c in result.checks:
        tag = "PASS" if c.passed else ("FAIL" if c.gating else "info")
        print(f"[{tag}] {c.name}: value={c.value:.6g} threshold={c.threshold:.6g} {c.detail}".rstrip())
    print(f"failed_cells={result.failed_cells}")
    print(f"determinism_hash={result.digest}")
    return 0 if result.ok else 1


def cmd_plot(args) -> int:
    spec = PlotSpec(args.x, args.y, args.series, args.yerr, args.logx, args.logy, args.title or "")
    res = emit_plot(args.csv, spec, args.out)
    print(f"wrote {res.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polytail", description="Polynomially-tailed losses, importance weights and label-shift experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a dataset in the binary format")
    p.add_argument("--kind", choices=["label-shift", "toy2d"], default="label-shift")
    _add_shift_args(p)
    p.add_argument("--n-major", type=int, default=50)
    p.add_argument("--n-minor", type=int, default=5)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="gradient descent on one dataset")
    p.add_argument("--data", type=Path, help="dataset file; generated from the shift options when omitted")
    _add_shift_args(p)
    p.add_argument("--loss", choices=["poly", "logistic", "exponential"], default="poly")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--left-piece", choices=[m.value for m in LeftPiece], default=LeftPiece.PAPER_SEC5.value)
    p.add_argument("--w", type=float, default=1.0, help="minority-class weight (majority weight is 1)")
    p.add_argument("--step-size", help="a positive number or 'local'; default is the curvature bound")
    p.add_argument("--step-scale", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=1_000_000)
    p.add_argument("--direction-tol", type=float, default=1e-4)
    p.add_argument("--init", choices=["zero", "theory"], default="zero")
    p.add_argument("--record-every", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_train)

    for name in EXPERIMENT_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int, help="first seed; the seed count comes from the config")
        p.add_argument("--out", type=Path)
        p.add_argument("--profile", choices=["desk", "paper"])
        p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="SVG line chart from a CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--series")
    p.add_argument("--yerr")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--logy", action="store_true")
    p.add_argument("--title")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
