"""Command-line entry point.

Subcommands: pretrain, run <experiment>, eval, equilibrium-check, plot.
Output root resolution: --out flag, else the IPDLAB_OUT environment
variable, else the configured paths.out_root.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PROFILES, build_spec, load_config, serialize_config
from .errors import IpdLabError
from .experiments import EXPERIMENT_KINDS, run_experiment
from .metrics import read_metrics
from .plotting import plot_metric
from .population import no_tabular_pretrain_source
from .ppi import build_pretrain_dataset

OUT_ENV = "IPDLAB_OUT"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--profile", choices=PROFILES, default="desk")
    parser.add_argument("--seed", type=int, default=None, help="run a single seed")
    parser.add_argument("--algo", choices=("ppi", "a2c"), default=None)
    parser.add_argument("--out", type=Path, default=None, help="output root directory")


def _resolve(args, kind: str | None = None):
    overrides: dict = {}
    if args.algo:
        overrides.setdefault("experiment", {})["algorithm"] = args.algo
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else None)
    if out is not None:
        overrides.setdefault("paths", {})["out_root"] = str(out)
    if getattr(args, "checkpoint", None):
        overrides.setdefault("experiment", {})["checkpoint"] = str(args.checkpoint)
    if getattr(args, "dataset", None):
        overrides.setdefault("experiment", {})["dataset"] = str(args.dataset)
    cfg = load_config(args.config, profile=args.profile, overrides=overrides)
    if kind is not None:
        cfg["experiment"]["kind"] = kind
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    spec = build_spec(cfg, kind=cfg["experiment"]["kind"] or "mixed_training")
    rng = np.random.default_rng(spec.seeds[0])
    n = spec.ppi.n_pretrain_trajectories
    if spec.pool.ablation == "no_tabular":
        ds = no_tabular_pretrain_source(n, spec.episode, rng)
    else:
        ds = build_pretrain_dataset(n, spec.episode, rng, cond_dim=spec.pool.cond_dim)
    out_file = args.out_file or Path(cfg["paths"]["out_root"]) / "pretrain.jsonl"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    count = ds.save(out_file)
    digest = hashlib.sha256(out_file.read_bytes()).hexdigest()
    print(f"wrote {count} trajectory records ({n} episodes) to {out_file}")
    print(f"sha256 {digest}")
    return 0


def cmd_run(args) -> int:
    cfg = _resolve(args, kind=args.experiment)
    spec = build_spec(cfg)
    results = run_experiment(spec, resolved_config=cfg)
    base = Path(spec.out_root) / spec.kind / spec.algorithm
    print(f"completed {spec.kind} [{spec.algorithm}] seeds={list(spec.seeds)} -> {base}")
    for seed, result in results.items():
        if result is not None:
            print(f"  seed {seed}: {result}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, kind="eval_vs_fixed")
    spec = build_spec(cfg)
    results = run_experiment(spec, resolved_config=cfg)
    for seed, fq in results.items():
        for name, value in fq.items():
            print(f"seed {seed} vs {name}: final-quarter per-round reward {value:.4f}")
    return 0


def cmd_equilibrium(args) -> int:
    cfg = _resolve(args, kind="equilibrium_check")
    spec = build_spec(cfg)
    results = run_experiment(spec, resolved_config=cfg)
    for seed, report in results.items():
        print(
            f"seed {seed}: on_path_action_kl={report.on_path_action_kl:.6g} "
            f"q_flatness={report.q_flatness:.6g} "
            f"(support threshold {report.support_threshold})"
        )
    return 0


def cmd_plot(args) -> int:
    rows = []
    for path in args.csv:
        rows.extend(read_metrics(path))
    if args.experiment:
        rows = [r for r in rows if r.experiment == args.experiment]
    if args.algo:
        rows = [r for r in rows if r.algorithm == args.algo]
    out_dir = args.out or Path(".")
    for metric in args.metric:
        path = plot_metric(rows, metric, Path(out_dir) / f"{metric}.svg", outer=args.outer)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipdlab",
        description="Iterated prisoner's dilemma multi-agent learning experiments",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="generate the sequence-model pretraining dataset")
    _add_common(p)
    p.add_argument("--out-file", type=Path, default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("run", help="run an experiment across its seeds")
    p.add_argument("experiment", choices=EXPERIMENT_KINDS)
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="prerequisite checkpoint (step2/step3/eval)")
    p.add_argument("--dataset", type=Path, default=None,
                   help="prerequisite dataset (ppi step3)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the named strategies")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("equilibrium-check", help="predictive-equilibrium diagnostics")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(fn=cmd_equilibrium)

    p = sub.add_parser("plot", help="render metric curves (mean +- std across seeds) as SVG")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("--metric", action="append", required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--outer", type=int, default=None,
                   help="checkpoint index for within-episode curves")
    p.add_argument("--experiment", default=None)
    p.add_argument("--algo", default=None)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except IpdLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted; partial results were flushed", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
