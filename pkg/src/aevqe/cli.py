"""Command-line entry point: one subcommand per experiment."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import Sequence

from . import __version__
from .experiments import ExperimentConfig, default_config, format_config, load_config, run_experiment

log = logging.getLogger("aevqe")

COMMANDS = {
    "h2-pec": "H2_PEC",
    "tfim-levels": "TFIM_LEVELS",
    "tfim-k4": "TFIM_K4",
    "magnetization": "MAGNETIZATION",
    "scaling-qubits": "SCALING_QUBITS",
    "scaling-ancilla": "SCALING_ANCILLA",
    "optimizers": "OPTIMIZER_COMPARE",
    "hyperparams": "HYPERPARAM_SCAN",
    "algo-compare": "ALGO_COMPARE",
    "shot-budget": "SHOT_BUDGET",
}

HELP = {
    "h2-pec": "H2 potential energy curve (ground and first excited level)",
    "tfim-levels": "two Ising levels before and after parity verification",
    "tfim-k4": "four Ising levels from two ancillas",
    "magnetization": "ground-state magnetization versus field",
    "scaling-qubits": "success rate versus chain length",
    "scaling-ancilla": "success rate versus ancilla count",
    "optimizers": "SPSA, gradient descent, Powell and GA side by side",
    "hyperparams": "SPSA learning-rate and perturbation scan",
    "algo-compare": "iterations to convergence for AEVQE, WSSVQE and MCVQE",
    "shot-budget": "per-circuit shot allocation tables",
}


def _shots(text: str) -> int | None:
    if text.lower() == "exact":
        return None
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("shots must be positive or 'exact'")
    return value


def _on_off(text: str) -> bool:
    lowered = text.lower()
    if lowered not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return lowered == "on"


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aevqe", description="Run ancilla-entangled VQE experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="INI file with an [experiment] section")
        p.add_argument("--trials", type=_positive, help="seeds per setting")
        p.add_argument("--seed", type=int, help="first seed")
        p.add_argument("--shots", type=_shots, default=argparse.SUPPRESS, help="shots per estimate, or 'exact'")
        p.add_argument("--noise", type=_on_off, help="depolarizing noise on|off")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=_positive, help="worker processes")
        p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
        p.add_argument("-q", "--quiet", action="store_true", help="no per-trial progress")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment defaults, then the config file, then command-line flags."""
    experiment = COMMANDS[args.command]
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != experiment:
            raise ValueError(f"{args.config} configures {cfg.experiment}, not {experiment}")
    else:
        cfg = default_config(experiment)
    overrides = {}
    for flag, name in (("trials", "trials"), ("seed", "base_seed"), ("noise", "noise"), ("out", "out"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            overrides[name] = value
    if "shots" in vars(args):
        overrides["shots"] = args.shots
    if args.out is None and not args.config:
        overrides["out"] = f"results/{args.command}"
    if overrides.get("shots", cfg.shots) is None and "noise" not in overrides:
        # exact expectations cannot carry sampled noise
        overrides["noise"] = False
    return dataclasses.replace(cfg, **overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    if args.dry_run:
        sys.stdout.write(format_config(cfg))
        return 0
    total = len(cfg.seeds())
    done = [0]

    def progress(rec) -> None:
        done[0] += 1
        setting = " ".join(f"{k}={v}" for k, v in rec.extras.get("setting", {}).items())
        status = "error" if rec.status == "error" else ("converged" if rec.converged else rec.status)
        log.info("[%d] %s seed=%d %s iterations=%d", done[0], setting, rec.seed, status, rec.n_iterations)

    log.info("%s: %d trial(s) per setting, output in %s", cfg.experiment, total, cfg.out)
    result = run_experiment(cfg, progress=progress)
    for name, table in result.tables.items():
        sys.stdout.write(f"# {name}\n{table.to_csv()}\n")
    failed = sum(1 for g in result.records for r in g if r.status == "error")
    if failed:
        log.warning("%d trial(s) crashed; see records.jsonl", failed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
