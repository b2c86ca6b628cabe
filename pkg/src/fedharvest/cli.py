"""Command-line driver: single runs, sweep grids, config validation.

Exit codes: 0 success, 1 at least one run failed, 2 configuration error.
The FEDHARVEST_OUT environment variable overrides the output directory and
nothing else.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .config import PRESETS, Config, ConfigError, build_config, coerce_value, parse_config_file
from .learner import TrainingDiverged
from .metrics import EpochMetrics, RunKey, RunSummary, format_row, write_rows
from .timeline import SimulationRun


def run_id_for(config: Config) -> str:
    return (
        f"{config.policy}-a{config.alpha:g}-p{config.p_bc:g}-s{config.seed}"
    )


def _execute(config: Config) -> tuple[RunKey, list[EpochMetrics], bool]:
    """Run one simulation to completion, capturing rows even on divergence."""
    run = SimulationRun(config)
    diverged = False
    try:
        for _ in range(config.slots_per_epoch * config.epochs):
            run.step_slot()
    except TrainingDiverged:
        diverged = True
    key = RunKey(
        run_id=run_id_for(config),
        policy=config.policy,
        seed=config.seed,
        alpha=config.alpha,
        p_bc=config.p_bc,
    )
    return key, run.rows, diverged


def _config_echo(config: Config) -> dict:
    echo = {}
    for f in fields(Config):
        value = getattr(config, f.name)
        echo[f.name] = list(value) if isinstance(value, tuple) else value
    return echo


def _out_dir(config: Config) -> Path:
    out = os.environ.get("FEDHARVEST_OUT", config.out)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run(out: Path, config: Config, key: RunKey, rows: list[EpochMetrics], diverged: bool) -> None:
    csv_path = out / f"{key.run_id}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        write_rows(fh, (format_row(key, m) for m in rows))
    summary = RunSummary(
        key=key,
        config=_config_echo(config),
        final=rows[-1] if rows else None,
        diverged=diverged,
    )
    (out / f"{key.run_id}.json").write_text(summary.to_json() + "\n", encoding="utf-8")
    state = "diverged" if diverged else "ok"
    print(f"{key.run_id}: {state}, {len(rows)} epochs -> {csv_path}")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    parser.add_argument("--config", metavar="FILE", help="flat key = value file")
    group = parser.add_argument_group("config keys (override preset and file)")
    for f in fields(Config):
        group.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f"key_{f.name}",
            metavar="VALUE",
            help=argparse.SUPPRESS,
        )


def _gather_config(args: argparse.Namespace) -> Config:
    file_values = parse_config_file(args.config) if args.config else None
    overrides = {}
    for f in fields(Config):
        raw = getattr(args, f"key_{f.name}", None)
        if raw is not None:
            overrides[f.name] = coerce_value(f.name, raw)
    config = build_config(args.preset, file_values, overrides)
    for warning in config.validate():
        print(f"warning: {warning}", file=sys.stderr)
    return config


def _split_axis(raw: str | None, key: str) -> list[str] | None:
    if raw is None:
        return None
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: empty sweep axis")
    return parts


def cmd_run(args: argparse.Namespace) -> int:
    config = _gather_config(args)
    key, rows, diverged = _execute(config)
    _write_run(_out_dir(config), config, key, rows, diverged)
    return 1 if diverged else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _gather_config(args)
    axes = {
        "policy": _split_axis(args.policies, "policies") or [base.policy],
        "alpha": _split_axis(args.alphas, "alphas") or [base.alpha],
        "p_bc": _split_axis(args.p_bcs, "p_bcs") or [base.p_bc],
        "seed": _split_axis(args.seeds, "seeds") or [base.seed],
    }
    out = _out_dir(base)
    merged: list[list[str]] = []
    failures = 0
    for policy, alpha, p_bc, seed in itertools.product(
        axes["policy"], axes["alpha"], axes["p_bc"], axes["seed"]
    ):
        run_config = replace(
            base,
            policy=str(policy),
            alpha=coerce_value("alpha", str(alpha)),
            p_bc=coerce_value("p_bc", str(p_bc)),
            seed=coerce_value("seed", str(seed)),
        )
        run_config.validate()
        key, rows, diverged = _execute(run_config)
        _write_run(out, run_config, key, rows, diverged)
        merged.extend(format_row(key, m) for m in rows)
        failures += int(diverged)
    merged_path = out / "sweep.csv"
    with open(merged_path, "w", encoding="utf-8", newline="") as fh:
        write_rows(fh, merged)
    print(f"sweep: {failures} failed run(s), merged -> {merged_path}")
    return 1 if failures else 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = _gather_config(args)
    print(f"ok: {run_id_for(config)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedharvest",
        description="Energy-harvesting federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one seeded simulation")
    _add_config_arguments(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a policy/alpha/p_bc/seed grid")
    _add_config_arguments(p_sweep)
    p_sweep.add_argument("--policies", metavar="LIST", help="comma-separated policies")
    p_sweep.add_argument("--alphas", metavar="LIST", help="comma-separated alpha values")
    p_sweep.add_argument("--p-bcs", dest="p_bcs", metavar="LIST", help="comma-separated p_bc values")
    p_sweep.add_argument("--seeds", metavar="LIST", help="comma-separated seeds")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a configuration and exit")
    _add_config_arguments(p_val)
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
