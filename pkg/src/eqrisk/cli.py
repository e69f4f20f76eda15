"""Command-line front end.

Subcommands: ``price`` runs one experiment cell, ``table`` reproduces a
sensitivity-table grid, ``simulate`` dumps raw paths, ``gradcheck`` runs the
finite-difference gradient verification suite.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .errors import EngineError
from .experiments import (
    HEDGE_MENU,
    PRICE_COLUMNS,
    SCALES,
    TABLES,
    ExperimentConfig,
    price_row,
    run_experiment,
    run_table,
    _simulate,
)
from .gradcheck import run_gradcheck
from .simulate import DEFAULT_S0, dump_paths_csv


def _parse_config_file(path) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise EngineError(f"malformed config line: {raw.strip()!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key] = value
    return out


_OVERRIDE_KEYS = (
    "n_train_paths", "n_epochs", "batch_size", "learning_rate", "n_test_paths", "lr_decay"
)


def _split_file_config(fileconf: dict):
    """Separate scale overrides from flag-style settings."""
    overrides = []
    flags = {}
    for key, value in fileconf.items():
        if key in _OVERRIDE_KEYS:
            overrides.append((key, value))
        else:
            flags[key] = value
    return tuple(sorted(overrides)), flags


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqrisk",
        description="Equal risk pricing of European puts by deep hedging",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", choices=("mjd", "garch", "bsm"), default="bsm")
        p.add_argument("--scenario", default="15")
        p.add_argument("--hedge", choices=sorted(HEDGE_MENU), default="daily-stock")
        p.add_argument("--strike", type=float, default=100.0)
        p.add_argument("--alpha", type=float, default=0.95)
        p.add_argument("--scale", choices=sorted(SCALES), default="desk")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="key=value file overriding flags")

    p_price = sub.add_parser("price", help="price one configuration")
    common(p_price)
    p_price.add_argument("--vo", action="store_true", help="also train the quadratic benchmark")

    p_table = sub.add_parser("table", help="run a sensitivity table")
    common(p_table)
    p_table.add_argument("--table", required=True, choices=sorted(TABLES))
    p_table.add_argument("--relative", action="store_true")
    p_table.add_argument("--jobs", type=int, default=1)

    p_sim = sub.add_parser("simulate", help="dump simulated paths as CSV")
    common(p_sim)
    p_sim.add_argument("--paths", type=int, default=100)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--instances", type=int, default=50)
    p_grad.add_argument("--seed", type=int, default=2024)
    return parser


def _apply_file_flags(args, flags: dict) -> None:
    casts = {
        "model": str, "scenario": str, "hedge": str, "strike": float,
        "alpha": float, "scale": str, "seed": int, "paths": int, "s0": float,
    }
    for key, value in flags.items():
        if key not in casts:
            raise EngineError(f"unknown config key {key!r}")
        setattr(args, key, casts[key](value))


def _cmd_price(args, overrides) -> int:
    cfg = ExperimentConfig(
        model=args.model, scenario=args.scenario, hedge=args.hedge,
        strike=args.strike, alpha=args.alpha, scale=args.scale, seed=args.seed,
        with_vo=args.vo, s0=getattr(args, "s0", DEFAULT_S0), overrides=overrides,
    )
    result = run_experiment(cfg, out_dir=args.out)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(PRICE_COLUMNS)
    writer.writerow(price_row(cfg, result))
    return 0


def _cmd_table(args, overrides) -> int:
    out = run_table(
        args.table, scale=args.scale, seed=args.seed, out_dir=args.out,
        relative=args.relative, jobs=args.jobs, overrides=overrides,
    )
    if args.out is None:
        sys.stdout.write(out)
    else:
        print(out)
    return 0


def _cmd_simulate(args, overrides) -> int:
    cfg = ExperimentConfig(
        model=args.model, scenario=args.scenario, hedge=args.hedge,
        strike=args.strike, alpha=args.alpha, scale=args.scale, seed=args.seed,
        s0=getattr(args, "s0", DEFAULT_S0), overrides=overrides,
    )
    cfg.validate()
    bundle = _simulate(cfg, args.paths, cfg.cell_seed())
    dest = args.out or "."
    os.makedirs(dest, exist_ok=True)
    path = os.path.join(dest, f"paths_{cfg.config_hash()}_{args.paths}.csv")
    dump_paths_csv(bundle, cfg.grid(), path)
    print(path)
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.instances, args.seed)
    n_fail = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(
            f"instance {r.instance:3d} {r.kind:5s} {r.instrument:11s} "
            f"{r.n_params:4d} params  max rel err {r.max_rel_err:.3e}  {status}"
        )
        n_fail += 0 if r.passed else 1
    print(f"gradcheck: {len(results) - n_fail}/{len(results)} instances passed")
    return 0 if n_fail == 0 else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        overrides, flags = ((), {})
        if getattr(args, "config", None):
            overrides, flags = _split_file_config(_parse_config_file(args.config))
            _apply_file_flags(args, flags)
        if args.command == "price":
            return _cmd_price(args, overrides)
        if args.command == "table":
            return _cmd_table(args, overrides)
        if args.command == "simulate":
            return _cmd_simulate(args, overrides)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        parser.error(f"unknown command {args.command!r}")
    except EngineError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
