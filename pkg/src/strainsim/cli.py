"""Command line entry point.

    strainsim run <spec.toml> --out DIR [--seed N] [--mode MODE] [--sweep k=v1,v2,...]
    strainsim workspace <spec.toml> --samples N [--out DIR] [--seed N]
    strainsim check [--fast]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_overrides, load_scenario
from .errors import StrainsimError
from .scenarios import run_scenario, sample_workspace, write_workspace


def _parse_sweep(arg: str) -> tuple[str, list]:
    if "=" not in arg:
        raise argparse.ArgumentTypeError("sweep must look like path.to.key=v1,v2,...")
    dotted, _, values = arg.partition("=")
    parsed = []
    for v in values.split(","):
        try:
            parsed.append(int(v))
        except ValueError:
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append(v)
    return dotted, parsed


def _cmd_run(args) -> int:
    sweeps = dict(args.sweep or [])
    combos = [{}]
    for dotted, values in sweeps.items():
        combos = [dict(c, **{dotted: v}) for c in combos for v in values]
    status = 0
    for combo in combos:
        if combo:
            raw = apply_overrides(args.spec, combo)
            spec = load_scenario(raw)
            tag = "_".join(f"{k.split('.')[-1]}={v}" for k, v in combo.items())
            outdir = Path(args.out) / tag
        else:
            spec = load_scenario(args.spec)
            outdir = Path(args.out)
        try:
            log, metrics = run_scenario(
                spec, outdir, mode_override=args.mode, seed_override=args.seed
            )
        except StrainsimError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = 1
            continue
        reached = sum(
            1 for tm in metrics.targets if any(bm.time_to_band is not None for bm in tm.bands)
        )
        print(f"{outdir}: {len(metrics.targets)} targets, {reached} reached a band, "
              f"peak task speed {metrics.peak_task_speed:.3f} m/s")
    return status


def _cmd_workspace(args) -> int:
    spec = load_scenario(args.spec)
    rows = sample_workspace(
        spec.model, args.samples, seed=args.seed if args.seed is not None else spec.sim.seed,
        tension_limit=float(spec.control_table.get("tension_limit", 5.0)),
        active=spec.active,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "workspace.csv"
    write_workspace(rows, path, len(spec.active))
    print(f"{path}: {len(rows)} equilibria sampled")
    return 0


def _cmd_check(args) -> int:
    from .selfcheck import run_selfcheck

    failures = run_selfcheck(fast=args.fast, printer=print)
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="strainsim",
                                     description="Variable-strain soft-arm simulator and controller")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario spec")
    p_run.add_argument("spec", type=Path)
    p_run.add_argument("--out", type=Path, required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--mode", choices=["precomputed", "online", "two_phase"], default=None)
    p_run.add_argument("--sweep", action="append", type=_parse_sweep, metavar="KEY=V1,V2")
    p_run.set_defaults(func=_cmd_run)

    p_ws = sub.add_parser("workspace", help="sample the static workspace cloud")
    p_ws.add_argument("spec", type=Path)
    p_ws.add_argument("--samples", type=int, default=200)
    p_ws.add_argument("--out", type=Path, default=Path("."))
    p_ws.add_argument("--seed", type=int, default=None)
    p_ws.set_defaults(func=_cmd_workspace)

    p_check = sub.add_parser("check", help="run the built-in invariant suite")
    p_check.add_argument("--fast", action="store_true", help="skip the slower closed-loop checks")
    p_check.set_defaults(func=_cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StrainsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
