"""Command-line entry point: ``priompc run | sweep | compare``.

Exit codes: 0 on success, 2 for configuration errors, 3 when an MPC problem
cannot be solved (the message names the step and zone).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .mpc import PlanError
from .scenario import PROTOCOLS, STRATEGIES, ConfigError, Scenario, load_scenario, scarce_cap, sufficient_cap
from .sim import (
    SimulationResult,
    pareto_sweep,
    run_closed_loop,
    write_metrics,
    write_pareto,
    write_timing,
    write_trajectories,
)

OUT_ENV = "PRIOMPC_OUT"
DEFAULT_OUT = "results"
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("priompc")


def _parse_cap(text: str, n_zones: int) -> float:
    if text == "scarce":
        return scarce_cap(n_zones)
    if text == "sufficient":
        return sufficient_cap(n_zones)
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"--cap expects a number of watts, 'scarce' or 'sufficient', got {text!r}") from None
    if value < 0:
        raise ConfigError("--cap must be >= 0")
    return value


def _parse_alphas(text: str) -> list[float]:
    try:
        values = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise ConfigError(f"--alpha expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise ConfigError("--alpha is empty")
    return values


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    changes = {}
    if args.cap is not None:
        changes["cap"] = _parse_cap(args.cap, sc.n_zones)
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    if args.days is not None:
        changes["days"] = args.days
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "protocol", None) is not None:
        changes["protocol"] = args.protocol
    return sc.with_(**changes) if changes else sc


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _summary(results: list[SimulationResult]) -> str:
    n_levels = results[0].n_levels
    head = ["strategy"] + [f"I_c{s}" for s in range(1, n_levels + 1)] + ["I_c0"]
    head += [f"E_{s} [W]" for s in range(1, n_levels + 1)] + ["viol_max [W]", "wall [s]"]
    rows = []
    for r in results:
        row = [r.strategy] + [f"{v:.4f}" for v in r.comfort_indices()] + [f"{r.overall_comfort():.4f}"]
        row += [f"{v:.1f}" for v in r.energy_rates()] + [f"{r.violation.max():.2f}", f"{r.wall_time:.2f}"]
        rows.append(row)
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    lines = ["  ".join(x.rjust(w) for x, w in zip(line, widths)) for line in [head, *rows]]
    return "\n".join(lines)


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args)
    strategy = args.strategy or sc.strategy
    alpha = None if args.alpha is None else _parse_alphas(args.alpha)[0]
    res = run_closed_loop(sc, strategy, alpha=alpha, jobs=args.jobs)
    write_trajectories(res, out / "trajectories.csv")
    write_metrics([res], out / "metrics.csv")
    write_timing([res], out / "timing.csv")
    print(f"scenario {sc.name}: {sc.n_zones} zones, {res.n_steps} steps")
    print(_summary([res]))
    print(f"wrote {out}/trajectories.csv, metrics.csv, timing.csv")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args)
    alphas = _parse_alphas(args.alpha) if args.alpha else list(np.logspace(4, 8, 8))
    if len(alphas) < 2:
        raise ConfigError("a sweep needs at least two alpha values")
    strategies = [args.strategy] if args.strategy else list(STRATEGIES)
    try:
        points = pareto_sweep(sc, alphas, strategies, mode=args.mode, jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_pareto(points, out / "pareto.csv")
    print(f"wrote {len(points)} points for {', '.join(strategies)} to {out}/pareto.csv")
    return 0


def cmd_compare(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args)
    alpha = None if args.alpha is None else _parse_alphas(args.alpha)[0]
    results = [run_closed_loop(sc, s, alpha=alpha, jobs=args.jobs) for s in STRATEGIES]
    write_metrics(results, out / "metrics.csv")
    write_timing(results, out / "timing.csv")
    print(f"scenario {sc.name}: {sc.n_zones} zones, {results[0].n_steps} steps")
    print(_summary(results))
    print(f"wrote {out}/metrics.csv, timing.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="priompc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, strategy_help):
        p.add_argument("--scenario", default="small3", help="builtin name (small3, large36) or TOML file path")
        p.add_argument("--strategy", choices=STRATEGIES, help=strategy_help)
        p.add_argument("--alpha", help="comfort weight; a comma-separated list for sweep")
        p.add_argument("--cap", help="total power cap in W, or 'scarce' / 'sufficient'")
        p.add_argument("--horizon", type=int, help="prediction horizon in steps")
        p.add_argument("--days", type=float, help="simulated duration in days")
        p.add_argument("--protocol", choices=PROTOCOLS, help="allocation protocol of the distributed strategy")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="random seed for weather noise and plant noise")
        p.add_argument("--jobs", type=int, help="worker threads for per-zone solves (default: min(zones, cores))")

    p = sub.add_parser("run", help="closed-loop run of one strategy")
    common(p, "control strategy (default: the scenario's)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="alpha sweep producing Pareto points")
    common(p, "restrict the sweep to one strategy")
    p.add_argument("--mode", choices=("closed-loop", "single-step"), default="closed-loop")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run all three strategies and tabulate the metrics")
    common(p, argparse.SUPPRESS)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None and args.jobs < 1:
        parser.print_usage(sys.stderr)
        print("priompc: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"priompc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlanError as exc:
        print(f"priompc: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
