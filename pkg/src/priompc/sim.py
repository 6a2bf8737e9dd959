"""Closed-loop simulation of the three control strategies on an RC plant."""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import allocation as alloc
from .mpc import (
    ComfortWindow,
    HorizonConfig,
    LocalPlan,
    PlanError,
    PriceSchedule,
    solve_centralized,
    solve_decentralized,
    solve_distributed_local,
)
from .scenario import STRATEGIES, ConfigError, Profiles, Scenario
from .thermal import N_STATES, MultiZoneModel, compose_multizone, discrete_zone, step

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# comfort metrics


def comfort_deviation(y, y_min, y_max) -> np.ndarray:
    """Distance of ``y`` outside ``[y_min, y_max]``; infinite limits never bind."""
    y = np.asarray(y, float)
    y_min = np.broadcast_to(np.asarray(y_min, float), y.shape)
    y_max = np.broadcast_to(np.asarray(y_max, float), y.shape)
    below = np.where(np.isfinite(y_min) & (y < y_min), y_min - y, 0.0)
    above = np.where(np.isfinite(y_max) & (y > y_max), y - y_max, 0.0)
    return below + above


def comfort_index(deviations: np.ndarray, occupied: np.ndarray, levels: Sequence[int], level: int,
                  n_steps: int | None = None) -> float:
    """Average out-of-band deviation of one priority class.

    ``deviations`` and ``occupied`` have shape (K, N).  Deviations of the
    zones sharing ``level`` are averaged per step, summed over occupied
    steps and divided by K.
    """
    deviations = np.atleast_2d(np.asarray(deviations, float))
    occupied = np.broadcast_to(np.asarray(occupied, float), deviations.shape)
    zones = [m for m, lev in enumerate(levels) if lev == level]
    if not zones:
        raise ValueError(f"no zone has priority {level}")
    K = deviations.shape[0] if n_steps is None else n_steps
    per_step = np.mean(np.abs(deviations[:, zones]) * occupied[:, zones], axis=1)
    return float(np.sum(per_step) / K)


def overall_index(theta: Sequence[float], indices: Sequence[float]) -> float:
    theta = np.asarray(theta, float)[: len(indices)]
    return float(np.sqrt(np.sum(theta * np.square(indices))))


# ----------------------------------------------------------------------
# controllers


@dataclass
class _Context:
    scenario: Scenario
    profiles: Profiles
    model: MultiZoneModel
    executor: ThreadPoolExecutor | None

    def horizon(self, k: int, alpha: float) -> HorizonConfig:
        sc = self.scenario
        P = sc.horizon
        return HorizonConfig(P, alpha, sc.zone_theta(), sc.u_min, sc.u_max, self.profiles.cap[k:k + P])

    def windows(self, k: int) -> list[ComfortWindow]:
        pr, P = self.profiles, self.scenario.horizon
        sl = slice(k + 1, k + 1 + P)
        return [ComfortWindow(pr.y_min[m, sl], pr.y_max[m, sl], pr.occupied[m, sl])
                for m in range(self.model.n_zones)]

    def prices(self, k: int) -> PriceSchedule:
        return PriceSchedule(self.profiles.price[k:k + self.scenario.horizon])

    def forecast(self, k: int, x: np.ndarray) -> np.ndarray:
        """Raw disturbances (N, P, 10) with neighbour temperatures frozen at x."""
        w = self.profiles.w[:, k:k + self.scenario.horizon]
        return self.model.resolve(w, x)


class Controller:
    name = ""

    def __init__(self, ctx: _Context, alpha: float):
        self.ctx = ctx
        self.alpha = alpha
        self.last_plans: list[LocalPlan] = []

    def step(self, k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inputs to apply at step k and the first-step input bound each zone saw."""
        raise NotImplementedError

    def _local_args(self, k, x):
        ctx = self.ctx
        w = ctx.forecast(k, x)
        zones = ctx.model.zones
        d = [zones[m].disturbance(w[m]) for m in range(len(zones))]
        xs = [x[N_STATES * m:N_STATES * (m + 1)] for m in range(len(zones))]
        return d, xs, ctx.windows(k), ctx.prices(k), ctx.horizon(k, self.alpha)


class CentralizedController(Controller):
    name = "centralized"

    def step(self, k, x):
        ctx = self.ctx
        w = ctx.forecast(k, x)
        d = ctx.model.disturbance(w, x)
        config = ctx.horizon(k, self.alpha)
        plans = solve_centralized(ctx.model, x, d, ctx.windows(k), ctx.prices(k), config, step=k)
        self.last_plans = plans
        return np.array([p.u[0] for p in plans]), np.full(len(plans), config.c_max[0])


class DecentralizedController(Controller):
    name = "decentralized"

    def step(self, k, x):
        d, xs, windows, prices, config = self._local_args(k, x)
        zones = self.ctx.model.zones

        def solve(m):
            return solve_decentralized(zones[m], xs[m], d[m], windows[m], prices, config, zone=m, step=k)

        if self.ctx.executor is None:
            plans = [solve(m) for m in range(len(zones))]
        else:
            plans = list(self.ctx.executor.map(solve, range(len(zones))))
        self.last_plans = plans
        share = config.c_max[0] / config.n_zones
        return np.array([p.u[0] for p in plans]), np.full(len(plans), share)


class DistributedController(Controller):
    """Priority protocol; one-to-one when every zone has its own level unless forced."""

    name = "distributed"

    def __init__(self, ctx: _Context, alpha: float, protocol: str = "auto"):
        super().__init__(ctx, alpha)
        sc = ctx.scenario
        self.assignment = alloc.PriorityAssignment(sc.priorities)
        if protocol == "auto":
            protocol = "one-to-one" if self.assignment.one_to_one else "multi-to-one"
        if protocol == "one-to-one" and not self.assignment.one_to_one:
            raise ConfigError("one-to-one protocol needs a distinct priority per zone")
        self.protocol = protocol
        cap0 = ctx.profiles.cap[: sc.horizon]
        self.allowances = alloc.initial_allowances(self.assignment, cap0)
        self.info = alloc.InfoMatrix.initial(self.assignment, cap0)

    def step(self, k, x):
        d, xs, windows, prices, config = self._local_args(k, x)
        zones = self.ctx.model.zones
        P = config.P

        def solve(m, allowance):
            return solve_distributed_local(zones[m], xs[m], d[m], windows[m], prices, config, allowance,
                                           zone=m, step=k)

        cap_next = self.ctx.profiles.cap[k + 1:k + 1 + P]
        if len(cap_next) < P:
            cap_next = alloc.shift_forward(config.c_max)
        if self.protocol == "one-to-one":
            result, self.allowances = alloc.step_one_to_one(
                solve, self.assignment, self.allowances, cap_next, self.ctx.executor)
        else:
            result, self.info = alloc.step_multi_to_one(
                solve, self.assignment, self.info, cap_next, self.ctx.executor)
        self.last_plans = result.plans
        bound = np.array([min(a[0], config.c_max[0]) for a in result.allowances])
        return result.inputs, bound


def make_controller(strategy: str, ctx: _Context, alpha: float, protocol: str = "auto") -> Controller:
    if strategy == "centralized":
        return CentralizedController(ctx, alpha)
    if strategy == "decentralized":
        return DecentralizedController(ctx, alpha)
    if strategy == "distributed":
        return DistributedController(ctx, alpha, protocol)
    raise ConfigError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


# ----------------------------------------------------------------------
# closed loop


@dataclass
class SimulationResult:
    scenario: str
    strategy: str
    levels: tuple[int, ...]
    theta: tuple[float, ...]
    temperature: np.ndarray  # (K, N), air temperature after applying u(k)
    inputs: np.ndarray  # (K, N)
    allowance: np.ndarray  # (K, N)
    deviation: np.ndarray  # (K, N)
    occupied: np.ndarray  # (K, N), aligned with temperature
    occupied_input: np.ndarray  # (K, N), aligned with inputs
    price: np.ndarray  # (K,)
    cap: np.ndarray  # (K,)
    wall_time: float
    states: np.ndarray = field(repr=False, default=None)

    @property
    def n_steps(self) -> int:
        return self.temperature.shape[0]

    @property
    def n_levels(self) -> int:
        return max(self.levels)

    @property
    def violation(self) -> np.ndarray:
        return np.maximum(0.0, self.inputs.sum(axis=1) - self.cap)

    def comfort_indices(self) -> np.ndarray:
        return np.array([comfort_index(self.deviation, self.occupied, self.levels, s)
                         for s in range(1, self.n_levels + 1)])

    def overall_comfort(self) -> float:
        return overall_index(self.theta, self.comfort_indices())

    def energy_rates(self) -> np.ndarray:
        """Mean applied power (W) over occupied steps, per priority level."""
        rates = []
        for s in range(1, self.n_levels + 1):
            zones = [m for m, lev in enumerate(self.levels) if lev == s]
            mask = self.occupied_input[:, zones] > 0
            u = self.inputs[:, zones]
            rates.append(float(u[mask].mean()) if mask.any() else 0.0)
        return np.array(rates)

    def costs(self) -> tuple[np.ndarray, np.ndarray]:
        """Realised (J_u, J_v) per level, averaged over the zones of a level."""
        ju = self.price[:, None] * np.square(self.inputs)
        jv = self.occupied * np.square(self.deviation)
        out_u, out_v = [], []
        for s in range(1, self.n_levels + 1):
            zones = [m for m, lev in enumerate(self.levels) if lev == s]
            out_u.append(float(ju[:, zones].sum(axis=0).mean()))
            out_v.append(float(jv[:, zones].sum(axis=0).mean()))
        return np.array(out_u), np.array(out_v)


def _models(scenario: Scenario, mismatch: float = 0.0) -> MultiZoneModel:
    adjacency = {(m, wall): j for m, wall, j in scenario.adjacency}
    zones = []
    for z in scenario.zones:
        params = z.params if mismatch == 0 else z.params.scaled(1.0 + mismatch, 1.0 - mismatch)
        zones.append(discrete_zone(params, scenario.dt, scenario.mode))
    return compose_multizone(zones, adjacency)


def _executor(jobs: int | None, n_zones: int) -> ThreadPoolExecutor | None:
    if jobs is None:
        jobs = min(n_zones, os.cpu_count() or 1)
    return ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None


def run_closed_loop(
    scenario: Scenario,
    strategy: str | None = None,
    *,
    alpha: float | None = None,
    n_steps: int | None = None,
    jobs: int | None = None,
    protocol: str | None = None,
    keep_states: bool = False,
) -> SimulationResult:
    """Drive the plant with the chosen strategy for K steps (receding horizon)."""
    strategy = strategy or scenario.strategy
    alpha = scenario.alpha if alpha is None else alpha
    K = scenario.n_steps if n_steps is None else n_steps
    profiles = scenario.profiles(K)
    model = _models(scenario)
    plant = model if scenario.mismatch == 0 else _models(scenario, scenario.mismatch)
    executor = _executor(jobs, scenario.n_zones)
    ctx = _Context(scenario, profiles, model, executor)
    controller = make_controller(strategy, ctx, alpha, protocol or scenario.protocol)
    rng = np.random.default_rng(scenario.seed)

    N = scenario.n_zones
    x = np.full(model.n_states, scenario.initial_temperature)
    T = np.empty((K, N))
    U = np.empty((K, N))
    bound = np.empty((K, N))
    states = np.empty((K + 1, model.n_states)) if keep_states else None
    if keep_states:
        states[0] = x
    wall = 0.0
    try:
        for k in range(K):
            t0 = time.perf_counter()
            try:
                u, b = controller.step(k, x)
            except PlanError as exc:
                if exc.step is None:
                    exc.step = k
                raise
            wall += time.perf_counter() - t0
            d = plant.disturbance(profiles.w[:, k], x)
            x = step(plant, x, u, d)
            if scenario.plant_noise > 0:
                x = x + rng.normal(0.0, scenario.plant_noise, x.shape)
            T[k] = plant.output(x)
            U[k] = u
            bound[k] = b
            if keep_states:
                states[k + 1] = x
    finally:
        if executor is not None:
            executor.shutdown()

    y_min = profiles.y_min[:, 1:K + 1].T
    y_max = profiles.y_max[:, 1:K + 1].T
    log.info("%s/%s: %d steps in %.2fs", scenario.name, strategy, K, wall)
    return SimulationResult(
        scenario=scenario.name,
        strategy=strategy,
        levels=scenario.priorities,
        theta=scenario.theta,
        temperature=T,
        inputs=U,
        allowance=bound,
        deviation=comfort_deviation(T, y_min, y_max),
        occupied=profiles.occupied[:, 1:K + 1].T.copy(),
        occupied_input=profiles.occupied[:, :K].T.copy(),
        price=profiles.price[:K].copy(),
        cap=profiles.cap[:K].copy(),
        wall_time=wall,
        states=states,
    )


# ----------------------------------------------------------------------
# Pareto sweep


@dataclass(frozen=True)
class ParetoPoint:
    strategy: str
    priority: int
    alpha: float
    J_u: float
    J_v: float


def single_step_costs(scenario: Scenario, strategy: str, alpha: float, k: int = 0,
                      x0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted (J_u, J_v) per level from one controller call at step ``k``."""
    profiles = scenario.profiles(k + 1)
    model = _models(scenario)
    ctx = _Context(scenario, profiles, model, None)
    controller = make_controller(strategy, ctx, alpha, scenario.protocol)
    x = np.full(model.n_states, scenario.initial_temperature) if x0 is None else np.asarray(x0, float)
    controller.step(k, x)
    plans = controller.last_plans
    levels = scenario.priorities
    ju, jv = [], []
    for s in range(1, max(levels) + 1):
        zones = [m for m, lev in enumerate(levels) if lev == s]
        ju.append(float(np.mean([plans[m].J_u for m in zones])))
        jv.append(float(np.mean([plans[m].J_v for m in zones])))
    return np.array(ju), np.array(jv)


def pareto_sweep(
    scenario: Scenario,
    alphas: Iterable[float],
    strategies: Sequence[str] = STRATEGIES,
    *,
    mode: str = "closed-loop",
    n_steps: int | None = None,
    k: int = 0,
    jobs: int | None = None,
) -> list[ParetoPoint]:
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas) or len(set(alphas)) != len(alphas):
        raise ValueError("alpha values must be positive and distinct")
    points = []
    for strategy in strategies:
        for a in alphas:
            try:
                if mode == "closed-loop":
                    res = run_closed_loop(scenario, strategy, alpha=a, n_steps=n_steps, jobs=jobs)
                    ju, jv = res.costs()
                elif mode == "single-step":
                    ju, jv = single_step_costs(scenario, strategy, a, k)
                else:
                    raise ValueError(f"unknown sweep mode {mode!r}")
            except PlanError as exc:
                raise PlanError(f"alpha={a:g}: {exc.args[0]}", zone=exc.zone, step=exc.step, status=exc.status) from exc
            points.extend(ParetoPoint(strategy, s + 1, a, float(ju[s]), float(jv[s])) for s in range(len(ju)))
    return points


# ----------------------------------------------------------------------
# CSV output

TRAJECTORY_COLUMNS = ("step", "zone", "T", "u", "allowance", "e")
METRICS_COLUMNS = ("strategy", "priority", "I_ci", "I_c0", "energy_rate", "violation_max", "violation_mean")
TIMING_COLUMNS = ("strategy", "n_zones", "n_steps", "wall_time")
PARETO_COLUMNS = ("strategy", "priority", "alpha", "J_u", "J_v")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_trajectories(result: SimulationResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        K, N = result.temperature.shape
        for k in range(K):
            for m in range(N):
                writer.writerow([k, m, *(_fmt(v) for v in (result.temperature[k, m], result.inputs[k, m],
                                                              result.allowance[k, m], result.deviation[k, m]))])


def write_metrics(results: Sequence[SimulationResult], path: str | Path) -> None:
    """Per-level comfort and energy metrics; deterministic for a fixed seed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for res in results:
            ic = res.comfort_indices()
            rates = res.energy_rates()
            viol = res.violation
            for s in range(res.n_levels):
                writer.writerow([res.strategy, s + 1, _fmt(ic[s]), _fmt(res.overall_comfort()), _fmt(rates[s]),
                                 _fmt(viol.max()), _fmt(viol.mean())])


def write_timing(results: Sequence[SimulationResult], path: str | Path) -> None:
    """Wall-clock time spent in the controllers, kept apart from the reproducible metrics."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_COLUMNS)
        for res in results:
            writer.writerow([res.strategy, res.temperature.shape[1], res.n_steps, _fmt(res.wall_time)])


def write_pareto(points: Sequence[ParetoPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PARETO_COLUMNS)
        for p in points:
            writer.writerow([p.strategy, p.priority, _fmt(p.alpha), _fmt(p.J_u), _fmt(p.J_v)])


def read_pareto(path: str | Path) -> list[ParetoPoint]:
    with open(path, newline="") as fh:
        return [ParetoPoint(r["strategy"], int(r["priority"]), float(r["alpha"]), float(r["J_u"]), float(r["J_v"]))
                for r in csv.DictReader(fh)]
