"""Priority-based residual-energy bookkeeping for the distributed MPC scheme.

Each zone solves its own problem under an allowance ``c_hat`` (W per
horizon step).  After every control step the plans are shifted one step
forward and the energy the higher-priority zones expect to consume is
subtracted from the cap:

* one-to-one: every zone has its own level and hands
  ``c_hat_{m+1}(k+1) = c_hat_m(k+1) - shift(u_m(.|k))`` to the next zone;
* multi-to-one: zones share levels and read their allowance from the row of
  an information matrix, ``(c_max - sum_{pri < s} shift(u)) / N_pri(s)``.

A control step is snapshot-read -> parallel solve -> single-writer update,
so the solve order never changes the result.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .mpc import LocalPlan, PlanError

SolveZone = Callable[[int, np.ndarray], LocalPlan]


def shift_forward(seq: np.ndarray) -> np.ndarray:
    """Drop the executed first element and repeat the last one."""
    seq = np.asarray(seq, float)
    if seq.ndim != 1 or len(seq) < 2:
        raise ValueError(f"need a 1-D sequence of length >= 2, got shape {seq.shape}")
    return np.concatenate([seq[1:], seq[-1:]])


def residual_one_to_one(allowance: np.ndarray, u_shifted: np.ndarray, c_max=np.inf) -> np.ndarray:
    """Allowance left for the downstream zone, clamped to ``[0, c_max]``."""
    allowance = np.asarray(allowance, float)
    u_shifted = np.asarray(u_shifted, float)
    if allowance.shape != u_shifted.shape:
        raise ValueError(f"length mismatch: {allowance.shape} vs {u_shifted.shape}")
    return np.clip(allowance - u_shifted, 0.0, c_max)


def residual_chain(c_max, shifted_plans: Sequence[np.ndarray], clamp: bool = True) -> list[np.ndarray]:
    """Allowances down a priority chain: the top zone holds ``c_max``, each next one what is left.

    ``shifted_plans`` are the shifted input plans of the zones in priority
    order (the last zone's plan is not needed).  With ``clamp=False`` the
    plain differences are returned, which telescope back to ``c_max``.
    """
    c_max = np.asarray(c_max, float)
    out = [c_max.copy()]
    for u in shifted_plans:
        if clamp:
            out.append(residual_one_to_one(out[-1], u, c_max))
        else:
            out.append(out[-1] - np.asarray(u, float))
    return out


@dataclass(frozen=True)
class PriorityAssignment:
    """``levels[m]`` is the priority level (1 = highest) of zone ``m``."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(s) for s in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ValueError("no zones")
        present = sorted(set(levels))
        if present != list(range(1, len(present) + 1)):
            raise ValueError(f"levels must cover 1..N_o without gaps, got {present}")

    @property
    def n_levels(self) -> int:
        return max(self.levels)

    @property
    def n_zones(self) -> int:
        return len(self.levels)

    def members(self, s: int) -> list[int]:
        return [m for m, lev in enumerate(self.levels) if lev == s]

    def count(self, s: int) -> int:
        return sum(1 for lev in self.levels if lev == s)

    @property
    def one_to_one(self) -> bool:
        return self.n_levels == self.n_zones

    def order(self) -> list[int]:
        """Zones sorted by level (stable)."""
        return sorted(range(self.n_zones), key=lambda m: self.levels[m])


@dataclass(frozen=True)
class InfoMatrix:
    """N_o x P residual allowances; row ``s - 1`` serves level ``s``."""

    rows: np.ndarray

    def allowance(self, level: int) -> np.ndarray:
        return self.rows[level - 1].copy()

    @classmethod
    def initial(cls, assignment: PriorityAssignment, c_max: np.ndarray) -> "InfoMatrix":
        """Rows assuming no consumption by higher levels yet."""
        c_max = np.asarray(c_max, float)
        rows = np.stack([c_max / assignment.count(s) for s in range(1, assignment.n_levels + 1)])
        return cls(rows)


def build_info_matrix(
    shifted_plans: Mapping[int, np.ndarray] | Sequence[np.ndarray],
    assignment: PriorityAssignment,
    c_max,
) -> InfoMatrix:
    """Rows ``(c_max - sum_{pri(m) < s} u_m) / N_pri(s)``, clamped to ``[0, c_max]``.

    ``shifted_plans[m]`` is zone m's input plan already shifted to the new
    step; only zones above the lowest level are needed.
    """
    plans = dict(enumerate(shifted_plans)) if not isinstance(shifted_plans, Mapping) else dict(shifted_plans)
    P = len(np.atleast_1d(c_max)) if np.ndim(c_max) else len(next(iter(plans.values())))
    c_max = np.broadcast_to(np.asarray(c_max, float), (P,))
    used = np.zeros(P)
    rows = []
    for s in range(1, assignment.n_levels + 1):
        rows.append(np.clip((c_max - used) / assignment.count(s), 0.0, c_max))
        if s == assignment.n_levels:
            break
        for m in assignment.members(s):
            if m not in plans:
                raise ValueError(f"missing plan for zone {m} (level {s})")
            used = used + np.asarray(plans[m], float)
    return InfoMatrix(np.stack(rows))


def _solve_all(solve_zone: SolveZone, allowances: Sequence[np.ndarray], executor: Executor | None) -> list[LocalPlan]:
    zones = range(len(allowances))
    if executor is None:
        results = [_guarded(solve_zone, m, allowances[m]) for m in zones]
    else:
        results = list(executor.map(lambda m: _guarded(solve_zone, m, allowances[m]), zones))
    return results


def _guarded(solve_zone: SolveZone, m: int, allowance: np.ndarray) -> LocalPlan:
    try:
        return solve_zone(m, allowance)
    except PlanError as exc:
        if exc.zone is None:
            exc.zone = m
        raise


@dataclass(frozen=True)
class StepResult:
    inputs: np.ndarray
    plans: list[LocalPlan]
    allowances: list[np.ndarray]


def step_one_to_one(
    solve_zone: SolveZone,
    assignment: PriorityAssignment,
    allowances: Sequence[np.ndarray],
    c_max_next: np.ndarray,
    executor: Executor | None = None,
) -> tuple[StepResult, list[np.ndarray]]:
    """Solve every zone under its current allowance, then chain residuals downstream.

    ``allowances[m]`` is what zone ``m`` received at the previous step;
    ``c_max_next`` is the cap over the next horizon, which the top zone
    always holds.  Returns the step result and next-step allowances.
    """
    if not assignment.one_to_one:
        raise ValueError("one-to-one protocol needs a distinct level per zone")
    snapshot = [np.array(a, float) for a in allowances]
    plans = _solve_all(solve_zone, snapshot, executor)
    order = assignment.order()
    chain = residual_chain(c_max_next, [shift_forward(plans[m].u) for m in order[:-1]])
    nxt: list[np.ndarray] = [None] * assignment.n_zones  # type: ignore[list-item]
    for m, allowance in zip(order, chain):
        nxt[m] = allowance
    inputs = np.array([p.u[0] for p in plans])
    return StepResult(inputs, plans, snapshot), nxt


def step_multi_to_one(
    solve_zone: SolveZone,
    assignment: PriorityAssignment,
    info: InfoMatrix,
    c_max_next: np.ndarray,
    executor: Executor | None = None,
) -> tuple[StepResult, InfoMatrix]:
    """Read each zone's row, solve in parallel, rebuild the matrix from shifted plans."""
    if info.rows.shape[0] != assignment.n_levels:
        raise ValueError(f"information matrix has {info.rows.shape[0]} rows, expected {assignment.n_levels}")
    allowances = [info.allowance(s) for s in assignment.levels]
    plans = _solve_all(solve_zone, allowances, executor)
    shifted = {m: shift_forward(p.u) for m, p in enumerate(plans)}
    new_info = build_info_matrix(shifted, assignment, c_max_next)
    inputs = np.array([p.u[0] for p in plans])
    return StepResult(inputs, plans, allowances), new_info


def initial_allowances(assignment: PriorityAssignment, c_max: np.ndarray) -> list[np.ndarray]:
    """Top zone holds the whole cap, the others start from an equal split."""
    c_max = np.asarray(c_max, float)
    top = assignment.order()[0]
    return [c_max.copy() if m == top else c_max / assignment.n_zones for m in range(assignment.n_zones)]
