"""Centralized, decentralized and distributed MPC problems over a horizon of P steps.

Every formulation shares the same per-zone ingredients:

* predicted air temperature ``y = y_free + Su u`` from the zone model,
* energy cost ``J_u = sum_l price(l) * u(l)**2``,
* comfort cost ``J_v = sum_l occupied(l) * v(l)**2`` where ``v`` is the
  nonnegative slack that softens ``y_min <= y <= y_max``,
* ``J_m = alpha * J_v + J_u``.

They only differ in how the zones' inputs are limited: a shared cap on the
sum (centralized), an equal share of the cap (decentralized), or a
per-zone allowance handed down by the priority protocol (distributed).
Powers are in W throughout; the QP internally works in kW.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qp
from .thermal import DiscreteZoneModel, MultiZoneModel

U_SCALE = 1000.0  # W per QP unit
QP_TOL = 1e-9  # tight: low-weight zones barely move the joint objective


class PlanError(RuntimeError):
    """A local or central MPC problem could not be solved."""

    def __init__(self, message: str, zone: int | None = None, step: int | None = None,
                 status: qp.Status | None = None):
        super().__init__(message)
        self.zone = zone
        self.step = step
        self.status = status

    def __str__(self):
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.zone is not None:
            where.append(f"zone {self.zone}")
        prefix = f"[{', '.join(where)}] " if where else ""
        return prefix + super().__str__()


@dataclass(frozen=True)
class ComfortWindow:
    """Comfort band and occupancy over the P predicted outputs y(k+1..k+P)."""

    y_min: np.ndarray
    y_max: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        y_min = np.asarray(self.y_min, float)
        y_max = np.asarray(self.y_max, float)
        occ = np.asarray(self.occupied, float)
        if not (y_min.shape == y_max.shape == occ.shape and y_min.ndim == 1):
            raise ValueError("comfort window arrays must be 1-D with equal length")
        if np.any(y_min > y_max):
            raise ValueError("y_min exceeds y_max")
        if not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupancy must be 0 or 1")
        object.__setattr__(self, "y_min", y_min)
        object.__setattr__(self, "y_max", y_max)
        object.__setattr__(self, "occupied", occ)

    @classmethod
    def no_limit(cls, P: int) -> "ComfortWindow":
        return cls(np.full(P, -np.inf), np.full(P, np.inf), np.zeros(P))

    def __len__(self):
        return len(self.y_min)


@dataclass(frozen=True)
class PriceSchedule:
    """Electricity price (CNY/kWh) applied to u(k..k+P-1)."""

    price: np.ndarray

    def __post_init__(self):
        price = np.asarray(self.price, float)
        if price.ndim != 1 or np.any(price <= 0):
            raise ValueError("prices must be a 1-D array of positive values")
        object.__setattr__(self, "price", price)

    def __len__(self):
        return len(self.price)


@dataclass(frozen=True)
class HorizonConfig:
    P: int
    alpha: float
    theta: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    c_max: np.ndarray

    def __post_init__(self):
        if int(self.P) < 1:
            raise ValueError("horizon must be at least one step")
        object.__setattr__(self, "P", int(self.P))
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        theta = np.atleast_1d(np.asarray(self.theta, float))
        n = theta.shape[0]
        u_min = np.broadcast_to(np.asarray(self.u_min, float), (n,)).copy()
        u_max = np.broadcast_to(np.asarray(self.u_max, float), (n,)).copy()
        c_max = np.broadcast_to(np.asarray(self.c_max, float), (self.P,)).copy()
        if np.any(theta <= 0):
            raise ValueError("priority weights must be > 0")
        if np.any(u_min < 0) or np.any(u_min > u_max):
            raise ValueError("need 0 <= u_min <= u_max")
        if np.any(c_max < 0):
            raise ValueError("energy cap must be >= 0")
        for name, value in (("theta", theta), ("u_min", u_min), ("u_max", u_max), ("c_max", c_max)):
            object.__setattr__(self, name, value)

    @property
    def n_zones(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class LocalPlan:
    u: np.ndarray
    v: np.ndarray
    y: np.ndarray
    J: float
    J_u: float
    J_v: float
    status: qp.Status = qp.Status.OPTIMAL


@dataclass(frozen=True)
class CostTerms:
    """Diagonal quadratic weights: ``J_u = u' diag(u_weight) u``, ``J_v = v' diag(v_weight) v``."""

    u_weight: np.ndarray
    v_weight: np.ndarray

    def energy(self, u: np.ndarray) -> float:
        return float(np.sum(self.u_weight * np.square(u)))

    def comfort(self, v: np.ndarray) -> float:
        return float(np.sum(self.v_weight * np.square(v)))


def build_cost_terms(window: ComfortWindow, prices: PriceSchedule, P: int) -> CostTerms:
    if len(window) != P or len(prices) != P:
        raise ValueError(f"window/prices must cover {P} steps, got {len(window)} and {len(prices)}")
    return CostTerms(prices.price.copy(), window.occupied.copy())


class Predictor:
    """Horizon-P output map of a (multi-)zone model, zone-major ordering.

    ``y[m, l]`` is the predicted air temperature of zone ``m`` at k+l+1 and
    ``Su[(m, l), (m', j)]`` is ``C_m A^(l-j) B_m'`` for ``j <= l``.
    """

    def __init__(self, model: DiscreteZoneModel | MultiZoneModel, P: int):
        self.model = model
        self.P = P
        N = model.n_zones
        A = model.A
        B = model.B if model.B.ndim == 2 else model.B[:, None]
        C = model.C if model.C.ndim == 2 else model.C[None, :]
        markov = []
        CA = C.copy()
        for _ in range(P):
            markov.append(CA @ B)
            CA = CA @ A
        Su = np.zeros((N * P, N * P))
        for l in range(P):
            for j in range(l + 1):
                Su[l::P, j::P] = markov[l - j]
        self.Su = Su
        self.N = N

    def free_response(self, x0: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Outputs with u = 0; ``d`` is the (P, n_states) discrete disturbance forecast."""
        if d.shape != (self.P, self.model.n_states):
            raise ValueError(f"disturbance forecast must be ({self.P}, {self.model.n_states}), got {d.shape}")
        x = np.asarray(x0, float)
        if x.shape != (self.model.n_states,):
            raise ValueError(f"state must have {self.model.n_states} entries, got {x.shape}")
        C = self.model.C if self.model.C.ndim == 2 else self.model.C[None, :]
        y = np.empty((self.N, self.P))
        A = self.model.A
        for l in range(self.P):
            x = A @ x + d[l]
            y[:, l] = C @ x
        return y


_predictor_cache: dict[tuple[int, int], Predictor] = {}


def predictor(model: DiscreteZoneModel | MultiZoneModel, P: int) -> Predictor:
    key = (id(model), P)
    pred = _predictor_cache.get(key)
    if pred is None or pred.model is not model:
        if len(_predictor_cache) > 512:
            _predictor_cache.clear()
        pred = _predictor_cache[key] = Predictor(model, P)
    return pred


@dataclass(frozen=True)
class AffinePrediction:
    """``y.ravel() = y_free.ravel() + Su @ u`` with zone-major stacking."""

    y_free: np.ndarray
    Su: np.ndarray

    def outputs(self, u: np.ndarray) -> np.ndarray:
        return self.y_free + (self.Su @ np.ravel(u)).reshape(self.y_free.shape)


def build_prediction(model, x0, d_forecast, P: int) -> AffinePrediction:
    pred = predictor(model, P)
    return AffinePrediction(pred.free_response(x0, np.asarray(d_forecast, float)), pred.Su)


@dataclass
class _ZoneBlock:
    y_free: np.ndarray
    Su: np.ndarray
    window: ComfortWindow
    cost: CostTerms
    theta: float
    lb: np.ndarray
    ub: np.ndarray
    soft: np.ndarray = field(init=False)

    def __post_init__(self):
        finite = np.isfinite(self.window.y_min) | np.isfinite(self.window.y_max)
        self.soft = np.flatnonzero((self.cost.v_weight > 0) & finite)


def _solve_blocks(blocks: Sequence[_ZoneBlock], alpha: float, cap: np.ndarray | None,
                  step: int | None = None, zone_offset: int = 0) -> list[LocalPlan]:
    """Joint QP over the blocks; slack variables only where they are penalised."""
    P = len(blocks[0].y_free)
    N = len(blocks)
    nu = N * P
    soft = [b.soft if alpha > 0 else np.zeros(0, int) for b in blocks]
    nv = sum(len(s) for s in soft)
    n = nu + nv
    Hd = np.zeros(n)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    rows, rhs = [], []
    vo = nu
    for m, (b, sm) in enumerate(zip(blocks, soft)):
        sl = slice(m * P, (m + 1) * P)
        Hd[sl] = 2.0 * b.theta * b.cost.u_weight * U_SCALE**2
        lb[sl] = b.lb / U_SCALE
        ub[sl] = b.ub / U_SCALE
        for i, l in enumerate(sm):
            vi = vo + i
            Hd[vi] = 2.0 * b.theta * alpha * b.cost.v_weight[l]
            su = b.Su[l] * U_SCALE
            if np.isfinite(b.window.y_min[l]):
                row = np.zeros(n)
                row[sl] = -su
                row[vi] = -1.0
                rows.append(row)
                rhs.append(b.y_free[l] - b.window.y_min[l])
            if np.isfinite(b.window.y_max[l]):
                row = np.zeros(n)
                row[sl] = su
                row[vi] = -1.0
                rows.append(row)
                rhs.append(b.window.y_max[l] - b.y_free[l])
        vo += len(sm)
    if cap is not None and N > 1:
        for l in range(P):
            row = np.zeros(n)
            row[l:nu:P] = 1.0
            rows.append(row)
            rhs.append(cap[l] / U_SCALE)
    elif cap is not None:
        ub[:P] = np.minimum(ub[:P], cap / U_SCALE)

    problem = qp.QpProblem(
        np.diag(Hd), np.zeros(n),
        np.array(rows) if rows else None, np.array(rhs) if rhs else None,
        lb, ub,
    )
    sol = qp.solve(problem, feas_tol=QP_TOL, kkt_tol=QP_TOL)
    if not sol.optimal and sol.status is not qp.Status.INFEASIBLE:
        # tight target out of reach (badly scaled slacks at very large alpha); settle for the defaults
        sol = qp.solve(problem)
    if not sol.optimal:
        zone = zone_offset if N == 1 else None
        raise PlanError(f"MPC problem not solved: {sol.status.value}", zone=zone, step=step, status=sol.status)

    plans = []
    vo = nu
    for m, (b, sm) in enumerate(zip(blocks, soft)):
        u = np.clip(sol.z[m * P:(m + 1) * P] * U_SCALE, b.lb, b.ub)
        y = b.y_free + b.Su @ u
        v = implied_slack(y, b.window)
        if len(sm):
            v[sm] = np.maximum(sol.z[vo:vo + len(sm)], 0.0)
        vo += len(sm)
        J_u = b.cost.energy(u)
        J_v = b.cost.comfort(v)
        plans.append(LocalPlan(u, v, y, alpha * J_v + J_u, J_u, J_v, sol.status))
    return plans


def implied_slack(y: np.ndarray, window: ComfortWindow) -> np.ndarray:
    """Smallest slack that makes ``y`` comply with the window: max(0, y_min - y, y - y_max)."""
    with np.errstate(invalid="ignore"):
        below = np.where(np.isfinite(window.y_min), window.y_min - y, 0.0)
        above = np.where(np.isfinite(window.y_max), y - window.y_max, 0.0)
    return np.maximum(0.0, np.maximum(below, above))


def _zone_block(model, x0, d_forecast, window, prices, config: HorizonConfig, zone: int,
                theta: float, upper: np.ndarray | None = None) -> _ZoneBlock:
    P = config.P
    pred = predictor(model, P)
    y_free = pred.free_response(x0, np.asarray(d_forecast, float))[0]
    lb = np.full(P, config.u_min[zone])
    ub = np.full(P, config.u_max[zone])
    if upper is not None:
        ub = np.minimum(ub, upper)
    if np.any(ub < lb):
        raise PlanError("input allowance below the lower input bound", zone=zone,
                        status=qp.Status.INFEASIBLE)
    return _ZoneBlock(y_free, pred.Su, window, build_cost_terms(window, prices, P), theta, lb, ub)


def solve_centralized(
    model: MultiZoneModel,
    x0: np.ndarray,
    d_forecast: np.ndarray,
    windows: Sequence[ComfortWindow],
    prices: PriceSchedule,
    config: HorizonConfig,
    step: int | None = None,
) -> list[LocalPlan]:
    """One QP over all zones with the shared cap ``sum_m u_m <= c_max`` per step.

    Objective is ``sum_m theta_m (alpha J_m^v + J_m^u)``; the plans report
    the unweighted per-zone terms.
    """
    P, N = config.P, model.n_zones
    if len(windows) != N or config.n_zones != N:
        raise ValueError(f"need windows and weights for {N} zones")
    pred = predictor(model, P)
    y_free = pred.free_response(x0, np.asarray(d_forecast, float))
    blocks = []
    for m in range(N):
        Su_m = pred.Su[m * P:(m + 1) * P, m * P:(m + 1) * P]
        blocks.append(_ZoneBlock(
            y_free[m], Su_m, windows[m], build_cost_terms(windows[m], prices, P), config.theta[m],
            np.full(P, config.u_min[m]), np.full(P, config.u_max[m]),
        ))
    return _solve_blocks(blocks, config.alpha, config.c_max, step=step)


def solve_decentralized(
    model: DiscreteZoneModel,
    x0: np.ndarray,
    d_forecast: np.ndarray,
    window: ComfortWindow,
    prices: PriceSchedule,
    config: HorizonConfig,
    zone: int = 0,
    step: int | None = None,
) -> LocalPlan:
    """Zone problem with the equal share ``c_max / N`` as input bound."""
    share = config.c_max / config.n_zones
    block = _zone_block(model, x0, d_forecast, window, prices, config, zone, 1.0, share)
    return _solve_blocks([block], config.alpha, None, step=step, zone_offset=zone)[0]


def clamp_allowance(allowance: np.ndarray, c_max: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(allowance, float), 0.0, c_max)


def solve_distributed_local(
    model: DiscreteZoneModel,
    x0: np.ndarray,
    d_forecast: np.ndarray,
    window: ComfortWindow,
    prices: PriceSchedule,
    config: HorizonConfig,
    allowance: np.ndarray,
    zone: int = 0,
    step: int | None = None,
) -> LocalPlan:
    """Zone problem with ``u <= allowance`` (clamped to ``[0, c_max]``)."""
    allowance = np.asarray(allowance, float)
    if allowance.shape != (config.P,):
        raise ValueError(f"allowance must have {config.P} entries, got {allowance.shape}")
    upper = clamp_allowance(allowance, config.c_max)
    block = _zone_block(model, x0, d_forecast, window, prices, config, zone, 1.0, upper)
    return _solve_blocks([block], config.alpha, None, step=step, zone_offset=zone)[0]


def weighted_objective(plans: Sequence[LocalPlan], theta: np.ndarray) -> float:
    return float(sum(t * p.J for t, p in zip(theta, plans)))
