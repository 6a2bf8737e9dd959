"""Dense convex QP solver.

Solves::

    minimize    1/2 z'Hz + f'z
    subject to  G z <= h
                lb <= z <= ub

with a primal-dual interior-point method (Mehrotra predictor-corrector).
Variable bounds are kept apart from the general rows so that they only add
diagonal terms to the reduced Newton system.  Problems here have at most a
few hundred variables, so everything is dense.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

FEAS_TOL = 1e-6
KKT_TOL = 1e-6
MAX_ITER = 10_000
PSD_EPS = 1e-9
W_MAX = 1e20  # cap on barrier weights lam/s near convergence
STALL_ITER = 50  # give up after this many iterations without progress
FIX_TOL = 1e-10  # boxes narrower than this (relative) are treated as fixed variables


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max-iter"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, float))
        f = np.atleast_1d(np.asarray(self.f, float))
        n = f.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {H.shape}")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, float))
        h = np.zeros(0) if self.h is None else np.atleast_1d(np.asarray(self.h, float))
        if G.size == 0:
            G = G.reshape(0, n)
        if G.shape[1] != n or G.shape[0] != h.shape[0]:
            raise ValueError(f"G/h shapes {G.shape}/{h.shape} inconsistent with n={n}")
        lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        if np.isnan(h).any() or np.isnan(lb).any() or np.isnan(ub).any():
            raise ValueError("NaN in constraint data")
        for name, value in (("H", H), ("f", f), ("G", G), ("h", h), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.f.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def violation(self, z: np.ndarray) -> float:
        """Largest constraint violation at ``z`` (0 when feasible)."""
        parts = [0.0]
        if self.G.shape[0]:
            parts.append(float(np.max(self.G @ z - self.h)))
        parts.append(float(np.max(self.lb - z)))
        parts.append(float(np.max(z - self.ub)))
        return max(parts)


@dataclass(frozen=True)
class QpSolution:
    """Solver output.

    ``primal_residual`` and ``dual_residual`` are scaled by the magnitude of
    the terms they balance, so they are comparable across problem scalings.
    Multipliers are nonnegative and belong to ``G z <= h``, ``z >= lb`` and
    ``z <= ub`` respectively (zero for infinite bounds).
    """

    z: np.ndarray
    objective: float
    status: Status
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    multipliers: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    regularization: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    dual_feasibility: float
    multipliers: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)

    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.complementarity, self.dual_feasibility)


def _gradient_of_constraints(problem: QpProblem, lam_g, lam_l, lam_u) -> np.ndarray:
    return problem.G.T @ lam_g - lam_l + lam_u


def check_kkt(
    problem: QpProblem,
    z: np.ndarray,
    multipliers: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    active_tol: float = 1e-8,
) -> KktReport:
    """Absolute KKT residuals of a candidate point.

    Without explicit multipliers they are estimated by nonnegative least
    squares over the constraints that are active at ``z`` (within
    ``active_tol``), so an interior point gets zero multipliers.
    """
    z = np.asarray(z, float)
    n = problem.n
    grad = problem.H @ z + problem.f
    slack_g = problem.h - problem.G @ z
    slack_l = np.where(np.isfinite(problem.lb), z - problem.lb, np.inf)
    slack_u = np.where(np.isfinite(problem.ub), problem.ub - z, np.inf)
    if multipliers is None:
        lam_g = np.zeros(problem.G.shape[0])
        lam_l = np.zeros(n)
        lam_u = np.zeros(n)
        ag = np.flatnonzero(np.abs(slack_g) <= active_tol)
        al = np.flatnonzero(np.abs(slack_l) <= active_tol)
        au = np.flatnonzero(np.abs(slack_u) <= active_tol)
        cols = [problem.G[ag].T, -np.eye(n)[:, al], np.eye(n)[:, au]]
        M = np.hstack(cols) if (len(ag) + len(al) + len(au)) else np.zeros((n, 0))
        if M.shape[1]:
            mu, _ = scipy.optimize.nnls(M, -grad)
            lam_g[ag] = mu[: len(ag)]
            lam_l[al] = mu[len(ag): len(ag) + len(al)]
            lam_u[au] = mu[len(ag) + len(al):]
    else:
        lam_g, lam_l, lam_u = (np.asarray(m, float) for m in multipliers)
    stat = grad + _gradient_of_constraints(problem, lam_g, lam_l, lam_u)
    pfeas = max(0.0, -float(np.min(slack_g, initial=np.inf)), -float(np.min(slack_l)), -float(np.min(slack_u)))

    def comp(lam, slack):
        finite = np.isfinite(slack)
        worst = np.abs(lam[finite] * slack[finite])
        # a positive multiplier on an infinite bound can never be complementary
        bad = np.any((lam[~finite] != 0))
        return np.inf if bad else float(np.max(worst, initial=0.0))

    compl = max(comp(lam_g, slack_g), comp(lam_l, slack_l), comp(lam_u, slack_u))
    dfeas = max(0.0, -float(min(np.min(lam_g, initial=0.0), np.min(lam_l, initial=0.0), np.min(lam_u, initial=0.0))))
    return KktReport(float(np.max(np.abs(stat), initial=0.0)), pfeas, compl, dfeas, (lam_g, lam_l, lam_u))


class _Constraints:
    """Stacked view of ``G z <= h``, ``-z_i <= -lb_i`` and ``z_i <= ub_i`` (finite bounds only)."""

    def __init__(self, problem: QpProblem):
        keep = np.isfinite(problem.h)
        self.rows_g = np.flatnonzero(keep)
        self.G = problem.G[keep]
        self.il = np.flatnonzero(np.isfinite(problem.lb))
        self.iu = np.flatnonzero(np.isfinite(problem.ub))
        self.n = problem.n
        self.mg, self.ml = len(self.rows_g), len(self.il)
        self.m = self.mg + self.ml + len(self.iu)
        self.d = np.concatenate([problem.h[keep], -problem.lb[self.il], problem.ub[self.iu]])

    def apply(self, z):
        return np.concatenate([self.G @ z, -z[self.il], z[self.iu]])

    def apply_t(self, lam):
        out = self.G.T @ lam[: self.mg]
        out[self.il] -= lam[self.mg: self.mg + self.ml]
        out[self.iu] += lam[self.mg + self.ml:]
        return out

    def normal(self, w):
        K = (self.G.T * w[: self.mg]) @ self.G
        diag = np.zeros(self.n)
        np.add.at(diag, self.il, w[self.mg: self.mg + self.ml])
        np.add.at(diag, self.iu, w[self.mg + self.ml:])
        K[np.diag_indices(self.n)] += diag
        return K

    def split(self, lam, problem: QpProblem):
        lam_g = np.zeros(problem.G.shape[0])
        lam_g[self.rows_g] = lam[: self.mg]
        lam_l = np.zeros(self.n)
        lam_l[self.il] = lam[self.mg: self.mg + self.ml]
        lam_u = np.zeros(self.n)
        lam_u[self.iu] = lam[self.mg + self.ml:]
        return lam_g, lam_l, lam_u


def _factor(K: np.ndarray):
    """Cholesky factor of K, adding eps*I (scaled by K's diagonal) on failure."""
    try:
        return scipy.linalg.cho_factor(K, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(K)))))
    eps = PSD_EPS
    while eps < 1e-2:
        try:
            Kr = K + eps * scale * np.eye(K.shape[0])
            return scipy.linalg.cho_factor(Kr, check_finite=False), eps * scale
        except np.linalg.LinAlgError:
            eps *= 100.0
    raise np.linalg.LinAlgError("Newton system is not positive definite")


def _solve_with_fixed(problem: QpProblem, fixed: np.ndarray, feas_tol, kkt_tol, max_iter) -> QpSolution:
    """Pin near-degenerate boxes at their midpoint and solve for the remaining variables."""
    free = ~fixed
    z = np.where(fixed, 0.5 * (problem.lb + problem.ub), 0.0)
    h = problem.h - problem.G[:, fixed] @ z[fixed]
    G = problem.G[:, free]
    empty = ~np.any(G != 0.0, axis=1)
    if np.any(h[empty] < -feas_tol * (1.0 + np.abs(problem.h[empty]))):
        return QpSolution(z, problem.objective(z), Status.INFEASIBLE, float(np.max(-h[empty])), np.inf)
    keep = ~empty
    iters, reg, pres, dres = 0, 0.0, 0.0, 0.0
    lam_g = np.zeros(problem.G.shape[0])
    status = Status.OPTIMAL
    if np.any(free):
        reduced = QpProblem(
            problem.H[np.ix_(free, free)], problem.f[free] + problem.H[np.ix_(free, fixed)] @ z[fixed],
            G[keep], h[keep], problem.lb[free], problem.ub[free],
        )
        sol = solve(reduced, feas_tol, kkt_tol, max_iter)
        z[free] = sol.z
        lam_g[keep] = sol.multipliers[0]
        status, iters, reg, pres, dres = sol.status, sol.iterations, sol.regularization, \
            sol.primal_residual, sol.dual_residual
    # multipliers of the pinned bounds absorb the remaining gradient
    g = problem.H @ z + problem.f + problem.G.T @ lam_g
    lam_l = np.zeros(problem.n)
    lam_u = np.zeros(problem.n)
    if np.any(free):
        lam_l[free] = sol.multipliers[1]
        lam_u[free] = sol.multipliers[2]
    lam_l[fixed] = np.maximum(g[fixed], 0.0)
    lam_u[fixed] = np.maximum(-g[fixed], 0.0)
    return QpSolution(z, problem.objective(z), status, pres, dres, iters, (lam_g, lam_l, lam_u), reg)


def _max_step(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-x[neg] / dx[neg])))


def _diagonal_box_solution(problem: QpProblem) -> QpSolution | None:
    """Closed form for separable problems: diagonal H > 0, bounds only."""
    if problem.G.shape[0]:
        return None
    d = np.diag(problem.H)
    if np.any(d <= 0) or np.count_nonzero(problem.H - np.diag(d)):
        return None
    z = np.clip(-problem.f / d, problem.lb, problem.ub)
    g = d * z + problem.f
    lam_l = np.where(z <= problem.lb, np.maximum(g, 0.0), 0.0)
    lam_u = np.where(z >= problem.ub, np.maximum(-g, 0.0), 0.0)
    return QpSolution(z, problem.objective(z), Status.OPTIMAL, 0.0, 0.0, 0,
                      (np.zeros(0), lam_l, lam_u))


def solve(
    problem: QpProblem,
    feas_tol: float = FEAS_TOL,
    kkt_tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
    z0: np.ndarray | None = None,
) -> QpSolution:
    """Solve a convex QP; never raises on infeasible or hard instances.

    Raises ``ValueError`` only when H is not positive semidefinite.
    """
    if np.any(problem.h == -np.inf) or np.any(problem.lb == np.inf) or np.any(problem.ub == -np.inf):
        z = np.clip(np.zeros(problem.n), problem.lb, problem.ub)
        z = np.where(np.isfinite(z), z, 0.0)
        return QpSolution(z, problem.objective(z), Status.INFEASIBLE, np.inf, np.inf)
    fast = _diagonal_box_solution(problem)
    if fast is not None:
        return fast
    fixed = np.isfinite(problem.lb) & (problem.ub - problem.lb <= FIX_TOL * (1.0 + np.abs(problem.lb)))
    if np.any(fixed):
        return _solve_with_fixed(problem, fixed, feas_tol, kkt_tol, max_iter)

    H = problem.H
    reg = 0.0
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        reg = PSD_EPS
        try:
            np.linalg.cholesky(H + reg * np.eye(problem.n))
        except np.linalg.LinAlgError:
            raise ValueError("H is not positive semidefinite") from None
        H = H + reg * np.eye(problem.n)

    con = _Constraints(problem)
    f, n, m = problem.f, problem.n, con.m
    if m == 0:
        factor, extra = _factor(H)
        z = scipy.linalg.cho_solve(factor, -f)
        rd = problem.H @ z + f
        dres = float(np.max(np.abs(rd))) / (1.0 + max(float(np.max(np.abs(f))), float(np.max(np.abs(problem.H @ z)))))
        status = Status.OPTIMAL if dres <= kkt_tol else Status.MAX_ITER
        return QpSolution(z, problem.objective(z), status, 0.0, dres, 1,
                          (np.zeros(problem.G.shape[0]), np.zeros(n), np.zeros(n)), max(reg, extra))

    target = 1e-3 * min(feas_tol, kkt_tol)
    d = con.d
    d_norm = float(np.max(np.abs(d)))
    f_norm = float(np.max(np.abs(f), initial=0.0))

    # Mehrotra starting point: one affine step from (z0, 1, 1), then push s, lam away from zero
    if z0 is None:
        z0 = np.clip(np.zeros(n), problem.lb, problem.ub)
    z = np.asarray(z0, float).copy()
    s = np.ones(m)
    lam = np.ones(m)
    K = H + con.normal(lam / s)
    factor, extra = _factor(K)
    rp = con.apply(z) + s - d
    rd = H @ z + f + con.apply_t(lam)
    dz = scipy.linalg.cho_solve(factor, -rd - con.apply_t(lam * rp / s - lam))
    ds = -rp - con.apply(dz)
    dlam = (-s * lam - lam * ds) / s
    z = z + dz
    s = np.maximum(1.0, np.abs(s + ds))
    lam = np.maximum(1.0, np.abs(lam + dlam))

    best = None
    status = Status.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        Cz = con.apply(z)
        CTlam = con.apply_t(lam)
        Hz = H @ z
        rp = Cz + s - d
        rd = Hz + f + CTlam
        mu = float(s @ lam) / m
        obj = 0.5 * float(z @ Hz) + float(f @ z)
        pres = float(np.max(np.abs(rp))) / (1.0 + max(float(np.max(np.abs(Cz))), d_norm))
        dres = float(np.max(np.abs(rd))) / (1.0 + max(float(np.max(np.abs(Hz))), f_norm, float(np.max(np.abs(CTlam)))))
        gap = mu / (1.0 + abs(obj))
        score = max(pres / feas_tol, dres / kkt_tol, gap / kkt_tol)
        if best is None or score < best[0]:
            best = (score, z.copy(), lam.copy(), pres, dres, gap)
            best_it = it
        elif it - best_it > STALL_ITER:
            break
        if pres <= target and dres <= target and gap <= target:
            status = Status.OPTIMAL
            break

        # Farkas ray: lam >= 0 with C'lam = 0 and d'lam < 0
        lam_norm = float(np.max(lam))
        dlam_val = float(d @ lam)
        if lam_norm > 1e6 * (1.0 + f_norm) and dlam_val < 0:
            ray = float(np.max(np.abs(CTlam))) / lam_norm
            if ray <= 1e-6 and -dlam_val / lam_norm > 1e-6 * (1.0 + d_norm):
                status = Status.INFEASIBLE
                break

        W = np.minimum(lam / s, W_MAX)
        try:
            factor, extra = _factor(H + con.normal(W))
        except np.linalg.LinAlgError:
            break

        def newton(rc):
            dz = scipy.linalg.cho_solve(factor, -rd - con.apply_t((lam * rp - rc) / s), check_finite=False)
            ds = -rp - con.apply(dz)
            dlam = (-rc - lam * ds) / s
            return dz, ds, dlam

        rc = s * lam
        dz, ds, dlam = newton(rc)
        a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        rc = s * lam + ds * dlam - sigma * mu
        dz, ds, dlam = newton(rc)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dlam)))
        if not np.all(np.isfinite(dz)) or alpha < 1e-12:
            break
        z = z + alpha * dz
        s = s + alpha * ds
        lam = lam + alpha * dlam

    lam_split = con.split(lam, problem)
    if status is Status.OPTIMAL:
        return QpSolution(z, problem.objective(z), status, pres, dres, it, lam_split, max(reg, extra))
    if status is Status.INFEASIBLE:
        return QpSolution(z, problem.objective(z), status, pres, dres, it, lam_split, max(reg, extra))
    # no convergence to the internal target: fall back to the best iterate seen
    _, z, lam, pres, dres, gap = best
    if pres <= feas_tol and dres <= kkt_tol and gap <= kkt_tol:
        status = Status.OPTIMAL
    return QpSolution(z, problem.objective(z), status, pres, dres, it, con.split(lam, problem), max(reg, extra))
