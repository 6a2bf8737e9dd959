from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.optimize

from oracles import exhaustive_grid, random_qp, zoom_grid
from priompc.qp import QpProblem, Status, check_kkt, solve


def halfspace_problem():
    # min (z - 3)^2  s.t.  z <= 2, written as 0.5 z'Hz + f'z with the constant 9 dropped
    return QpProblem(np.array([[2.0]]), np.array([-6.0]), np.array([[1.0]]), np.array([2.0]))


def test_projection_onto_halfspace():
    sol = solve(halfspace_problem())
    assert sol.status is Status.OPTIMAL
    assert sol.z[0] == pytest.approx(2.0, abs=1e-7)
    assert sol.objective + 9.0 == pytest.approx(1.0, abs=1e-6)


def test_unconstrained_minimum():
    sol = solve(QpProblem(np.eye(2), -np.array([1.0, 2.0])))
    assert np.allclose(sol.z, [1.0, 2.0])
    assert sol.status is Status.OPTIMAL


def test_kkt_residuals_vanish_at_optimum():
    p = halfspace_problem()
    sol = solve(p)
    report = check_kkt(p, sol.z, sol.multipliers)
    assert report.max() <= 1e-8
    assert check_kkt(p, sol.z).max() <= 1e-8  # multipliers recovered internally


def test_interior_point_reports_stationarity_gap():
    p = halfspace_problem()
    report = check_kkt(p, np.array([1.0]))
    assert report.stationarity == pytest.approx(abs(2.0 * 1.0 - 6.0))
    assert report.primal_feasibility == 0.0


def test_wrong_active_set_reports_complementarity():
    # multiplier 4 on z <= 2 makes z = 1 stationary, but the constraint has slack 1
    p = halfspace_problem()
    report = check_kkt(p, np.array([1.0]), (np.array([4.0]), np.zeros(1), np.zeros(1)))
    assert report.stationarity == pytest.approx(0.0, abs=1e-12)
    assert report.complementarity == pytest.approx(4.0)


def test_three_variable_box_instance_matches_exhaustive_grid():
    rng = np.random.default_rng(7)
    M = rng.normal(size=(3, 3))
    H = M @ M.T + 0.5 * np.eye(3)
    f = rng.normal(size=3) * 2
    p = QpProblem(H, f, lb=np.full(3, -0.1), ub=np.array([0.1, 0.15, 0.1]))
    sol = solve(p)
    grid = exhaustive_grid(p, 1e-3)
    assert np.max(np.abs(sol.z - grid)) <= 2e-3


@pytest.mark.parametrize("seed", range(20))
def test_random_box_qps_match_refined_grid(seed):
    rng = np.random.default_rng(1000 + seed)
    p = random_qp(rng, int(rng.integers(1, 7)))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert np.max(np.abs(sol.z - zoom_grid(p))) <= 2e-3
    assert check_kkt(p, sol.z, sol.multipliers).max() <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_random_qps_with_halfspaces_match_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    p = random_qp(rng, n, n_rows=int(rng.integers(1, 4)))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert check_kkt(p, sol.z, sol.multipliers).max() <= 1e-6
    ref = scipy.optimize.minimize(
        p.objective, np.zeros(n), jac=lambda z: p.H @ z + p.f, method="SLSQP",
        bounds=list(zip(p.lb, p.ub)),
        constraints=[{"type": "ineq", "fun": lambda z: p.h - p.G @ z, "jac": lambda z: -p.G}],
        options={"ftol": 1e-12, "maxiter": 500},
    )
    assert sol.objective <= ref.fun + 1e-7 * (1 + abs(ref.fun))
    assert np.allclose(sol.z, ref.x, atol=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_no_random_feasible_point_beats_solution(seed):
    rng = np.random.default_rng(seed)
    p = random_qp(rng, 4, n_rows=2)
    sol = solve(p)
    Z = rng.uniform(-1, 1, size=(20_000, 4))
    feasible = Z[np.all(Z @ p.G.T <= p.h, axis=1)][:1000]
    assert len(feasible) == 1000
    objs = 0.5 * np.einsum("ij,jk,ik->i", feasible, p.H, feasible) + feasible @ p.f
    assert sol.objective <= objs.min() + 1e-9


@pytest.mark.parametrize("c1, c2", [(1e-3, 1.0), (1e4, 1.0), (1.0, 1e3), (50.0, 0.02)])
def test_argmin_invariant_under_scaling(c1, c2):
    rng = np.random.default_rng(3)
    p = random_qp(rng, 5, n_rows=2)
    base = solve(p).z
    scaled = solve(QpProblem(c1 * p.H, c1 * p.f, c2 * p.G, c2 * p.h, p.lb, p.ub)).z
    assert np.allclose(base, scaled, atol=1e-6)


def test_repeat_solves_are_bitwise_identical():
    p = random_qp(np.random.default_rng(11), 6, n_rows=3)
    a, b = solve(p), solve(p)
    assert np.array_equal(a.z, b.z) and a.iterations == b.iterations


def test_concurrent_solves_match_sequential():
    problems = [random_qp(np.random.default_rng(s), 5, n_rows=2) for s in range(16)]
    seq = [solve(p).z for p in problems]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda p: solve(p).z, problems))
    assert all(np.array_equal(a, b) for a, b in zip(seq, par))


def test_contradictory_halfspaces_are_infeasible():
    p = QpProblem(np.eye(2), np.zeros(2), np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([-1.0, -1.0]))
    assert solve(p).status is Status.INFEASIBLE


def test_halfspace_outside_box_is_infeasible():
    p = QpProblem(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([-5.0]), lb=-np.ones(2), ub=np.ones(2))
    assert solve(p).status is Status.INFEASIBLE


def test_minus_infinity_bound_is_infeasible_not_a_crash():
    p = QpProblem(np.eye(1), np.zeros(1), np.array([[1.0]]), np.array([-np.inf]))
    assert solve(p).status is Status.INFEASIBLE


def test_iteration_cap_returns_best_iterate():
    p = random_qp(np.random.default_rng(5), 6, n_rows=3)
    sol = solve(p, max_iter=1)
    assert sol.status is Status.MAX_ITER
    assert np.all(np.isfinite(sol.z))


def test_singular_hessian_is_regularized():
    H = np.array([[1.0, 1.0], [1.0, 1.0]])
    p = QpProblem(H, np.array([-1.0, 0.0]), np.array([[1.0, 0.0]]), np.array([0.5]), lb=-np.ones(2), ub=np.ones(2))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert sol.regularization == pytest.approx(1e-9)
    assert check_kkt(p, sol.z, sol.multipliers).max() <= 1e-6


def test_indefinite_hessian_rejected():
    p = QpProblem(np.diag([1.0, -1.0]), np.zeros(2), np.array([[1.0, 0.0]]), np.array([1.0]))
    with pytest.raises(ValueError):
        solve(p)


def test_degenerate_box_is_pinned():
    p = QpProblem(np.eye(3), -np.ones(3), np.array([[1.0, 1.0, 1.0]]), np.array([1.0]),
                  lb=np.zeros(3), ub=np.array([1e-14, 1.0, 1.0]))
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert np.allclose(sol.z, [0.0, 0.5, 0.5], atol=1e-7)
    assert check_kkt(p, sol.z, sol.multipliers).max() <= 1e-6


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(H=np.array([[1.0, 2.0], [0.0, 1.0]]), f=np.zeros(2)),
        dict(H=np.eye(2), f=np.zeros(3)),
        dict(H=np.eye(2), f=np.zeros(2), lb=np.ones(2), ub=np.zeros(2)),
        dict(H=np.eye(2), f=np.zeros(2), G=np.ones((1, 3)), h=np.ones(1)),
    ],
)
def test_malformed_problems_rejected(kwargs):
    with pytest.raises(ValueError):
        QpProblem(**kwargs)
