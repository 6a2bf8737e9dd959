from __future__ import annotations

import numpy as np
import pytest

from instances import random_instance
from priompc.mpc import (
    ComfortWindow,
    HorizonConfig,
    PlanError,
    PriceSchedule,
    build_cost_terms,
    build_prediction,
    implied_slack,
    predictor,
    solve_centralized,
    solve_decentralized,
    solve_distributed_local,
)
from priompc.thermal import ZoneThermalParams, compose_multizone, discrete_zone, step


def test_unoccupied_horizon_has_no_comfort_weight():
    terms = build_cost_terms(ComfortWindow.no_limit(4), PriceSchedule(np.ones(4)), 4)
    assert np.all(terms.v_weight == 0)
    assert terms.comfort(np.full(4, 3.0)) == 0.0


def test_energy_cost_with_unit_price():
    terms = build_cost_terms(ComfortWindow.no_limit(2), PriceSchedule(np.ones(2)), 2)
    assert terms.energy(np.array([1.0, 1.0])) == 2.0


def test_cost_terms_reject_length_mismatch():
    with pytest.raises(ValueError):
        build_cost_terms(ComfortWindow.no_limit(3), PriceSchedule(np.ones(2)), 3)


def test_window_validation():
    with pytest.raises(ValueError):
        ComfortWindow(np.array([25.0]), np.array([24.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ComfortWindow(np.array([22.0]), np.array([24.0]), np.array([0.5]))
    with pytest.raises(ValueError):
        PriceSchedule(np.array([0.0, 1.0]))


def test_horizon_config_validation():
    with pytest.raises(ValueError):
        HorizonConfig(0, 1.0, [1.0], 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        HorizonConfig(2, -1.0, [1.0], 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        HorizonConfig(2, 1.0, [0.0], 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        HorizonConfig(2, 1.0, [1.0], 2.0, 1.0, 1.0)


def test_single_step_prediction():
    zone = discrete_zone(ZoneThermalParams.reference())
    rng = np.random.default_rng(0)
    x0 = rng.uniform(20, 30, 9)
    d = rng.normal(size=(1, 9))
    pred = build_prediction(zone, x0, d, 1)
    u = np.array([300.0])
    assert pred.outputs(u)[0, 0] == pytest.approx(zone.C @ (zone.A @ x0 + zone.B * 300.0 + d[0]))
    assert np.array_equal(pred.outputs(np.zeros(1)), pred.y_free)


def test_two_zone_prediction_matches_repeated_stepping():
    rng = np.random.default_rng(1)
    ref = ZoneThermalParams.reference()
    model = compose_multizone([discrete_zone(ref), discrete_zone(ref.scaled(1.1, 0.9))])
    P = 6
    x0 = rng.uniform(22, 30, 18)
    d = rng.normal(scale=0.2, size=(P, 18))
    u = rng.uniform(0, 800, (2, P))
    pred = build_prediction(model, x0, d, P)
    x = x0
    for l in range(P):
        x = step(model, x, u[:, l], d[l])
        assert np.allclose(pred.outputs(u)[:, l], model.output(x), atol=1e-10)


def test_predictor_cache_tracks_model_identity():
    zone = discrete_zone(ZoneThermalParams.reference())
    assert predictor(zone, 4) is predictor(zone, 4)
    assert predictor(zone, 5) is not predictor(zone, 4)


def test_large_cap_decomposes_into_zone_problems():
    inst = random_instance(np.random.default_rng(2), cap=1e6)
    plans = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)
    for m, plan in enumerate(plans):
        alone = solve_distributed_local(inst.model.zones[m], inst.x_zone(m), inst.d_zone(m), inst.windows[m],
                                        inst.prices, inst.config, np.full(8, 1500.0), zone=m)
        assert plan.J == pytest.approx(alone.J, rel=1e-6)
        assert np.allclose(plan.u, alone.u, atol=1e-3)


def test_zero_alpha_drives_inputs_to_lower_bound():
    inst = random_instance(np.random.default_rng(3), alpha=0.0)
    plans = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)
    assert all(np.allclose(p.u, 0.0, atol=1e-3) for p in plans)  # solver tolerance is 1e-6 kW


def test_centralized_plans_respect_shared_cap_and_boxes():
    for seed in range(5):
        inst = random_instance(np.random.default_rng(10 + seed))
        plans = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)
        total = np.sum([p.u for p in plans], axis=0)
        assert np.all(total <= inst.config.c_max + 1e-6 * 1000)
        for p in plans:
            assert np.all(p.u >= 0) and np.all(p.u <= 1500.0)
            assert np.all(p.v >= 0)


def test_slack_equals_band_violation_when_penalised():
    inst = random_instance(np.random.default_rng(4))
    plans = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)
    for p, w in zip(plans, inst.windows):
        occ = w.occupied > 0
        assert np.allclose(p.v[occ], implied_slack(p.y, w)[occ], atol=1e-5)


def test_objective_is_weighted_sum_of_terms():
    inst = random_instance(np.random.default_rng(5))
    plans = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)
    for p in plans:
        assert p.J == pytest.approx(inst.config.alpha * p.J_v + p.J_u)


def test_two_zone_problem_matches_one_watt_grid():
    """Exhaustive search over u on a 1 W lattice; the optimal slack given u is the band violation."""
    ref = ZoneThermalParams.reference()
    model = compose_multizone([discrete_zone(ref), discrete_zone(ref.scaled(1.2, 0.9))])
    P, U, cap = 2, 40.0, 45.0
    x0 = np.full(18, 26.0)
    d = np.zeros((P, 18))
    free = build_prediction(model, x0, d, P).y_free
    windows = [ComfortWindow(np.full(P, -np.inf), free[m] - 0.3, np.ones(P)) for m in range(2)]
    prices = PriceSchedule(np.array([1.0881, 0.6629]))
    theta = np.array([1.0, 0.1])
    alpha = 1e4
    config = HorizonConfig(P, alpha, theta, 0.0, U, np.full(P, cap))
    plans = solve_centralized(model, x0, d, windows, prices, config)
    got = np.concatenate([p.u for p in plans])

    pred = build_prediction(model, x0, d, P)
    axis = np.arange(0.0, U + 0.5, 1.0)
    grid = np.stack(np.meshgrid(axis, axis, axis, axis, indexing="ij"), -1).reshape(-1, 4)  # zone-major
    y = pred.y_free.ravel() + grid @ pred.Su.T
    v = np.maximum(0.0, y - np.concatenate([w.y_max for w in windows]))
    tw = np.repeat(theta, P)
    cost = (tw * (alpha * v**2 + np.tile(prices.price, 2) * grid**2)).sum(axis=1)
    feasible = (grid[:, 0] + grid[:, 2] <= cap) & (grid[:, 1] + grid[:, 3] <= cap)
    best = grid[np.argmin(np.where(feasible, cost, np.inf))]
    assert 0.5 < got.max() < U - 0.5  # interior enough for the test to mean something
    assert np.max(np.abs(got - best)) <= 1.0


def test_single_zone_decentralized_equals_centralized():
    inst = random_instance(np.random.default_rng(6), n_zones=1)
    zone = inst.model.zones[0]
    central = solve_centralized(inst.model, inst.x0, inst.d_central, inst.windows, inst.prices, inst.config)[0]
    local = solve_decentralized(zone, inst.x0, inst.d_zone(0), inst.windows[0], inst.prices, inst.config)
    assert np.allclose(central.u, local.u, atol=1e-4)
    assert central.J == pytest.approx(local.J, rel=1e-6)


def test_scarce_share_on_hot_forecast_activates_slack():
    inst = random_instance(np.random.default_rng(7), cap=150.0, alpha=1e6)
    inst.w[:, :, :4] = 38.0
    inst.x0[:] = 30.0
    plan = solve_decentralized(inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0],
                               inst.prices, inst.config)
    occ = inst.windows[0].occupied > 0
    assert np.all(plan.u <= 50.0 + 1e-6)
    assert np.all(plan.v[occ] > 0)


def test_zero_cap_forces_zero_input():
    inst = random_instance(np.random.default_rng(8), cap=0.0)
    plan = solve_decentralized(inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0],
                               inst.prices, inst.config)
    assert np.all(plan.u == 0.0)


def test_full_allowance_never_worse_than_equal_share():
    for seed in range(10):
        inst = random_instance(np.random.default_rng(20 + seed))
        args = (inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0], inst.prices, inst.config)
        dec = solve_decentralized(*args)
        dist = solve_distributed_local(*args, inst.config.c_max)
        assert dist.J <= dec.J + 1e-5 * (1 + abs(dec.J))


def test_zero_allowance_leaves_free_response():
    inst = random_instance(np.random.default_rng(9))
    args = (inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0], inst.prices, inst.config)
    plan = solve_distributed_local(*args, np.zeros(8))
    free = build_prediction(inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), 8).y_free[0]
    assert np.all(plan.u == 0.0)
    assert np.allclose(plan.y, free)


def test_allowance_is_clamped_and_respected():
    inst = random_instance(np.random.default_rng(11), alpha=1e7)
    args = (inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0], inst.prices, inst.config)
    allowance = np.linspace(-200.0, 400.0, 8)
    plan = solve_distributed_local(*args, allowance)
    assert np.all(plan.u <= np.clip(allowance, 0, None) + 1e-9)
    with pytest.raises(ValueError):
        solve_distributed_local(*args, np.zeros(5))


def test_allowance_below_lower_input_bound_raises_plan_error():
    inst = random_instance(np.random.default_rng(12))
    config = HorizonConfig(8, 1e5, inst.config.theta, 100.0, 1500.0, inst.config.c_max)
    with pytest.raises(PlanError) as info:
        solve_distributed_local(inst.model.zones[0], inst.x_zone(0), inst.d_zone(0), inst.windows[0],
                                inst.prices, config, np.zeros(8), zone=2, step=17)
    assert info.value.zone == 2
    assert "zone 2" in str(info.value)
