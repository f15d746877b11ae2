import numpy as np
import pytest

from gridfleet.dcopf import (
    OpfInfeasibleError,
    OpfInstance,
    build_structure,
    kkt_diagnostics,
    lmp,
    solve_opf,
    solve_opf_horizon,
)
from gridfleet.scenario import Branch, Generator, PowerGrid, synth_scenario


def grid_1bus(line_cap=5.0):
    return PowerGrid(
        bus_ids=("g1", "1"), bus_kinds=("gen", "load"), slack_bus="g1",
        branches=(Branch("g1", "1", 10.0, -line_cap, line_cap),),
        generators=(Generator("g1", 0.002, 114.4, 0.0, 3.0),),
        base_load=np.zeros((1, 1)),
    )


def grid_2bus_congested():
    # cheap remote unit behind a binding line, expensive unit at the load bus
    return PowerGrid(
        bus_ids=("g1", "1"), bus_kinds=("gen", "load"), slack_bus="g1",
        branches=(Branch("g1", "1", 10.0, -0.4, 0.4),),
        generators=(Generator("g1", 0.002, 114.4, 0.0, 2.0),
                    Generator("1", 0.004, 116.5, 0.0, 2.0)),
        base_load=np.zeros((1, 1)),
    )


def test_analytic_1bus():
    st = build_structure(grid_1bus())
    inst = OpfInstance(st, np.array([1.0]))
    sol = solve_opf(inst)
    assert sol.g == pytest.approx([1.0], abs=1e-8)
    assert sol.lambda_bus == pytest.approx([114.404, 114.404], abs=1e-6)
    assert lmp(sol) == pytest.approx([114.404], abs=1e-6)
    assert sol.lambda_0 == pytest.approx(0.0, abs=1e-6)
    assert kkt_diagnostics(inst, sol).max_residual <= 1e-8


def test_hand_2bus_congestion():
    st = build_structure(grid_2bus_congested())
    inst = OpfInstance(st, np.array([1.0]))
    sol = solve_opf(inst)
    assert sol.g == pytest.approx([0.4, 0.6], abs=1e-6)
    assert sol.theta == pytest.approx([0.0, -0.04], abs=1e-6)
    assert sol.lambda_bus == pytest.approx([114.4016, 116.5048], abs=1e-6)
    assert sol.eta_plus == pytest.approx([2.1032], abs=1e-6)
    assert sol.eta_minus == pytest.approx([0.0], abs=1e-6)
    assert sol.objective == pytest.approx(115.66176, abs=1e-6)
    rep = kkt_diagnostics(inst, sol)
    assert rep.max_residual <= 1e-8
    assert rep.licq_ok
    assert rep.binding["f_max"] == [0]


def test_zero_load_degenerate():
    grid = PowerGrid(
        bus_ids=("g1", "1"), bus_kinds=("gen", "load"), slack_bus="g1",
        branches=(Branch("g1", "1", 10.0, -5.0, 5.0),),
        generators=(Generator("g1", 0.002, 114.4, 0.0, 3.0),
                    Generator("g1", 0.004, 116.5, 0.0, 3.0)),
        base_load=np.zeros((1, 1)),
    )
    st = build_structure(grid)
    inst = OpfInstance(st, np.array([0.0]))
    sol = solve_opf(inst)
    assert sol.g == pytest.approx([0.0, 0.0], abs=1e-8)
    assert sol.objective == pytest.approx(0.0, abs=1e-6)
    # duals are non-unique here; the price cannot exceed the cheapest unit
    assert lmp(sol)[0] <= 114.4 + 1e-6
    rep = kkt_diagnostics(inst, sol)
    assert not rep.licq_ok  # more active gradients than variables
    # deterministic tie-breaking
    sol2 = solve_opf(OpfInstance(st, np.array([0.0])))
    assert np.array_equal(sol.lambda_bus, sol2.lambda_bus)


def test_uncongested_uniform_lmp():
    s = synth_scenario(4, 3, 5)
    st = build_structure(s.power)
    sol = solve_opf(OpfInstance(st, np.asarray(s.power.base_load)[2]))
    rep = kkt_diagnostics(OpfInstance(st, np.asarray(s.power.base_load)[2]), sol)
    if not (rep.binding["f_max"] or rep.binding["f_min"]):
        spread = sol.lambda_bus.max() - sol.lambda_bus.min()
        assert spread <= 1e-8


def test_interior_generator_prices_marginal_cost():
    st = build_structure(grid_1bus())
    sol = solve_opf(OpfInstance(st, np.array([1.0])))
    g = sol.g[0]
    assert 0.0 < g < 3.0
    mc = 2 * 0.002 * g + 114.4
    assert lmp(sol)[0] == pytest.approx(mc, abs=1e-6)


def test_strong_duality_via_complementarity():
    st = build_structure(grid_2bus_congested())
    sol = solve_opf(OpfInstance(st, np.array([1.0])))
    assert sol.comp_gap <= 1e-8 * (1.0 + abs(sol.objective))


def test_random_instances_kkt(seeds=range(25)):
    worst = 0.0
    for seed in seeds:
        s = synth_scenario(seed, 3, 4)
        st = build_structure(s.power)
        for t in (0, 8, 17):
            inst = OpfInstance(st, np.asarray(s.power.base_load)[t])
            sol = solve_opf(inst)
            rep = kkt_diagnostics(inst, sol)
            worst = max(worst, rep.max_residual)
            assert rep.dual_feas >= -1e-10
    assert worst <= 1e-8


def test_duplicate_solve_bitwise_identical():
    s = synth_scenario(9, 4, 6)
    st = build_structure(s.power)
    load = np.asarray(s.power.base_load)[5]
    a = solve_opf(OpfInstance(st, load))
    b = solve_opf(OpfInstance(st, load))
    assert np.array_equal(a.g, b.g)
    assert np.array_equal(a.lambda_bus, b.lambda_bus)
    assert np.array_equal(a.eta_plus, b.eta_plus)


def test_infeasible_overload_detected():
    st = build_structure(grid_1bus())
    with pytest.raises(OpfInfeasibleError):
        solve_opf(OpfInstance(st, np.array([10.0])))  # above total capacity


def test_infeasible_line_detected():
    st = build_structure(grid_1bus(line_cap=0.3))
    with pytest.raises(OpfInfeasibleError):
        solve_opf(OpfInstance(st, np.array([1.0])))  # line cannot carry the load


def test_horizon_constant_load_constant_prices():
    s = synth_scenario(5, 3, 4)
    load = np.tile(np.asarray(s.power.base_load)[0], (6, 1))
    sols, prices = solve_opf_horizon(s.power, load)
    for t in range(1, 6):
        assert np.array_equal(prices.values[t], prices.values[0])


def test_horizon_infeasibility_names_step():
    s = synth_scenario(5, 3, 4)
    load = np.asarray(s.power.base_load)[:6].copy()
    load[3] += 100.0
    with pytest.raises(OpfInfeasibleError, match="time step 3"):
        solve_opf_horizon(s.power, load)


def test_added_load_never_cheaper():
    s = synth_scenario(6, 3, 4)
    st = build_structure(s.power)
    base = np.asarray(s.power.base_load)[4]
    sol0 = solve_opf(OpfInstance(st, base))
    rng = np.random.default_rng(3)
    for _ in range(5):
        extra = rng.uniform(0.0, 0.2, size=base.shape)
        sol1 = solve_opf(OpfInstance(st, base + extra))
        assert sol1.objective >= sol0.objective - 1e-7


def test_workers_match_sequential():
    s = synth_scenario(7, 3, 4)
    load = np.asarray(s.power.base_load)[:8]
    _, p1 = solve_opf_horizon(s.power, load)
    _, p2 = solve_opf_horizon(s.power, load, workers=4)
    assert np.array_equal(p1.values, p2.values)


def test_horizon_performance_hawaii():
    import time
    from gridfleet import bundled_scenario_path, load_scenario
    s = load_scenario(bundled_scenario_path("hawaii_like"))
    st = build_structure(s.power)
    t0 = time.perf_counter()
    sols, prices = solve_opf_horizon(s.power, np.asarray(s.power.base_load),
                                     structure=st)
    assert time.perf_counter() - t0 < 5.0
    assert prices.values.shape == (32, 37)
