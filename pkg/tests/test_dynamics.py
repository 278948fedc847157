import dataclasses
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from nwndetect.dynamics import (RESET_PERSISTENT, DynParams,
                                KirchhoffSolver, SingularNetworkError,
                                conductance, initial_state, make_csv_tracer,
                                run_tile, solve_network, solver_for,
                                step_state, write_trace_header)
from nwndetect.netgen import (ROLE_INPUT, ROLE_READOUT, Electrode, GenParams,
                              Junction, Wire, build_graph, generate_device)

from conftest import SMALL_GEN

PARAMS = DynParams()


def _hand_graph(n_wires, roles, edges):
    """Tiny graph from explicit pieces; geometry fields are placeholders."""
    wires = [Wire(id=i, center=(0.0, 0.0), orientation=0.0, length=1.0)
             for i in range(n_wires)]
    electrodes = [Electrode(id=i, center=(0.0, 0.0), radius=1.0, role=r)
                  for i, r in enumerate(roles)]
    junctions = [Junction(id=k, kind="wire-wire", node_a=a, node_b=b,
                          position=(0.0, 0.0))
                 for k, (a, b) in enumerate(edges)]
    return build_graph(wires, electrodes, junctions)


@pytest.fixture
def pair_graph():
    # one wire, one input electrode, a single junction between them
    return _hand_graph(1, [ROLE_INPUT], [(1, 0)])


def test_dyn_params_validation():
    PARAMS.validate()
    for bad in (dict(v_reset=2e-2), dict(v_reset=0.0), dict(lambda_max=0.0),
                dict(decay_rate=-1.0), dict(dt=0.0), dict(steps_per_tile=0),
                dict(g_off=0.0), dict(g_on=1e-9), dict(reset_policy="never")):
        with pytest.raises(ValueError):
            dataclasses.replace(PARAMS, **bad).validate()


def test_dyn_params_dict_roundtrip():
    params = dataclasses.replace(PARAMS, dt=2e-4, reset_policy=RESET_PERSISTENT)
    assert DynParams.from_dict(params.to_dict()) == params


def test_conductance_endpoints_exact():
    params = PARAMS
    lam = np.array([0.0, params.lambda_max, -params.lambda_max,
                    params.lambda_max / 2, 2 * params.lambda_max])
    g = conductance(lam, params)
    assert g[0] == params.g_off
    assert g[1] == params.g_on
    assert g[2] == params.g_on
    assert g[3] == pytest.approx((params.g_off + params.g_on) / 2, rel=1e-15)
    assert g[4] == params.g_on  # saturation also covers out-of-range input
    assert np.all(g >= params.g_off) and np.all(g <= params.g_on)


def test_floating_node_equilibrates_to_drive(pair_graph):
    g = np.array([3.3e-6])
    v = solve_network(pair_graph, g, np.array([0.37]))
    assert v[1] == 0.37  # Dirichlet value is exact at the input node
    assert v[0] == pytest.approx(0.37, abs=1e-12)


def test_symmetric_divider_halves_the_drive():
    graph = _hand_graph(1, [ROLE_INPUT, ROLE_INPUT], [(1, 0), (0, 2)])
    v = solve_network(graph, np.array([2e-6, 2e-6]), np.array([1.0, 0.0]))
    assert v[0] == pytest.approx(0.5, abs=1e-12)
    assert v[1] == 1.0 and v[2] == 0.0


def test_dead_component_is_pinned_to_zero():
    # wire 1 is connected to nothing that carries an input electrode
    graph = _hand_graph(2, [ROLE_INPUT, ROLE_READOUT], [(2, 0), (1, 3)])
    v = solve_network(graph, np.array([1e-6, 1e-6]), np.array([0.7]))
    assert v[2] == 0.7
    assert v[0] == pytest.approx(0.7, abs=1e-12)
    assert v[1] == 0.0 and v[3] == 0.0


def _random_device_cases(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        params = GenParams(wire_count=int(rng.integers(30, 150)),
                           plane_size=(60.0, 60.0), grid_n=4,
                           seed=int(rng.integers(0, 2 ** 32)))
        graph = generate_device(params)
        g = np.exp(rng.uniform(np.log(PARAMS.g_off), np.log(PARAMS.g_on),
                               graph.edge_count))
        drive = rng.uniform(-0.4, 0.8, len(graph.input_node_ids))
        yield graph, g, drive


def test_solve_matches_dense_oracle():
    for graph, g, drive in _random_device_cases(25, seed=7):
        v = solve_network(graph, g, drive)
        ref = reference.dense_solve(graph, g, drive)
        scale = max(float(np.abs(ref).max()), 1e-30)
        assert float(np.abs(v - ref).max()) <= 1e-9 * scale


def test_current_conservation_bound():
    for graph, g, drive in _random_device_cases(10, seed=8):
        v = solve_network(graph, g, drive)
        ratios = reference.node_current_bound_ratios(graph, g, v)
        assert float(ratios.max()) <= 1e-12


def test_voltages_obey_maximum_principle(small_graph):
    solver = solver_for(small_graph, PARAMS.g_off)
    rng = np.random.default_rng(31)
    live = np.isin(small_graph.component_labels,
                   small_graph.component_labels[small_graph.input_node_ids])
    for _ in range(100):
        drive = rng.uniform(-0.4, 0.8, 4)
        state = rng.uniform(-PARAMS.lambda_max, PARAMS.lambda_max,
                            small_graph.edge_count)
        v = solver.begin_tile(drive).solve(conductance(state, PARAMS))
        lo, hi = drive.min(), drive.max()
        assert np.all(v[live] >= lo - 1e-12)
        assert np.all(v[live] <= hi + 1e-12)
        assert np.all(v[~live] == 0.0)


def test_uniform_drive_equilibrates_every_live_node(small_graph):
    solver = solver_for(small_graph, PARAMS.g_off)
    g = np.full(small_graph.edge_count, PARAMS.g_off)
    v_session = solver.begin_tile(np.full(4, 0.25)).solve(g)
    v_direct = solver.solve(g, np.full(4, 0.25))
    live = np.isin(small_graph.component_labels,
                   small_graph.component_labels[small_graph.input_node_ids])
    assert np.all(v_session[live] == 0.25)
    assert np.all(v_session[~live] == 0.0)
    assert np.abs(v_session - v_direct).max() <= 1e-12


def test_session_agrees_with_oneshot_solves(small_graph):
    """The incremental per-tile path and plain refactoring are two routes to
    the same linear systems; walk one tile and compare step by step."""
    solver = solver_for(small_graph, PARAMS.g_off)
    rng = np.random.default_rng(17)
    drive = rng.uniform(-0.4, 0.8, 4)
    session = solver.begin_tile(drive)
    state = initial_state(small_graph)
    for _ in range(PARAMS.steps_per_tile):
        g = conductance(state, PARAMS)
        v_fast = session.solve(g)
        v_exact = solver.solve(g, drive)
        scale = max(float(np.abs(v_exact).max()), 1e-30)
        assert float(np.abs(v_fast - v_exact).max()) <= 1e-9 * scale
        state = step_state(state, v_fast, small_graph, PARAMS)


def test_solver_input_validation(small_graph):
    solver = solver_for(small_graph, PARAMS.g_off)
    g = np.full(small_graph.edge_count, PARAMS.g_off)
    with pytest.raises(ValueError):
        solver.solve(g[:-1], np.zeros(4))
    with pytest.raises(ValueError):
        solver.solve(g, np.zeros(3))
    with pytest.raises(ValueError):
        solver.solve(g, np.array([np.nan, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        KirchhoffSolver(small_graph, g_off=0.0)
    with pytest.raises(ValueError):
        solve_network(small_graph, np.zeros(small_graph.edge_count),
                      np.zeros(4))


def test_singular_network_raises_with_diagnostics():
    # wire 1 hangs off wire 0 through a zero-conductance junction, so its
    # row of the reduced matrix vanishes
    graph = _hand_graph(2, [ROLE_INPUT], [(2, 0), (0, 1)])
    solver = KirchhoffSolver(graph, PARAMS.g_off)
    with pytest.raises(SingularNetworkError, match="component"):
        solver.solve(np.array([PARAMS.g_off, 0.0]), np.array([0.5]))
    assert issubclass(SingularNetworkError, ValueError)


def test_solver_cache_reuses_instances(small_graph):
    assert solver_for(small_graph, PARAMS.g_off) is solver_for(
        small_graph, PARAMS.g_off)


def test_growth_branch_matches_closed_form(pair_graph):
    """1000 constant-voltage steps above threshold accumulate exactly
    n * dt * (V - v_set), compared against the sum computed here."""
    params = dataclasses.replace(PARAMS, dt=1e-3)
    # edge is (electrode, wire), so this drop is +2e-2 across the junction
    volts = np.array([0.0, 2e-2])
    state = np.zeros(1)
    for _ in range(1000):
        state = step_state(state, volts, pair_graph, params)
    expected = 1000 * params.dt * (2e-2 - params.v_set)
    assert abs(state[0] - expected) <= 1e-12
    assert abs(expected - 1.0e-2) <= 1e-15


def test_growth_sign_follows_voltage(pair_graph):
    volts = np.array([0.0, 2e-2])
    state = step_state(np.zeros(1), volts, pair_graph, PARAMS)
    assert state[0] > 0
    state = step_state(np.zeros(1), -volts, pair_graph, PARAMS)
    assert state[0] < 0


def test_dead_zone_leaves_state_bit_identical(pair_graph):
    for drop in (7.5e-3, -7.5e-3, 6e-3, 9.9e-3):
        volts = np.array([drop, 0.0])
        for lam in (0.0, 1e-3, -1e-3, PARAMS.lambda_max):
            state = np.array([lam])
            for _ in range(50):
                out = step_state(state, volts, pair_graph, PARAMS)
                assert np.array_equal(out, state)
                state = out


def test_decay_single_step_closed_form(pair_graph):
    params = dataclasses.replace(PARAMS, dt=1e-3)
    state = step_state(np.array([1e-2]), np.zeros(2), pair_graph, params)
    expected = 1e-2 + params.decay_rate * (0.0 - params.v_reset) * 1e-3
    assert abs(state[0] - expected) <= 1e-12
    assert abs(state[0] - 9.95e-3) <= 1e-12


def test_exact_branch_boundaries_are_inert(pair_graph):
    for drop in (PARAMS.v_set, PARAMS.v_reset, -PARAMS.v_set,
                 -PARAMS.v_reset):
        volts = np.array([drop, 0.0])
        state = step_state(np.array([4e-3]), volts, pair_graph, PARAMS)
        assert state[0] == 4e-3


def test_saturation_holds_against_growth_but_decays(pair_graph):
    grown = step_state(np.array([PARAMS.lambda_max]), np.array([0.0, 0.5]),
                       pair_graph, PARAMS)
    assert grown[0] == PARAMS.lambda_max
    decayed = step_state(np.array([PARAMS.lambda_max]), np.zeros(2),
                         pair_graph, PARAMS)
    assert decayed[0] < PARAMS.lambda_max


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(-1.5e-2, 1.5e-2),
       drop=st.floats(-1.0, 1.0),
       dt=st.floats(1e-6, 10.0))
def test_state_stays_clamped(lam, drop, dt):
    graph = _hand_graph(1, [ROLE_INPUT], [(1, 0)])
    params = dataclasses.replace(PARAMS, dt=dt)
    out = step_state(np.array([lam]), np.array([drop, 0.0]), graph, params)
    assert abs(out[0]) <= params.lambda_max


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(-1.5e-2, 1.5e-2),
       drop=st.floats(-4.999e-3, 4.999e-3),
       dt=st.floats(1e-6, 10.0))
def test_decay_never_crosses_zero(lam, drop, dt):
    graph = _hand_graph(1, [ROLE_INPUT], [(1, 0)])
    params = dataclasses.replace(PARAMS, dt=dt)
    out = step_state(np.array([lam]), np.array([drop, 0.0]), graph, params)
    if lam > 0:
        assert 0.0 <= out[0] <= lam
    elif lam < 0:
        assert lam <= out[0] <= 0.0
    else:
        assert out[0] == 0.0


def test_monotone_total_input_current(small_graph):
    """Sustained super-threshold drive on a fresh network only grows
    conductances, so the current drawn through the driven electrode must
    never drop from one step to the next."""
    solver = solver_for(small_graph, PARAMS.g_off)
    drive = np.array([0.8, 0.0, 0.0, 0.0])
    driven = small_graph.input_node_ids[0]
    session = solver.begin_tile(drive)
    state = initial_state(small_graph)
    last = -np.inf
    for _ in range(40):
        g = conductance(state, PARAMS)
        v = session.solve(g)
        on_a = small_graph.edge_a == driven
        on_b = small_graph.edge_b == driven
        current = float(np.sum(g[on_a] * (v[driven] - v[small_graph.edge_b[on_a]]))
                        + np.sum(g[on_b] * (v[driven] - v[small_graph.edge_a[on_b]])))
        assert current >= last - 1e-9 * abs(current)
        last = current
        state = step_state(state, v, small_graph, PARAMS)


def test_run_tile_zero_drive_is_all_zero(small_graph):
    readout, state = run_tile(small_graph, np.zeros(4), PARAMS)
    assert np.all(readout == 0.0)
    assert np.all(state == 0.0)
    assert readout.shape == (12,)
    assert state.shape == (small_graph.edge_count,)


def test_run_tile_deterministic(small_graph):
    pooled = np.array([0.8, -0.4, 0.5, -0.1])
    r1, s1 = run_tile(small_graph, pooled, PARAMS)
    r2, s2 = run_tile(small_graph, pooled, PARAMS)
    assert np.array_equal(r1, r2)
    assert np.array_equal(s1, s2)
    assert not np.all(s1 == 0.0)  # the contrast above must move some state


def test_run_tile_rejects_bad_drive_length(small_graph):
    with pytest.raises(ValueError, match="input"):
        run_tile(small_graph, np.zeros(5), PARAMS)


def test_per_tile_reset_ignores_carried_state(small_graph):
    pooled = np.array([0.8, -0.4, 0.5, -0.1])
    fresh, state1 = run_tile(small_graph, pooled, PARAMS)
    again, _ = run_tile(small_graph, pooled, PARAMS, state_in=state1)
    assert np.array_equal(fresh, again)


def test_persistent_state_carries_between_tiles(small_graph):
    params = dataclasses.replace(PARAMS, reset_policy=RESET_PERSISTENT)
    pooled = np.array([0.8, -0.4, 0.5, -0.1])
    r1, s1 = run_tile(small_graph, pooled, params, state_in=None)
    assert not np.all(s1 == 0.0)
    r2, s2 = run_tile(small_graph, pooled, params, state_in=s1)
    assert not np.array_equal(r1, r2)
    assert not np.array_equal(s1, s2)
    with pytest.raises(ValueError, match="state"):
        run_tile(small_graph, pooled, params, state_in=s1[:-1])


def test_trace_csv_records_every_step(small_graph):
    buf = io.StringIO()
    write_trace_header(buf)
    pooled = np.array([0.8, -0.4, 0.5, -0.1])
    readout, state = run_tile(small_graph, pooled, PARAMS,
                              trace=make_csv_tracer(buf))
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "step,junction,lambda,voltage"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == PARAMS.steps_per_tile * small_graph.edge_count
    last_step = [r for r in rows if int(r[0]) == PARAMS.steps_per_tile - 1]
    traced = np.array([float(r[2]) for r in last_step])
    # 17 significant digits round-trip doubles exactly
    assert np.array_equal(traced, state)


def test_empty_graph_is_rejected():
    empty = build_graph([], [], [])
    with pytest.raises(ValueError, match="empty"):
        KirchhoffSolver(empty, PARAMS.g_off)
