from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendobs.errors import MixingSingularityError, SimulationError, SubsonicError
from blendobs.gas_physics import IdealLaw, IsentropicLaw
from blendobs.network import BoundaryData, Signal, network_from_dict
from blendobs.solver import (
    NodeTrace,
    PipeField,
    advance_plant,
    boundary_conditions,
    cfl_dt,
    inflow_set,
    junction_coupling_hydrogen,
    junction_coupling_sigma,
    k_sigma_matrix,
    mixing_weights,
    node_residuals,
    state_from_arrays,
    step_interior,
)

from conftest import series_dict, single_pipe_dict


def uniform_state(net, rp, rm, r0=0.0):
    return state_from_arrays(
        net, 0.0, {pid: (np.full(p.cells + 1, rp), np.full(p.cells + 1, rm), np.full(p.cells + 1, r0)) for pid, p in net.pipes.items()}
    )


def test_cfl_uniform(ideal):
    net = network_from_dict(single_pipe_dict(cells=10))
    assert cfl_dt(uniform_state(net, 0.0, 0.0), net, ideal, 0.9) == pytest.approx(0.09)


def test_cfl_min_over_pipes(ideal):
    net = network_from_dict(series_dict(cells=10))
    s = uniform_state(net, 0.0, 0.0)
    s.fields["e1"].r_plus[:] = 1.0
    s.fields["e1"].r_minus[:] = -1.0  # velocity 1, lambda_+ = 2
    assert cfl_dt(s, net, ideal, 1.0) == pytest.approx(0.05)


@pytest.mark.parametrize("cfl", [0.0, -0.5, 1.5])
def test_cfl_precondition(ideal, cfl):
    net = network_from_dict(single_pipe_dict(cells=10))
    with pytest.raises(ValueError):
        cfl_dt(uniform_state(net, 0.0, 0.0), net, ideal, cfl)


def field(rp, rm, r0, dx=0.1):
    return PipeField("e", np.asarray(rp, float), np.asarray(rm, float), np.asarray(r0, float), dx)


def test_constant_state_is_stationary(ideal):
    f = field(np.full(11, 0.3), np.full(11, 0.3), np.full(11, 0.2))
    g = step_interior(f, ideal, 0.5, 0.0, 0.05)
    assert np.array_equal(g.r_plus, f.r_plus) and np.array_equal(g.r_minus, f.r_minus)
    assert np.array_equal(g.r_zero, f.r_zero)


def test_friction_ode_step(ideal):
    d = 0.2
    f = field(np.full(11, 0.1), np.full(11, 0.1 - d), np.zeros(11))
    dt, nu = 0.05, 0.3
    g = step_interior(f, ideal, nu, 0.0, dt)
    assert np.allclose(g.r_plus, 0.1 - dt * nu * d * abs(d), rtol=0, atol=1e-16)
    assert np.allclose(g.r_minus, 0.1 - d + dt * nu * d * abs(d), rtol=0, atol=1e-16)


def test_frictionless_update_is_monotone(ideal):
    x = np.linspace(0, 1, 41)
    rp = 0.05 + 0.02 * np.sin(3 * x)
    rm = -0.05 + 0.03 * np.cos(5 * x)
    r0 = 0.1 + 0.05 * np.sin(7 * x)
    f = field(rp, rm, r0, dx=1 / 40)
    g = step_interior(f, ideal, 0.0, 0.0, 0.02)
    for new, old in ((g.r_plus, rp), (g.r_minus, rm), (g.r_zero, r0)):
        assert np.max(np.abs(new)) <= np.max(np.abs(old)) + 1e-15
        assert new.min() >= old.min() - 1e-15 and new.max() <= old.max() + 1e-15


def test_pure_upwind_advection(ideal):
    x = np.linspace(0, 1, 11)
    rp = 0.1 + 0.01 * x  # v = 0.1 + 0.005 x ... lambda_+ = 1 + v
    rm = np.full(11, -0.1)
    f = field(rp, rm, np.zeros(11))
    g = step_interior(f, ideal, 0.0, 0.0, 0.05)
    lam = 0.5 * (rp - rm) + 1.0
    expect = rp.copy()
    expect[1:] -= 0.05 / 0.1 * lam[1:] * np.diff(rp)
    assert np.allclose(g.r_plus, expect, atol=1e-16)
    assert np.array_equal(g.r_minus, rm)


def test_supersonic_cell_is_reported(ideal):
    rp = np.zeros(11)
    rm = np.zeros(11)
    rp[4], rm[4] = 1.5, -1.5  # velocity 1.5 > c
    with pytest.raises(SubsonicError, match="cell 4"):
        step_interior(field(rp, rm, np.zeros(11)), ideal, 0.0, 0.0, 0.01)


def test_inflow_set_through_flow(ideal):
    net = network_from_dict(series_dict())
    s = uniform_state(net, 0.1, -0.1)  # v = 0.1 along the parameterization
    assert inflow_set("m", s, net, ideal) == frozenset({"e0"})
    s = uniform_state(net, -0.1, 0.1)
    assert inflow_set("m", s, net, ideal) == frozenset({"e1"})


def test_inflow_set_all_outgoing_is_empty_and_flagged(ideal):
    net = network_from_dict(series_dict())
    s = uniform_state(net, 0.0, 0.0)
    s.fields["e0"].r_plus[:], s.fields["e0"].r_minus[:] = -1e-9, 1e-9  # flows away from m at x = L
    s.fields["e1"].r_plus[:], s.fields["e1"].r_minus[:] = 0.1, -0.1  # flows away from m at x = 0
    trace = NodeTrace(0.0)
    assert inflow_set("m", s, net, ideal, trace=trace) == frozenset()
    assert trace.nodes["m"].flagged == frozenset({"e0"})


def test_zero_velocity_pipe_in_inflow_and_flagged(ideal):
    net = network_from_dict(series_dict())
    s = uniform_state(net, 0.0, 0.0)
    trace = NodeTrace(0.0)
    assert inflow_set("m", s, net, ideal, trace=trace) == frozenset({"e0", "e1"})
    assert trace.nodes["m"].flagged == frozenset({"e0", "e1"})


def star_eq(ideal):
    d = {
        "gamma": 0.0,
        "pipes": [{"id": f"e{i}", "length": 1.0, "diameter": 0.4, "friction_theta": 0.0, "cells": 8} for i in range(3)],
        "nodes": [{"id": "c", "incident": [{"pipe": f"e{i}", "end": "right"} for i in range(3)], "mu": 0.0}]
        + [
            {"id": f"b{i}", "incident": [{"pipe": f"e{i}", "end": "left"}], "mu": 0.0,
             "boundary": {"u_sigma": {"kind": "constant", "value": 0.0}, "u_0": {"kind": "constant", "value": 0.0}}}
            for i in range(3)
        ],
    }
    return network_from_dict(d)


def test_junction_sigma_examples(ideal):
    net = network_from_dict(series_dict())
    out = junction_coupling_sigma("m", {"e0": 0.3, "e1": -0.7}, net)
    assert out == pytest.approx({"e0": -0.7, "e1": 0.3})
    star = star_eq(ideal)
    assert junction_coupling_sigma("c", {"e0": 0.4, "e1": 0.4, "e2": 0.4}, star) == pytest.approx({"e0": 0.4, "e1": 0.4, "e2": 0.4})
    out = junction_coupling_sigma("c", {"e0": 1.0, "e1": 0.0, "e2": 0.0}, star)
    assert out == pytest.approx({"e0": -1 / 3, "e1": 2 / 3, "e2": 2 / 3})
    with pytest.raises(ValueError):
        junction_coupling_sigma("b0", {"e0": 1.0}, star)


def test_k_sigma_matrix_matches_map(star):
    a = k_sigma_matrix("hub", star)
    r = np.array([0.3, -0.2, 0.5])
    out = junction_coupling_sigma("hub", dict(zip(["p1", "p2", "p3"], r)), star)
    assert np.allclose(a @ r, [out[p] for p in ("p1", "p2", "p3")])


def test_mixing_weights_examples(ideal):
    star = star_eq(ideal)
    w = mixing_weights("c", frozenset({"e0", "e1"}), {"e0": 0.2, "e1": 0.2, "e2": -0.4}, star)
    assert w == pytest.approx({"e0": 0.5, "e1": 0.5})
    w = mixing_weights("c", frozenset({"e0", "e1"}), {"e0": 0.3, "e1": 0.1, "e2": -0.4}, star)
    assert 0.75 * 0.2 + 0.25 * 0.4 == pytest.approx(w["e0"] * 0.2 + w["e1"] * 0.4)
    with pytest.raises(MixingSingularityError, match="node c"):
        mixing_weights("c", frozenset(), {}, star)
    with pytest.raises(MixingSingularityError, match="stalled"):
        mixing_weights("c", frozenset({"e0"}), {"e0": 0.0}, star)


def test_hydrogen_coupling(ideal):
    star = star_eq(ideal)
    s = uniform_state(star, 0.0, 0.0)
    # e0, e1 flow into c (x = L end, v > 0); e2 flows out (v < 0)
    for pid, v, r0 in (("e0", 0.1, 0.2), ("e1", 0.1, 0.4), ("e2", -0.2, 0.9)):
        f = s.fields[pid]
        f.r_plus[:], f.r_minus[:], f.r_zero[:] = v, -v, r0
    inflow = inflow_set("c", s, star, ideal)
    assert inflow == frozenset({"e0", "e1"})
    assert junction_coupling_hydrogen("c", s, inflow, star, ideal) == pytest.approx({"e2": 0.3})
    s.fields["e1"].r_plus[:], s.fields["e1"].r_minus[:] = 0.2, -0.2
    assert junction_coupling_hydrogen("c", s, inflow_set("c", s, star, ideal), star, ideal)["e2"] == pytest.approx(
        (0.1 * 0.2 + 0.2 * 0.4) / 0.3
    )
    # single inflow
    s.fields["e1"].r_plus[:], s.fields["e1"].r_minus[:] = -0.1, 0.1
    out = junction_coupling_hydrogen("c", s, inflow_set("c", s, star, ideal), star, ideal)
    assert out == pytest.approx({"e1": 0.2, "e2": 0.2})


@settings(max_examples=60, deadline=None)
@given(
    v=st.lists(st.floats(0.01, 0.3), min_size=2, max_size=2),
    r0=st.lists(st.floats(0, 1), min_size=2, max_size=2),
)
def test_mixed_concentration_is_convex(v, r0):
    law = IdealLaw(rst=1.0)
    star = star_eq(law)
    s = uniform_state(star, 0.0, 0.0)
    for pid, vel, c in (("e0", v[0], r0[0]), ("e1", v[1], r0[1]), ("e2", -0.2, 5.0)):
        f = s.fields[pid]
        f.r_plus[:], f.r_minus[:], f.r_zero[:] = vel, -vel, c
    out = junction_coupling_hydrogen("c", s, inflow_set("c", s, star, law), star, law)["e2"]
    assert min(r0) - 1e-15 <= out <= max(r0) + 1e-15


def test_boundary_conditions(ideal):
    base = network_from_dict(single_pipe_dict(cells=10))
    s = uniform_state(base, 1.0, 1.0)  # R_in at the left end is R_- = 1
    bd = BoundaryData(Signal.constant(2.0), Signal.constant(0.3))
    for mu, expect in ((0.0, 2.0), (1.0, 1.0), (0.5, 1.5)):
        net = base.with_mu(mu).with_boundary({"a": bd})
        r_out, _ = boundary_conditions("a", s, 0.0, net, ideal)
        assert r_out == pytest.approx(expect)
    net = base.with_mu(0.0).with_boundary({"a": bd})
    # R_+ = 2 at x = 0 with R_- = 1: flow into the pipe, so R_0 is prescribed
    assert boundary_conditions("a", s, 0.0, net, ideal)[1] == 0.3
    s2 = uniform_state(base, -1.0, 1.0)
    net = base.with_mu(1.0).with_boundary({"a": BoundaryData(Signal.constant(-1.0), Signal.constant(0.3))})
    assert boundary_conditions("a", s2, 0.0, net, ideal)[1] is None


def test_missing_boundary_data(ideal):
    net = network_from_dict(single_pipe_dict(cells=10))
    from blendobs.network import Network, NodeSpec

    nodes = dict(net.nodes)
    nodes["a"] = NodeSpec("a", nodes["a"].incident, 0.0, None)
    with pytest.raises(SimulationError, match="boundary"):
        boundary_conditions("a", uniform_state(net, 0.0, 0.0), 0.0, Network(net.pipes, nodes), ideal)


def test_zero_velocity_state_invariant(ideal):
    net = network_from_dict(single_pipe_dict(cells=20, u_left=0.5, u_right=0.5, mu=0.3))
    s = uniform_state(net, 0.5, 0.5, 0.1)
    s0 = s.copy()
    for _ in range(50):
        s = advance_plant(s, net, ideal, None, cfl_dt(s, net, ideal, 0.9))
    for pid in s.fields:
        for a, b in zip(s.fields[pid].end(0), s0.fields[pid].end(0)):
            assert a == b
        assert np.array_equal(s.fields[pid].r_plus, s0.fields[pid].r_plus)
        assert np.array_equal(s.fields[pid].r_minus, s0.fields[pid].r_minus)


@pytest.mark.parametrize("law", [IdealLaw(rst=1.0), IsentropicLaw(a=1.0, gamma_exp=1.4)], ids=["ideal", "isentropic"])
def test_node_conditions_after_one_step(star, law):
    rng = np.random.default_rng(3)
    arrays = {}
    for pid, p in star.pipes.items():
        x = p.x / p.length
        arrays[pid] = (
            0.1 + 0.05 * np.sin(2 * np.pi * x + rng.uniform(0, 6)),
            -0.05 + 0.05 * np.cos(3 * np.pi * x + rng.uniform(0, 6)),
            np.full_like(x, 0.1),
        )
    s = state_from_arrays(star, 0.0, arrays)
    s = advance_plant(s, star, law, None, cfl_dt(s, star, law, 0.9))
    for kirch, press in node_residuals(s, star, law).values():
        assert kirch <= 1e-12
        assert press <= 1e-10
    assert s.trace is not None and "hub" in s.trace.nodes


def test_state_shape_checked(star):
    with pytest.raises(ValueError, match="grid values"):
        state_from_arrays(star, 0.0, {pid: (np.zeros(3), np.zeros(3), np.zeros(3)) for pid in star.pipes})
