from __future__ import annotations

import math

import numpy as np
import pytest

from blendobs.errors import ConfigError, SteadyStateError
from blendobs.gas_physics import AGALaw, IdealLaw
from blendobs.network import Pipe, network_from_dict
from blendobs.solver import advance_plant, cfl_dt
from blendobs.steady import (
    check_hypotheses,
    matching_boundary,
    profile_from_csv,
    profile_to_csv,
    steady_network,
    steady_pipe,
)

from conftest import single_pipe_dict


def implicit_relation(rho0, rho1, q, nu, length, c=1.0):
    """Exact integral of the isothermal steady momentum balance (ideal law)."""
    return 0.5 * c * c * (rho1 ** 2 - rho0 ** 2) - q * q * math.log(rho1 / rho0) + 4.0 * nu * q * abs(q) * length


def bisect(f, lo, hi, tol=1e-15):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def rk4_riemann_oracle(rho0, q, nu, length, steps=1_000_000, c=1.0):
    """Fixed-step RK4 on the invariant form J_+' = -sigma/lambda_+, J_-' = sigma/lambda_- (ideal law)."""
    jp = c * math.log(rho0) + q / rho0
    jm = c * math.log(rho0) - q / rho0
    h = length / steps

    def rhs(a, b):
        d = a - b
        s = nu * abs(d) * d
        v = 0.5 * d
        return -s / (v + c), s / (v - c)

    for _ in range(steps):
        k1 = rhs(jp, jm)
        k2 = rhs(jp + 0.5 * h * k1[0], jm + 0.5 * h * k1[1])
        k3 = rhs(jp + 0.5 * h * k2[0], jm + 0.5 * h * k2[1])
        k4 = rhs(jp + h * k3[0], jm + h * k3[1])
        jp += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        jm += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return jp, jm


PIPE = Pipe("e", 1.0, 0.5, 0.08, 100)


def test_zero_flux_profile_is_constant(ideal):
    p = steady_pipe(ideal, 1.7, 0.0, PIPE.nu, PIPE)
    assert np.all(p.rho == 1.7)
    assert np.allclose(p.j_plus, math.log(1.7)) and np.array_equal(p.j_plus, p.j_minus)


def test_frictionless_profile_is_constant(ideal):
    pipe = Pipe("e", 1.0, 0.5, 0.0, 100)
    p = steady_pipe(ideal, 1.2, 0.3, pipe.nu, pipe)
    assert np.all(p.rho == 1.2) and np.allclose(p.j_plus - p.j_minus, 2 * 0.3 / 1.2)


def test_reference_pipe_against_rk4_oracle(ideal):
    p = steady_pipe(ideal, 1.0, 0.1, PIPE.nu, PIPE)
    assert np.all(np.diff(p.rho) < 0)  # monotone pressure drop
    jp, jm = rk4_riemann_oracle(1.0, 0.1, PIPE.nu, PIPE.length)
    assert p.j_plus[-1] == pytest.approx(jp, abs=1e-11)
    assert p.j_minus[-1] == pytest.approx(jm, abs=1e-11)


def test_reference_pipe_against_exact_relation(ideal):
    p = steady_pipe(ideal, 1.0, 0.1, PIPE.nu, PIPE)
    for x, rho in zip(p.x[::10], p.rho[::10]):
        assert abs(implicit_relation(1.0, rho, 0.1, PIPE.nu, x)) < 1e-12


def test_reverse_flow_raises_density(ideal):
    p = steady_pipe(ideal, 1.0, -0.1, PIPE.nu, PIPE)
    assert np.all(np.diff(p.rho) > 0)


def test_sonic_transition_reported(ideal):
    pipe = Pipe("e", 10.0, 0.5, 8.0, 50)
    with pytest.raises(SteadyStateError, match=r"sonic transition .* x="):
        steady_pipe(ideal, 1.0, 0.6, pipe.nu, pipe)
    with pytest.raises(SteadyStateError, match="not subsonic"):
        steady_pipe(ideal, 1.0, 1.2, pipe.nu, pipe)


def test_single_pipe_equal_pressures_flagged(ideal):
    net = network_from_dict(single_pipe_dict())
    prof = steady_network(net, ideal, {"a": {"pressure": 1.3}, "b": {"pressure": 1.3}})
    assert prof.flux["e"] == 0.0
    assert np.all(prof.pipes["e"].rho == pytest.approx(1.3))
    hyp = check_hypotheses(prof, ideal)
    assert all(hyp.subsonic.values()) and not hyp.ok


def series_net(cells=40):
    d = single_pipe_dict(cells=cells)
    d["pipes"] = [
        {"id": "e0", "length": 1.0, "diameter": 0.5, "friction_theta": 0.4, "cells": cells},
        {"id": "e1", "length": 2.0, "diameter": 0.5, "friction_theta": 0.4, "cells": cells},
    ]
    d["nodes"][0]["incident"] = [{"pipe": "e0", "end": "left"}]
    d["nodes"][1]["incident"] = [{"pipe": "e1", "end": "right"}]
    d["nodes"].append({"id": "m", "incident": [{"pipe": "e0", "end": "right"}, {"pipe": "e1", "end": "left"}], "mu": 0.0})
    return network_from_dict(d)


def test_two_pipes_in_series_against_bisection(ideal):
    net = series_net()
    prof = steady_network(net, ideal, {"a": {"pressure": 1.0}, "b": {"pressure": 0.9}})
    nu = 0.05

    def flux(r0, r1, length):
        return bisect(lambda q: implicit_relation(r0, r1, q, nu, length), 0.0, 0.5)

    rho_m = bisect(lambda r: flux(1.0, r, 1.0) - flux(r, 0.9, 2.0), 0.9, 1.0)
    assert prof.node_density["m"] == pytest.approx(rho_m, abs=1e-10)
    q = flux(1.0, rho_m, 1.0)
    assert prof.flux["e0"] == pytest.approx(q, rel=1e-9)
    assert abs(prof.flux["e0"] - prof.flux["e1"]) * 0.25 <= 1e-10
    assert prof.residual_history[-1] <= 1e-10


def test_star_split_against_exact_oracle(star, ideal):
    bnd = {"in": {"pressure": 1.0, "h2": 0.1}, "out1": {"flow": -0.0075}, "out2": {"flow": -0.005}}
    prof = steady_network(star, ideal, bnd)
    q = {"p1": 0.0125 / 0.25, "p2": 0.0075 / 0.16, "p3": 0.005 / 0.09}
    for pid in q:
        assert prof.flux[pid] == pytest.approx(q[pid], rel=1e-12)
    nu = 0.01
    hub = bisect(lambda r: implicit_relation(1.0, r, q["p1"], nu, 1.0), 0.9, 1.0)
    out1 = bisect(lambda r: implicit_relation(hub, r, q["p2"], nu, 0.8), 0.9, 1.0)
    out2 = bisect(lambda r: implicit_relation(hub, r, q["p3"], nu, 1.2), 0.9, 1.0)
    assert prof.node_pressure["hub"] == pytest.approx(hub, abs=1e-10)
    assert prof.node_pressure["out1"] == pytest.approx(out1, abs=1e-10)
    assert prof.node_pressure["out2"] == pytest.approx(out2, abs=1e-10)
    # Kirchhoff and pressure continuity at the hub from the profiles
    kirch = 0.25 * prof.pipes["p1"].q - 0.16 * prof.pipes["p2"].q - 0.09 * prof.pipes["p3"].q
    assert abs(kirch) <= 1e-10
    ends = [prof.pipes["p1"].rho[-1], prof.pipes["p2"].rho[0], prof.pipes["p3"].rho[0]]
    assert max(ends) - min(ends) <= 1e-10
    # hydrogen from the inlet reaches every pipe
    for p in prof.pipes.values():
        assert np.all(p.j_zero == 0.1)
    assert prof.hypotheses(ideal).ok


def test_hydrogen_mixing_of_two_inflows(star, ideal):
    bnd = {"out1": {"flow": 0.006, "h2": 0.3}, "out2": {"flow": 0.002, "h2": 0.1}, "in": {"pressure": 1.0}}
    prof = steady_network(star, ideal, bnd)
    expect = (0.006 * 0.3 + 0.002 * 0.1) / 0.008
    assert prof.pipes["p1"].j_zero[0] == pytest.approx(expect, rel=1e-10)


def test_aga_network(star):
    law = AGALaw(rst=1.0, alpha=-0.01)
    prof = steady_network(star, law, {"in": {"pressure": 1.0}, "out1": {"flow": -0.0075}, "out2": {"flow": -0.005}})
    assert prof.residual_history[-1] <= 1e-10


def test_boundary_spec_errors(star, ideal):
    with pytest.raises(ConfigError, match="reference"):
        steady_network(star, ideal, {"out1": {"flow": -0.01}})
    with pytest.raises(ConfigError, match="degree-1"):
        steady_network(star, ideal, {"hub": {"pressure": 1.0}})
    with pytest.raises(ConfigError, match="unknown"):
        steady_network(star, ideal, {"zz": {"pressure": 1.0}})


def test_impossible_flow_reports_history(star, ideal):
    with pytest.raises(SteadyStateError, match="history"):
        steady_network(star, ideal, {"in": {"pressure": 1.0}, "out1": {"flow": -0.3}, "out2": {"flow": -0.005}})


def test_csv_round_trip(tmp_path, star, ideal):
    prof = steady_network(star, ideal, {"in": {"pressure": 1.0, "h2": 0.1}, "out1": {"flow": -0.0075}, "out2": {"flow": -0.005}})
    path = tmp_path / "steady.csv"
    profile_to_csv(prof, path)
    back = profile_from_csv(path, ideal)
    for pid, p in prof.pipes.items():
        b = back.pipes[pid]
        assert np.array_equal(b.j_plus, p.j_plus) and np.array_equal(b.j_minus, p.j_minus)
        assert np.array_equal(b.x, p.x) and np.array_equal(b.j_zero, p.j_zero)
        assert b.q == pytest.approx(p.q, rel=1e-12)
    assert path.read_text().splitlines()[0] == "pipe,x,J_plus,J_minus,J_zero"


def test_matching_boundary_keeps_profile(star, ideal):
    prof = steady_network(star, ideal, {"in": {"pressure": 1.0, "h2": 0.1}, "out1": {"flow": -0.0075}, "out2": {"flow": -0.005}})
    net = star.with_boundary(matching_boundary(prof, star))
    s = prof.state(net)
    s1 = advance_plant(s, net, ideal, None, cfl_dt(s, net, ideal, 0.9))
    for pid, f in s1.fields.items():
        p = prof.pipes[pid]
        assert np.max(np.abs(f.r_plus - p.j_plus)) < 1e-8
        assert np.max(np.abs(f.r_minus - p.j_minus)) < 1e-8
    with pytest.raises(ConfigError, match="mu = 1"):
        matching_boundary(prof, star.with_mu(1.0))
