"""Twin simulation of a plant and a node-driven observer.

The plant S runs with its own boundary data. The observer R runs the same
pipe dynamics, but at each node its outgoing invariants blend its own
coupling map with the plant's values plus measurement noise:

    R_out = mu K_sigma(R) + (1 - mu) (S_out + Z_out)        interior nodes
    R_out = (1 - mu) (u_sigma + Z_out) + mu R_in           degree-1 nodes

and likewise for R_0 on the pipes leaving a node. The error d = R - S is
never integrated on its own; its node identity is asserted every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, SimulationError
from .gas_physics import PressureLaw
from .lyapunov import (
    WeightConfig,
    check_mu_condition,
    delta_fields,
    energy_sigma,
    energy_zero,
    trapezoid,
)
from .network import LEFT, Network
from .solver import (
    DENOM_TOL,
    LAMBDA_TOL,
    NodeTrace,
    SystemState,
    _check_flags,
    _note_inflow,
    _record,
    advance_plant,
    cfl_dt,
    end_lambda_zero,
    inflow_set,
    interior_step,
    k_sigma,
    mixing_weights,
)

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import Scenario

log = logging.getLogger(__name__)

DIFF_TOL = 1e-12
OMEGA_RANGE = (0.5, 4.0)


@dataclass(frozen=True)
class NoiseModel:
    amplitude: float = 0.0
    seed: int = 0
    modes: int = 4
    ramp_time: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ConfigError(f"noise.amplitude must be >= 0, got {self.amplitude}")
        if self.modes < 1:
            raise ConfigError(f"noise.modes must be a positive integer, got {self.modes}")
        if not self.ramp_time > 0:
            raise ConfigError(f"noise.ramp_time must be > 0, got {self.ramp_time}")


@lru_cache(maxsize=4096)
def _modes(seed: int, channel: int, modes: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, channel]))
    omega = rng.uniform(*OMEGA_RANGE, size=modes)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=modes)
    return omega, phase


def ramp(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


def smooth_noise(model: NoiseModel, t: float, channel: int = 0) -> float:
    """amplitude * ramp(t / ramp_time) * mean_k sin(omega_k t + phi_k).

    Frequencies and phases are drawn once per (seed, channel).
    """
    if model.amplitude == 0.0:
        return 0.0
    omega, phase = _modes(model.seed, channel, model.modes)
    return model.amplitude * ramp(t / model.ramp_time) * float(np.mean(np.sin(omega * t + phase)))


class NoiseField:
    """Noise channels Z indexed by (node, pipe, 'out' | 'zero')."""

    def __init__(self, model: NoiseModel, net: Network):
        self.model = model
        self.index: dict[tuple[str, str, str], int] = {}
        for v, node in net.nodes.items():
            for pid, _ in node.incident:
                for kind in ("out", "zero"):
                    self.index[(v, pid, kind)] = len(self.index)

    def __call__(self, v: str, pid: str, kind: str, t: float) -> float:
        return smooth_noise(self.model, t, self.index[(v, pid, kind)])


@dataclass
class TwinState:
    plant: SystemState
    observer: SystemState

    @property
    def t(self) -> float:
        return self.plant.t


def observer_node_values(
    v: str,
    observer: SystemState,
    plant: SystemState,
    z_out: dict[str, float],
    z_zero: dict[str, float],
    t: float,
    net: Network,
    law: PressureLaw,
    gamma: float | None = None,
    lambda_tol: float = LAMBDA_TOL,
    denom_tol: float = DENOM_TOL,
    trace: NodeTrace | None = None,
) -> tuple[dict[str, float], dict[str, float], frozenset]:
    """Observer endpoint values at node v: (R_out per pipe, R_0 per outgoing pipe, E_in).

    ``observer`` holds provisional values after the interior step; ``plant``
    is already complete at time t. Nothing is written into the states.
    """
    g = net.gamma if gamma is None else gamma
    node = net.nodes[v]
    topo = net.topology[v]
    mu = node.mu
    trace = trace if trace is not None else NodeTrace(t)
    if node.degree == 1:
        (pid, end), = node.incident
        f = observer.fields[pid]
        r_out = (1.0 - mu) * (node.boundary.u_sigma(t) + z_out[pid]) + mu * f.trace_in(end)
        old = f.trace_out(end)
        f.set_out(end, r_out)  # lambda_0 at the end needs the new outgoing value
        inflow = inflow_set(v, observer, net, law, g, lambda_tol, trace)
        f.set_out(end, old)
        r_zero = {} if pid in inflow else {pid: node.boundary.u_0(t) + z_zero[pid]}
        return {pid: r_out}, r_zero, inflow

    r_in = np.array([observer.fields[p].trace_in(e) for p, e in zip(topo.pipes, topo.ends)])
    k_vals = k_sigma(topo.d2, topo.omega, r_in)
    s_out = np.array([plant.fields[p].trace_out(e) for p, e in zip(topo.pipes, topo.ends)])
    zo = np.array([z_out[p] for p in topo.pipes])
    r_out = mu * k_vals + (1.0 - mu) * (s_out + zo)

    old = [observer.fields[p].trace_out(e) for p, e in zip(topo.pipes, topo.ends)]
    for p, e, val in zip(topo.pipes, topo.ends, r_out):
        observer.fields[p].set_out(e, float(val))
    try:
        inflow = inflow_set(v, observer, net, law, g, lambda_tol, trace)
        _check_flags(trace, v, net)
        outgoing = [p for p in topo.pipes if p not in inflow]
        r_zero = {}
        if outgoing:
            lam0 = end_lambda_zero(observer, net, law, v, g)
            w = mixing_weights(v, inflow, lam0, net, denom_tol)
            ends = dict(node.incident)
            k0 = sum(wf * observer.fields[f].end(ends[f])[2] for f, wf in w.items())
            for p in outgoing:
                s0 = plant.fields[p].end(ends[p])[2]
                r_zero[p] = mu * k0 + (1.0 - mu) * (s0 + z_zero[p])
    finally:
        for (p, e), val in zip(zip(topo.pipes, topo.ends), old):
            observer.fields[p].set_out(e, val)
    return dict(zip(topo.pipes, r_out.tolist())), r_zero, inflow


def apply_observer_nodes(
    obs: SystemState,
    plant: SystemState,
    net: Network,
    law: PressureLaw,
    gamma: float,
    noise: NoiseField,
    lambda_tol: float = LAMBDA_TOL,
    denom_tol: float = DENOM_TOL,
) -> tuple[NodeTrace, dict]:
    """Write observer node values into ``obs``; returns the trace and the Z values used."""
    t = obs.t
    trace = NodeTrace(t)
    zs = {}
    # every node reads provisional traces only, so the order does not matter
    results = {}
    for v, node in net.nodes.items():
        z_out = {p: noise(v, p, "out", t) for p, _ in node.incident}
        z_zero = {p: noise(v, p, "zero", t) for p, _ in node.incident}
        zs[v] = (z_out, z_zero)
        results[v] = observer_node_values(v, obs, plant, z_out, z_zero, t, net, law, gamma, lambda_tol, denom_tol, trace)
    for v, (r_out, r_zero, inflow) in results.items():
        node = net.nodes[v]
        ends = dict(node.incident)
        for p, val in r_out.items():
            obs.fields[p].set_out(ends[p], val)
        for p, val in r_zero.items():
            obs.fields[p].set_zero(ends[p], val)
        _note_inflow(obs, v, inflow, "observer")
        _record(trace, v, inflow, end_lambda_zero(obs, net, law, v, gamma), r_out, r_zero)
    return trace, zs


def diff_residual(tw: TwinState, net: Network, zs: dict) -> float:
    """Max violation of d_out = mu K(d_in) + (1 - mu) Z_out (interior) and
    d_out = mu d_in + (1 - mu) Z_out (degree 1), over all node ends."""
    worst = 0.0
    for v, node in net.nodes.items():
        topo = net.topology[v]
        mu = node.mu
        z_out = zs[v][0]
        d_in = np.array(
            [tw.observer.fields[p].trace_in(e) - tw.plant.fields[p].trace_in(e) for p, e in zip(topo.pipes, topo.ends)]
        )
        d_out = np.array(
            [tw.observer.fields[p].trace_out(e) - tw.plant.fields[p].trace_out(e) for p, e in zip(topo.pipes, topo.ends)]
        )
        zo = np.array([z_out[p] for p in topo.pipes])
        k = d_in if node.degree == 1 else k_sigma(topo.d2, topo.omega, d_in)
        worst = max(worst, float(np.max(np.abs(d_out - mu * k - (1.0 - mu) * zo))))
    return worst


def twin_step(
    tw: TwinState,
    net: Network,
    law: PressureLaw,
    gamma: float | None,
    dt: float,
    noise: NoiseField,
    lambda_tol: float = LAMBDA_TOL,
    denom_tol: float = DENOM_TOL,
) -> tuple[TwinState, dict, float]:
    """Advance both systems by ``dt``; returns (new twin, Z values, Diff residual)."""
    g = net.gamma if gamma is None else gamma
    plant = advance_plant(tw.plant, net, law, g, dt, lambda_tol, denom_tol)
    obs = interior_step(tw.observer, net, law, g, dt)
    obs.t = plant.t
    obs.trace, zs = apply_observer_nodes(obs, plant, net, law, g, noise, lambda_tol, denom_tol)
    new = TwinState(plant, obs)
    res = diff_residual(new, net, zs)
    scale = max(1.0, max(float(np.max(np.abs(f.r_plus))) for f in plant.fields.values()))
    if res > DIFF_TOL * scale:
        raise SimulationError(f"error-system node identity violated by {res:.3g} at t={plant.t:.6g}")
    return new, zs, res


def shared_dt(tw: TwinState, net: Network, law: PressureLaw, cfl: float, gamma: float | None = None) -> float:
    return min(cfl_dt(tw.plant, net, law, cfl, gamma), cfl_dt(tw.observer, net, law, cfl, gamma))


def flow_signs(state: SystemState, net: Network, law: PressureLaw, gamma: float) -> dict[str, int]:
    """Sign of lambda_0 per pipe (from its mean over the pipe)."""
    from .gas_physics import RiemannState, eigenvalues

    out = {}
    for pid, f in state.fields.items():
        lam0 = eigenvalues(law, RiemannState(f.r_plus, f.r_minus, f.r_zero), gamma).zero
        out[pid] = int(np.sign(np.mean(lam0)))
    return out


@dataclass
class ErrorSeries:
    times: list[float] = field(default_factory=list)
    e_sigma: list[float] = field(default_factory=list)
    e_zero: list[float] = field(default_factory=list)
    l2_plus: list[float] = field(default_factory=list)
    l2_minus: list[float] = field(default_factory=list)
    l2_zero: list[float] = field(default_factory=list)
    eta_sigma: list[float] = field(default_factory=list)
    eta_zero: list[float] = field(default_factory=list)
    min_mu_margin: list[float] = field(default_factory=list)
    diff_residual: list[float] = field(default_factory=list)
    # plant node residuals (relative), max since the previous sample; 0 unless requested
    kirchhoff_residual: list[float] = field(default_factory=list)
    pressure_residual: list[float] = field(default_factory=list)
    dt: list[float] = field(default_factory=list)
    snapshots: list[tuple[float, SystemState, SystemState]] = field(default_factory=list)
    steps: int = 0

    COLUMNS = (
        "t",
        "E_sigma",
        "E_zero",
        "l2_delta_plus",
        "l2_delta_minus",
        "l2_delta_zero",
        "eta_sigma",
        "eta_zero",
        "min_mu_margin",
    )

    def rows(self):
        return zip(
            self.times,
            self.e_sigma,
            self.e_zero,
            self.l2_plus,
            self.l2_minus,
            self.l2_zero,
            self.eta_sigma,
            self.eta_zero,
            self.min_mu_margin,
        )

    def __len__(self) -> int:
        return len(self.times)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            name: np.asarray(getattr(self, name), dtype=float)
            for name in ("times", "e_sigma", "e_zero", "l2_plus", "l2_minus", "l2_zero", "eta_sigma", "eta_zero", "min_mu_margin")
        }


def perturbation_levels(
    tw: TwinState,
    zs: dict,
    net: Network,
    law: PressureLaw,
    gamma: float,
    psi0: float,
    signs: dict[str, int],
) -> tuple[float, float]:
    """eta_sigma(t) = sum_v 2 |Z_out^v|^2 and the weighted hydrogen level eta_0(t)."""
    eta_s = 0.0
    eta_0 = 0.0
    for v, node in net.nodes.items():
        z_out, z_zero = zs[v]
        eta_s += 2.0 * sum(z * z for z in z_out.values())
        inflow = tw.observer.inflow.get(v, frozenset())
        lam0 = end_lambda_zero(tw.observer, net, law, v, gamma)
        for pid, end in node.incident:
            if pid in inflow:
                continue
            x = 0.0 if end == LEFT else net.pipes[pid].length
            eta_0 += 3.0 * math.exp(-signs[pid] * psi0 * x) * abs(lam0[pid]) * (1.0 - node.mu) * z_zero[pid] ** 2
    return eta_s, eta_0


def _sample(series: ErrorSeries, tw: TwinState, zs, net, law, gamma, weights: WeightConfig, signs, diff_res, node_res, dt):
    """Append one sample; ``node_res`` is the (Kirchhoff, pressure) residual pair."""
    delta = delta_fields(tw.observer, tw.plant)
    series.times.append(tw.t)
    series.e_sigma.append(energy_sigma(delta, weights, net))
    series.e_zero.append(energy_zero({p: d[2] for p, d in delta.items()}, weights.psi0, signs, net))
    for k, name in enumerate(("l2_plus", "l2_minus", "l2_zero")):
        val = sum(trapezoid(d[k] ** 2, net.pipes[p].dx) for p, d in delta.items())
        getattr(series, name).append(math.sqrt(val))
    eta_s, eta_0 = perturbation_levels(tw, zs, net, law, gamma, weights.psi0, signs)
    series.eta_sigma.append(eta_s)
    series.eta_zero.append(eta_0)
    series.min_mu_margin.append(
        min(check_mu_condition(v, tw.observer, weights, net, law, gamma).margin for v in net.nodes)
    )
    series.diff_residual.append(diff_res)
    series.kirchhoff_residual.append(node_res[0])
    series.pressure_residual.append(node_res[1])
    series.dt.append(dt)


def initial_twin(scenario: "Scenario") -> TwinState:
    """Plant at the steady state; observer = steady state plus smooth bumps."""
    net = scenario.net
    plant = scenario.profile.state(net)
    obs = plant.copy()
    init = scenario.initial
    pipes = net.pipes if init.bump_pipe in (None, "all") else {init.bump_pipe: net.pipes[init.bump_pipe]}
    for pid, pipe in pipes.items():
        bump = np.sin(np.pi * pipe.x / pipe.length) ** 2
        f = obs.fields[pid]
        f.r_plus += init.bump_amplitude * bump
        f.r_minus += init.bump_amplitude * bump
        f.r_zero += init.h2_bump_amplitude * bump
    return TwinState(plant, obs)


def run_twin(scenario: "Scenario", check_nodes: bool = False) -> ErrorSeries:
    """Run plant and observer to t >= T and return the sampled error series.

    Errors during the run are re-raised as SimulationError subclasses with
    ``.partial`` set to the series collected so far.
    """
    from .solver import node_residuals

    net, law, g = scenario.net, scenario.law, scenario.gamma
    weights = scenario.weights
    noise = NoiseField(scenario.noise, net)
    out = scenario.output
    series = ErrorSeries()
    tw = initial_twin(scenario)
    signs = flow_signs(tw.plant, net, law, g)
    if weights.psi0 > 0 and any(s == 0 for s in signs.values()):
        raise SimulationError("hydrogen weights need nonzero flow on every pipe")
    signs = {p: (s if s != 0 else 1) for p, s in signs.items()}
    zs0 = {v: ({p: noise(v, p, "out", 0.0) for p, _ in n.incident}, {p: noise(v, p, "zero", 0.0) for p, _ in n.incident}) for v, n in net.nodes.items()}
    # populate E_in of both systems at t = 0 for the eta_0 bookkeeping
    for v in net.nodes:
        tw.observer.inflow[v] = inflow_set(v, tw.observer, net, law, g)
        tw.plant.inflow[v] = inflow_set(v, tw.plant, net, law, g)

    snap_times = sorted(out.snapshots)
    snap_i = 0

    def snapshot_due():
        nonlocal snap_i
        while snap_i < len(snap_times) and tw.t >= snap_times[snap_i] - 1e-12:
            series.snapshots.append((tw.t, tw.plant.copy(), tw.observer.copy()))
            snap_i += 1

    _sample(series, tw, zs0, net, law, g, weights, signs, 0.0, (0.0, 0.0), 0.0)
    snapshot_due()
    next_sample = out.cadence
    t_end = scenario.T
    diff_max, kirch_max, press_max = 0.0, 0.0, 0.0
    try:
        while tw.t < t_end - 1e-12 * max(1.0, t_end):
            dt = shared_dt(tw, net, law, scenario.cfl, g)
            last = tw.t + dt >= t_end
            if last:
                dt = t_end - tw.t
            tw, zs, res = twin_step(tw, net, law, g, dt, noise)
            if last:
                tw.plant.t = tw.observer.t = t_end
            series.steps += 1
            diff_max = max(diff_max, res)
            if check_nodes:
                for kr, pr in node_residuals(tw.plant, net, law, g).values():
                    kirch_max, press_max = max(kirch_max, kr), max(press_max, pr)
            if out.cadence <= 0 or tw.t >= next_sample - 1e-12 or last:
                _sample(series, tw, zs, net, law, g, weights, signs, diff_max, (kirch_max, press_max), dt)
                diff_max, kirch_max, press_max = 0.0, 0.0, 0.0
                while out.cadence > 0 and next_sample <= tw.t + 1e-12:
                    next_sample += out.cadence
            snapshot_due()
    except SimulationError as exc:
        exc.partial = series
        raise
    except (ArithmeticError, ValueError) as exc:  # numerical failures surface as runtime errors
        raise SimulationError(f"{type(exc).__name__}: {exc}", partial=series) from exc
    return series
