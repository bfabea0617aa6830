"""Explicit upwind integration of the plant system on a pipe network.

Each time step has two phases. First every pipe is advanced independently
with first-order upwinding of the diagonal system, eigenvalues frozen at the
old level; this yields provisional values everywhere, including the incoming
traces at the pipe ends. Then the node conditions overwrite the outgoing
endpoint values algebraically: the closed-form junction map for (R_+, R_-),
perfect mixing for R_0, and the boundary laws at degree-1 nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import MixingSingularityError, SimulationError, SubsonicError
from .gas_physics import PressureLaw, RiemannState, eigenvalues, source_sigma
from .network import LEFT, Network

log = logging.getLogger(__name__)

LAMBDA_TOL = 1e-8
DENOM_TOL = 1e-12


@dataclass
class PipeField:
    """Grid values of (R_+, R_-, R_0) at the cells+1 interface points of one pipe."""

    pipe: str
    r_plus: np.ndarray
    r_minus: np.ndarray
    r_zero: np.ndarray
    dx: float

    def copy(self) -> "PipeField":
        return PipeField(self.pipe, self.r_plus.copy(), self.r_minus.copy(), self.r_zero.copy(), self.dx)

    def end(self, end: int) -> tuple[float, float, float]:
        i = 0 if end == LEFT else -1
        return float(self.r_plus[i]), float(self.r_minus[i]), float(self.r_zero[i])

    def trace_in(self, end: int) -> float:
        return float(self.r_minus[0] if end == LEFT else self.r_plus[-1])

    def trace_out(self, end: int) -> float:
        return float(self.r_plus[0] if end == LEFT else self.r_minus[-1])

    def set_out(self, end: int, value: float) -> None:
        if end == LEFT:
            self.r_plus[0] = value
        else:
            self.r_minus[-1] = value

    def set_zero(self, end: int, value: float) -> None:
        self.r_zero[0 if end == LEFT else -1] = value


@dataclass
class NodeRecord:
    inflow: frozenset
    lambda_zero: dict[str, float]
    r_out: dict[str, float]
    r_zero: dict[str, float]
    flagged: frozenset = frozenset()


@dataclass
class NodeTrace:
    """Node bookkeeping of one step: E_in, lambda_0 at the ends, applied values."""

    t: float
    nodes: dict[str, NodeRecord] = field(default_factory=dict)

    def flag(self, v: str, pipes) -> None:
        rec = self.nodes.get(v)
        if rec is None:
            self.nodes[v] = NodeRecord(frozenset(), {}, {}, {}, frozenset(pipes))
        else:
            rec.flagged = rec.flagged | frozenset(pipes)


@dataclass
class SystemState:
    t: float
    fields: dict[str, PipeField]
    inflow: dict[str, frozenset] = field(default_factory=dict)
    trace: NodeTrace | None = None

    def copy(self) -> "SystemState":
        return SystemState(self.t, {k: f.copy() for k, f in self.fields.items()}, dict(self.inflow), self.trace)


def state_from_arrays(net: Network, t: float, arrays: Mapping[str, tuple]) -> SystemState:
    """Build a state from ``{pipe: (r_plus, r_minus, r_zero)}`` grid arrays."""
    fields = {}
    for pid, pipe in net.pipes.items():
        rp, rm, r0 = (np.array(a, dtype=float) for a in arrays[pid])
        for a in (rp, rm, r0):
            if a.shape != (pipe.cells + 1,):
                raise ValueError(f"pipe {pid}: expected {pipe.cells + 1} grid values, got {a.shape}")
        fields[pid] = PipeField(pid, rp, rm, r0, pipe.dx)
    return SystemState(float(t), fields)


def _gamma(net: Network, gamma: float | None) -> float:
    return net.gamma if gamma is None else gamma


def cfl_dt(state: SystemState, net: Network, law: PressureLaw, cfl_factor: float, gamma: float | None = None) -> float:
    """Largest stable explicit step times ``cfl_factor``."""
    if not 0.0 < cfl_factor <= 1.0:
        raise ValueError(f"cfl_factor must lie in (0, 1], got {cfl_factor}")
    g = _gamma(net, gamma)
    dt = np.inf
    for pid, f in state.fields.items():
        lam = eigenvalues(law, RiemannState(f.r_plus, f.r_minus, f.r_zero), g)
        speed = np.max(np.maximum(np.maximum(np.abs(lam.plus), np.abs(lam.minus)), np.abs(lam.zero)))
        if speed > 0:
            dt = min(dt, f.dx / speed)
    if not np.isfinite(dt):
        raise SimulationError("degenerate state: all characteristic speeds vanish")
    return cfl_factor * dt


def step_interior(field: PipeField, law: PressureLaw, nu: float, gamma: float, dt: float) -> PipeField:
    """One upwind step of the diagonal system on one pipe.

    R_+ is updated at x > 0, R_- at x < L, R_0 wherever its upwind neighbour
    exists. The endpoint values that the node conditions will overwrite only
    receive the friction source, as provisional values.
    """
    rp, rm, r0 = field.r_plus, field.r_minus, field.r_zero
    lam = eigenvalues(law, RiemannState(rp, rm, r0), gamma)
    bad = np.flatnonzero((lam.plus <= 0) | (lam.minus >= 0))
    if bad.size:
        i = int(bad[0])
        raise SubsonicError(
            f"pipe {field.pipe}: subsonic regime violated at cell {i} "
            f"(lambda+={lam.plus[i]:.6g}, lambda-={lam.minus[i]:.6g})"
        )
    c = dt / field.dx
    sig = dt * source_sigma(nu, rp, rm)

    new_rp = rp - sig
    new_rp[1:] -= c * lam.plus[1:] * (rp[1:] - rp[:-1])
    new_rm = rm + sig
    new_rm[:-1] -= c * lam.minus[:-1] * (rm[1:] - rm[:-1])

    l0 = lam.zero
    flux = np.zeros_like(r0)
    back = l0[1:] > 0
    fwd = l0[:-1] < 0
    flux[1:][back] = l0[1:][back] * (r0[1:][back] - r0[:-1][back])
    flux[:-1][fwd] = l0[:-1][fwd] * (r0[1:][fwd] - r0[:-1][fwd])
    new_r0 = r0 - c * flux
    return PipeField(field.pipe, new_rp, new_rm, new_r0, field.dx)


def _lambda_zero_at(law: PressureLaw, rp: float, rm: float, gamma: float) -> float:
    return float(eigenvalues(law, RiemannState(rp, rm, 0.0), gamma).zero)


def end_lambda_zero(state: SystemState, net: Network, law: PressureLaw, v: str, gamma: float | None = None) -> dict[str, float]:
    """lambda_0 at x^e(v) for every pipe incident to v."""
    g = _gamma(net, gamma)
    out = {}
    for pid, end in net.nodes[v].incident:
        rp, rm, _ = state.fields[pid].end(end)
        out[pid] = _lambda_zero_at(law, rp, rm, g)
    return out


def inflow_set(
    v: str,
    state: SystemState,
    net: Network,
    law: PressureLaw,
    gamma: float | None = None,
    lambda_tol: float = LAMBDA_TOL,
    trace: NodeTrace | None = None,
) -> frozenset:
    """E_in(v): incident pipes with n(v, e) * lambda_0 >= 0 at the node end.

    Ends with |lambda_0| < lambda_tol are recorded in ``trace`` (if given).
    """
    lam0 = end_lambda_zero(state, net, law, v, gamma)
    topo = net.topology[v]
    inflow = frozenset(pid for pid, n in zip(topo.pipes, topo.normals) if n * lam0[pid] >= 0)
    low = [pid for pid in topo.pipes if abs(lam0[pid]) < lambda_tol]
    if trace is not None and low:
        trace.flag(v, low)
    return inflow


def junction_coupling_sigma(v: str, r_in: Mapping[str, float], net: Network) -> dict[str, float]:
    """Outgoing invariants from incoming ones at an interior node.

    R_out^e = -R_in^e + omega_v * sum_g (D^g)^2 R_in^g, which encodes mass
    conservation and pressure continuity.
    """
    topo = net.topology[v]
    if len(topo.pipes) < 2:
        raise ValueError(f"node {v} has degree < 2")
    vec = np.array([r_in[p] for p in topo.pipes], dtype=float)
    out = k_sigma(topo.d2, topo.omega, vec)
    return dict(zip(topo.pipes, out.tolist()))


def k_sigma(d2: np.ndarray, omega: float, r_in: np.ndarray) -> np.ndarray:
    return -r_in + omega * np.dot(d2, r_in)


def k_sigma_matrix(v: str, net: Network) -> np.ndarray:
    """Coefficient matrix of the linear map R_in -> K_sigma at node v."""
    topo = net.topology[v]
    k = len(topo.pipes)
    if k == 1:
        return np.ones((1, 1))
    return -np.eye(k) + topo.omega * np.tile(topo.d2, (k, 1))


def mixing_weights(
    v: str,
    inflow: frozenset,
    lam0: Mapping[str, float],
    net: Network,
    denom_tol: float = DENOM_TOL,
) -> dict[str, float]:
    """lambda_R^f = (D^f)^2 |lambda_0^f| / sum over E_in of (D^g)^2 |lambda_0^g|."""
    if not inflow:
        raise MixingSingularityError(f"mixing singularity at node {v}: no inflowing pipe (E_in is empty)")
    num = {f: net.pipes[f].diameter ** 2 * abs(lam0[f]) for f in inflow}
    den = sum(num.values())
    if den < denom_tol:
        raise MixingSingularityError(
            f"mixing singularity at node {v}: inflow weight denominator {den:.3g} < {denom_tol:g} (stalled flow)"
        )
    return {f: w / den for f, w in num.items()}


def junction_coupling_hydrogen(
    v: str,
    state: SystemState,
    inflow: frozenset,
    net: Network,
    law: PressureLaw,
    gamma: float | None = None,
    denom_tol: float = DENOM_TOL,
) -> dict[str, float]:
    """Perfect-mixing R_0 for every incident pipe not in E_in(v)."""
    lam0 = end_lambda_zero(state, net, law, v, gamma)
    topo = net.topology[v]
    outgoing = [p for p in topo.pipes if p not in inflow]
    if not outgoing:
        return {}
    weights = mixing_weights(v, inflow, lam0, net, denom_tol)
    ends = dict(net.nodes[v].incident)
    mixed = sum(w * state.fields[f].end(ends[f])[2] for f, w in weights.items())
    return {p: mixed for p in outgoing}


def boundary_conditions(
    v: str,
    state: SystemState,
    t: float,
    net: Network,
    law: PressureLaw,
    gamma: float | None = None,
) -> tuple[float, float | None]:
    """(R_out, R_0) at a degree-1 node; R_0 is None when the pipe flows into v."""
    node = net.nodes[v]
    if node.degree != 1:
        raise ValueError(f"node {v} is not a boundary node")
    if node.boundary is None:
        raise SimulationError(f"node {v}: missing boundary data")
    (pid, end), = node.incident
    f = state.fields[pid]
    r_out = (1.0 - node.mu) * node.boundary.u_sigma(t) + node.mu * f.trace_in(end)
    if end == LEFT:
        rp, rm = r_out, f.trace_in(end)
        n = -1.0
    else:
        rp, rm = f.trace_in(end), r_out
        n = 1.0
    lam0 = _lambda_zero_at(law, rp, rm, _gamma(net, gamma))
    r_zero = None if n * lam0 >= 0 else node.boundary.u_0(t)
    return r_out, r_zero


def interior_step(state: SystemState, net: Network, law: PressureLaw, gamma: float, dt: float) -> SystemState:
    """Provisional state: every pipe advanced, node conditions not yet applied."""
    fields = {pid: step_interior(f, law, net.pipes[pid].nu, gamma, dt) for pid, f in state.fields.items()}
    return SystemState(state.t + dt, fields, dict(state.inflow))


def _note_inflow(new: SystemState, v: str, inflow: frozenset, label: str) -> None:
    old = new.inflow.get(v)
    if old is not None and old != inflow:
        log.warning("%s: E_in(%s) changed from %s to %s at t=%.6g", label, v, sorted(old), sorted(inflow), new.t)
    new.inflow[v] = inflow


def _check_flags(trace: NodeTrace, v: str, net: Network) -> None:
    rec = trace.nodes.get(v)
    if rec is not None and rec.flagged and net.nodes[v].degree >= 2:
        raise MixingSingularityError(
            f"mixing singularity at node {v}: |lambda_0| below tolerance on pipes {sorted(rec.flagged)} "
            f"at t={trace.t:.6g} (zero velocity at a junction)"
        )


def _record(trace: NodeTrace, v: str, inflow, lam0, r_out, r_zeros) -> None:
    flagged = trace.nodes[v].flagged if v in trace.nodes else frozenset()
    trace.nodes[v] = NodeRecord(inflow, lam0, r_out, r_zeros, flagged)


def apply_plant_nodes(
    new: SystemState,
    net: Network,
    law: PressureLaw,
    gamma: float,
    lambda_tol: float = LAMBDA_TOL,
    denom_tol: float = DENOM_TOL,
    label: str = "plant",
) -> NodeTrace:
    """Overwrite the outgoing endpoint values of ``new`` in place (system S)."""
    trace = NodeTrace(new.t)
    for v, node in net.nodes.items():
        topo = net.topology[v]
        if node.degree == 1:
            r_out, r_zero = boundary_conditions(v, new, new.t, net, law, gamma)
            (pid, end), = node.incident
            f = new.fields[pid]
            f.set_out(end, r_out)
            r_zeros = {}
            if r_zero is not None:
                f.set_zero(end, r_zero)
                r_zeros[pid] = r_zero
            inflow = inflow_set(v, new, net, law, gamma, lambda_tol, trace)
            _note_inflow(new, v, inflow, label)
            lam0 = end_lambda_zero(new, net, law, v, gamma)
            _record(trace, v, inflow, lam0, {pid: r_out}, r_zeros)
            continue
        r_in = np.array([new.fields[p].trace_in(e) for p, e in zip(topo.pipes, topo.ends)])
        r_out = k_sigma(topo.d2, topo.omega, r_in)
        for p, e, val in zip(topo.pipes, topo.ends, r_out):
            new.fields[p].set_out(e, float(val))
        inflow = inflow_set(v, new, net, law, gamma, lambda_tol, trace)
        _check_flags(trace, v, net)
        _note_inflow(new, v, inflow, label)
        r_zeros = junction_coupling_hydrogen(v, new, inflow, net, law, gamma, denom_tol)
        for p, e in zip(topo.pipes, topo.ends):
            if p in r_zeros:
                new.fields[p].set_zero(e, r_zeros[p])
        lam0 = end_lambda_zero(new, net, law, v, gamma)
        _record(trace, v, inflow, lam0, dict(zip(topo.pipes, r_out.tolist())), r_zeros)
    return trace


def advance_plant(
    state: SystemState,
    net: Network,
    law: PressureLaw,
    gamma: float | None,
    dt: float,
    lambda_tol: float = LAMBDA_TOL,
    denom_tol: float = DENOM_TOL,
) -> SystemState:
    """Advance system S by one step of size ``dt``; the node trace is attached as ``.trace``."""
    g = _gamma(net, gamma)
    new = interior_step(state, net, law, g, dt)
    new.trace = apply_plant_nodes(new, net, law, g, lambda_tol, denom_tol)
    return new


def node_residuals(state: SystemState, net: Network, law: PressureLaw, gamma: float | None = None) -> dict[str, tuple[float, float]]:
    """Relative Kirchhoff residual and pressure mismatch at every interior node.

    The Kirchhoff residual sum_e n(v,e) (D^e)^2 q^e is divided by the flux
    scale sum_e (D^e)^2 rho^e (|v^e| + sqrt(p'(rho^e))); the pressure
    mismatch is (max p - min p) / max p over the incident ends.
    """
    from .gas_physics import physical_from_riemann

    g = _gamma(net, gamma)
    out = {}
    for v in net.interior_nodes:
        topo = net.topology[v]
        ends = [state.fields[p].end(e) for p, e in zip(topo.pipes, topo.ends)]
        rp = np.array([x[0] for x in ends])
        rm = np.array([x[1] for x in ends])
        phys = physical_from_riemann(law, RiemannState(rp, rm, np.zeros_like(rp)), g)
        kirch = float(np.sum(topo.normals * topo.d2 * phys.q))
        scale = float(np.sum(topo.d2 * phys.rho * (np.abs(phys.q / phys.rho) + law.sound_speed(phys.rho))))
        p = law.pressure(phys.rho)
        out[v] = (abs(kirch) / scale, float((p.max() - p.min()) / p.max()))
    return out
