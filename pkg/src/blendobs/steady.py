"""Stationary network states used as reference solutions and initial data.

On each pipe the mass flux is constant and the density follows the
stationary momentum balance

    d rho / dx = -(theta / 2) q |q| / (rho (p'(rho) - q^2 / rho^2)),

integrated with an adaptive Runge-Kutta method. The network problem is
solved by Newton's method on nodal densities and pipe fluxes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, SteadyStateError
from .gas_physics import PressureLaw, RiemannState, eigenvalues
from .network import LEFT, RIGHT, BoundaryData, Network, Pipe, Signal
from .solver import SystemState, state_from_arrays

log = logging.getLogger(__name__)

ODE_RTOL = 1e-13
ODE_ATOL = 1e-14
SONIC_MARGIN = 1e-6


@dataclass
class PipeProfile:
    x: np.ndarray
    rho: np.ndarray
    q: float
    j_plus: np.ndarray
    j_minus: np.ndarray
    j_zero: np.ndarray


@dataclass
class HypothesisReport:
    """Checks on a steady state: strict subsonic flow and nonzero velocity."""

    subsonic: dict[str, bool]
    min_velocity_gap: dict[str, float]  # min |J_+ - J_-| per pipe

    @property
    def ok(self) -> bool:
        return all(self.subsonic.values()) and all(g > 0 for g in self.min_velocity_gap.values())


@dataclass
class SteadyProfile:
    pipes: dict[str, PipeProfile]
    node_density: dict[str, float] = field(default_factory=dict)
    node_pressure: dict[str, float] = field(default_factory=dict)
    residual_history: list[float] = field(default_factory=list)

    @property
    def flux(self) -> dict[str, float]:
        return {pid: p.q for pid, p in self.pipes.items()}

    def state(self, net: Network, t: float = 0.0) -> SystemState:
        return state_from_arrays(
            net, t, {pid: (p.j_plus, p.j_minus, p.j_zero) for pid, p in self.pipes.items()}
        )

    def hypotheses(self, law: PressureLaw, gamma: float = 0.0) -> HypothesisReport:
        return check_hypotheses(self, law, gamma)


def _rhs_factory(law: PressureLaw, q: float, nu: float):
    k = 4.0 * nu * q * abs(q)  # theta/2 = 4 nu

    def rhs(x, y):
        rho = y[0]
        return [-k / (rho * (float(law.dpressure(rho)) - (q / rho) ** 2))]

    def sonic(x, y):
        rho = y[0]
        if rho <= law.rho_min or rho >= law.rho_max:
            return 0.0
        # fires just before Mach 1, where the right-hand side blows up
        return float(law.sound_speed(rho)) * (1.0 - SONIC_MARGIN) - abs(q / rho)

    sonic.terminal = True
    return rhs, sonic


def _integrate(law: PressureLaw, rho0: float, q: float, nu: float, length: float, x_eval=None):
    rhs, sonic = _rhs_factory(law, q, nu)
    if float(law.sound_speed(rho0)) <= abs(q / rho0):
        raise SteadyStateError(f"inlet state is not subsonic (rho={rho0}, q={q})")
    sol = solve_ivp(
        rhs,
        (0.0, length),
        [rho0],
        method="DOP853",
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
        t_eval=x_eval,
        events=sonic,
    )
    if sol.status == 1:
        raise SteadyStateError(f"sonic transition inside the pipe at x={sol.t_events[0][0]:.6g}")
    if not sol.success:
        raise SteadyStateError(f"steady ODE failed near x={sol.t[-1]:.6g} (rho={sol.y[0, -1]:.6g}): {sol.message}")
    return sol


def steady_pipe(
    law: PressureLaw,
    rho_at_inlet: float,
    flux: float,
    nu: float,
    pipe: Pipe,
    gamma: float = 0.0,
    r_zero: float = 0.0,
) -> PipeProfile:
    """Stationary profile on ``pipe`` from the density at x = 0 and the constant flux."""
    x = pipe.x
    if flux == 0.0 or nu == 0.0:
        rho = np.full_like(x, float(rho_at_inlet))
        if float(law.sound_speed(rho_at_inlet)) <= abs(flux / rho_at_inlet):
            raise SteadyStateError(f"inlet state is not subsonic (rho={rho_at_inlet}, q={flux})")
    else:
        sol = _integrate(law, float(rho_at_inlet), float(flux), nu, pipe.length, x_eval=x)
        rho = sol.y[0]
    w = law.rtilde(rho)
    v = flux / rho
    return PipeProfile(x, rho, float(flux), w + v, w - v, np.full_like(x, float(r_zero)))


def outlet_density(law: PressureLaw, rho0: float, q: float, nu: float, length: float) -> float:
    if q == 0.0 or nu == 0.0:
        return float(rho0)
    return float(_integrate(law, rho0, q, nu, length).y[0, -1])


def check_hypotheses(profile: SteadyProfile, law: PressureLaw, gamma: float = 0.0) -> HypothesisReport:
    sub, gap = {}, {}
    for pid, p in profile.pipes.items():
        lam = eigenvalues(law, RiemannState(p.j_plus, p.j_minus, p.j_zero), gamma)
        sub[pid] = bool(np.all(lam.plus > 0) and np.all(lam.minus < 0))
        gap[pid] = float(np.min(np.abs(p.j_plus - p.j_minus)))
    return HypothesisReport(sub, gap)


def _parse_boundary(net: Network, law: PressureLaw, boundary: Mapping[str, Mapping]) -> tuple[dict, dict, dict]:
    fixed: dict[str, float] = {}
    inject: dict[str, float] = {v: 0.0 for v in net.nodes}
    h2: dict[str, float] = {}
    for v, spec in boundary.items():
        if v not in net.nodes:
            raise ConfigError(f"steady boundary: unknown node {v!r}")
        if net.nodes[v].degree != 1:
            raise ConfigError(f"steady boundary: node {v!r} is not a degree-1 node")
        if "pressure" in spec and "flow" in spec:
            raise ConfigError(f"steady boundary: node {v!r} has both pressure and flow")
        if "pressure" in spec:
            fixed[v] = _density_for_pressure(law, float(spec["pressure"]))
        elif "density" in spec:
            fixed[v] = float(spec["density"])
        elif "flow" in spec:
            inject[v] = float(spec["flow"])
        if "h2" in spec:
            h2[v] = float(spec["h2"])
    if not fixed:
        raise ConfigError("steady boundary: at least one node needs a pressure (reference level)")
    return fixed, inject, h2


def _density_for_pressure(law: PressureLaw, p: float) -> float:
    from scipy.optimize import brentq

    lo, hi = law.rho_min, law.rho_max
    if not float(law.pressure(lo)) <= p <= float(law.pressure(hi)):
        raise ConfigError(f"pressure {p} outside admissible range of the law")
    return brentq(lambda r: float(law.pressure(r)) - p, lo, hi, xtol=1e-15, rtol=1e-15)


def _initial_guess(net, law, fixed, inject, unknown_nodes):
    """Starting point from the quadratic law q|q| = k (rho_0^2 - rho_L^2).

    The quadratic pipe law (weak-friction ideal-gas approximation) is solved
    by successive linearization: each round is a linear resistor network in
    rho^2 with conductances k / |q| from the previous round.
    """
    ref = float(np.mean(list(fixed.values())))
    c = float(law.sound_speed(ref))
    idx = {v: i for i, v in enumerate(unknown_nodes)}
    n = len(unknown_nodes)
    pi_fixed = {v: r * r for v, r in fixed.items()}
    left = {pid: None for pid in net.pipes}
    right = dict(left)
    for v, node in net.nodes.items():
        for pid, end in node.incident:
            (left if end == LEFT else right)[pid] = v
    k = {pid: c * c / (8.0 * max(p.nu, 1e-12) * p.length) for pid, p in net.pipes.items()}
    q_floor = 1e-6 * ref * c
    q_mag = {pid: 0.05 * ref * c for pid in net.pipes}
    pot = dict(pi_fixed)
    q = {}
    for _ in range(30):
        g = {pid: k[pid] / max(q_mag[pid], q_floor) for pid in net.pipes}
        pi = np.zeros(0)
        if n:
            a = np.zeros((n, n))
            b = np.zeros(n)
            for pid, p in net.pipes.items():
                d2 = p.diameter ** 2
                for v, sign in ((left[pid], -1.0), (right[pid], 1.0)):
                    # Kirchhoff row of v: sum n(v,e) D^2 q_e + inj_v = 0
                    if v not in idx:
                        continue
                    for w, s2 in ((left[pid], 1.0), (right[pid], -1.0)):
                        coef = sign * d2 * g[pid] * s2
                        if w in idx:
                            a[idx[v], idx[w]] += coef
                        else:
                            b[idx[v]] -= coef * pi_fixed[w]
            for v in unknown_nodes:
                b[idx[v]] -= inject[v]
            pi = np.linalg.lstsq(a, b, rcond=None)[0]
        pot = {**pi_fixed, **{v: pi[idx[v]] for v in unknown_nodes}}
        q = {pid: g[pid] * (pot[left[pid]] - pot[right[pid]]) for pid in net.pipes}
        change = max(abs(abs(q[p]) - q_mag[p]) / max(q_mag[p], q_floor) for p in net.pipes)
        q_mag = {p: 0.5 * (q_mag[p] + abs(q[p])) for p in net.pipes}
        if change < 1e-3:
            break
    rho = {v: float(np.sqrt(max(val, (law.rho_min * 2) ** 2))) for v, val in pot.items()}
    for pid in net.pipes:
        cap = 0.5 * min(rho[left[pid]], rho[right[pid]]) * c
        q[pid] = float(np.clip(q[pid], -cap, cap))
    return rho, q, left, right


def steady_network(
    net: Network,
    law: PressureLaw,
    boundary: Mapping[str, Mapping],
    gamma: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> SteadyProfile:
    """Steady state of the network for the given boundary pressures and flows.

    ``boundary`` maps degree-1 nodes to ``{"pressure": p}`` (or ``{"density":
    rho}``) or ``{"flow": Q}`` with Q = D^2 q injected into the network, plus
    an optional ``"h2"`` inflow concentration R_0. Unlisted boundary nodes are
    closed (Q = 0).
    """
    g = net.gamma if gamma is None else gamma
    fixed, inject, h2 = _parse_boundary(net, law, boundary)
    unknown_nodes = [v for v in net.nodes if v not in fixed]
    pipes = list(net.pipes)
    rho0, q0, left, right = _initial_guess(net, law, fixed, inject, unknown_nodes)

    nv = len(unknown_nodes)
    z = np.array([rho0[v] for v in unknown_nodes] + [q0[p] for p in pipes])
    # residual scaling: densities vs area-weighted fluxes
    rho_scale = float(np.mean(list(fixed.values())))
    flux_scale = max(
        max((abs(x) for x in inject.values()), default=0.0),
        rho_scale * float(law.sound_speed(rho_scale)) * 1e-3 * min(p.diameter ** 2 for p in net.pipes.values()),
    )

    def unpack(z):
        dens = dict(fixed)
        dens.update({v: z[i] for i, v in enumerate(unknown_nodes)})
        return dens, {p: z[nv + j] for j, p in enumerate(pipes)}

    def residual(z):
        dens, q = unpack(z)
        r = np.empty(nv + len(pipes))
        for i, v in enumerate(unknown_nodes):
            topo = net.topology[v]
            r[i] = (sum(n * d2 * q[p] for p, n, d2 in zip(topo.pipes, topo.normals, topo.d2)) + inject[v]) / flux_scale
        for j, p in enumerate(pipes):
            pipe = net.pipes[p]
            r[nv + j] = (outlet_density(law, dens[left[p]], q[p], pipe.nu, pipe.length) - dens[right[p]]) / rho_scale
        return r

    history = []
    try:
        r = residual(z)
        for _ in range(max_iter):
            norm = float(np.max(np.abs(r)))
            history.append(norm)
            if norm <= tol:
                break
            jac = np.empty((len(z), len(z)))
            for k in range(len(z)):
                h = 1e-7 * max(abs(z[k]), rho_scale if k < nv else flux_scale)
                zp = z.copy()
                zp[k] += h
                jac[:, k] = (residual(zp) - r) / h
            step = np.linalg.lstsq(jac, -r, rcond=None)[0]
            alpha = 1.0
            while True:
                cand = z + alpha * step
                try:
                    r_new = residual(cand)
                    if np.max(np.abs(r_new)) < norm or alpha < 1e-6:
                        break
                except SteadyStateError:
                    pass
                except Exception as exc:  # domain errors during trial steps
                    log.debug("trial step rejected: %s", exc)
                alpha *= 0.5
                if alpha < 1e-6:
                    raise SteadyStateError(f"Newton line search failed; residual history {history}")
            z, r = cand, r_new
        else:
            raise SteadyStateError(f"Newton did not converge; residual history {history}")
    except SteadyStateError as exc:
        if "history" in str(exc):
            raise
        raise SteadyStateError(f"{exc}; residual history {history}") from None

    dens, q = unpack(z)
    conc = _propagate_hydrogen(net, q, dens, h2, inject, g)
    profiles = {}
    for p in pipes:
        pipe = net.pipes[p]
        profiles[p] = steady_pipe(law, dens[left[p]], q[p], pipe.nu, pipe, g, conc[p])
    return SteadyProfile(
        profiles,
        node_density=dict(dens),
        node_pressure={v: float(law.pressure(r)) for v, r in dens.items()},
        residual_history=history,
    )


def _propagate_hydrogen(net, q, dens, h2, inject, gamma) -> dict[str, float]:
    """Constant R_0 per pipe from inflow boundaries through perfect mixing.

    Pipes whose concentration is not determined by any inflow (zero flux)
    get 0.
    """
    conc: dict[str, float | None] = {p: None for p in net.pipes}
    for v in net.boundary_nodes:
        (pid, end), = net.nodes[v].incident
        n = -1.0 if end == LEFT else 1.0
        if n * q[pid] < 0:  # flow leaves v into the pipe
            conc[pid] = h2.get(v, 0.0)
    for _ in range(len(net.pipes) + 1):
        changed = False
        for v in net.interior_nodes:
            topo = net.topology[v]
            inflow = [p for p, n in zip(topo.pipes, topo.normals) if n * q[p] > 0]
            out = [p for p, n in zip(topo.pipes, topo.normals) if n * q[p] < 0]
            if not out or any(conc[p] is None for p in inflow) or not inflow:
                continue
            w = {p: net.pipes[p].diameter ** 2 * abs(q[p]) / (dens[v] + gamma) for p in inflow}
            total = sum(w.values())
            mixed = sum(w[p] * conc[p] for p in inflow) / total
            for p in out:
                if conc[p] is None:
                    conc[p] = mixed
                    changed = True
        if not changed:
            break
    return {p: (0.0 if c is None else float(c)) for p, c in conc.items()}


def matching_boundary(profile: SteadyProfile, net: Network) -> dict[str, BoundaryData]:
    """Constant boundary signals that keep ``profile`` stationary under system S."""
    out = {}
    for v in net.boundary_nodes:
        node = net.nodes[v]
        (pid, end), = node.incident
        p = profile.pipes[pid]
        i = 0 if end == LEFT else -1
        j_in = p.j_minus[i] if end == LEFT else p.j_plus[i]
        j_out = p.j_plus[i] if end == LEFT else p.j_minus[i]
        if node.mu >= 1.0:
            if abs(j_out - j_in) > 1e-14 * max(1.0, abs(j_in)):
                raise ConfigError(f"node {v}: mu = 1 cannot reproduce a steady state with nonzero velocity")
            u = float(j_in)
        else:
            u = float((j_out - node.mu * j_in) / (1.0 - node.mu))
        out[v] = BoundaryData(Signal.constant(u), Signal.constant(float(p.j_zero[i])))
    return out


def profile_to_csv(profile: SteadyProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pipe", "x", "J_plus", "J_minus", "J_zero"])
        for pid, p in profile.pipes.items():
            for row in zip(p.x, p.j_plus, p.j_minus, p.j_zero):
                w.writerow([pid] + [format(float(val), ".17g") for val in row])


def profile_from_csv(path, law: PressureLaw) -> SteadyProfile:
    rows: dict[str, list[tuple[float, ...]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.setdefault(rec["pipe"], []).append(
                tuple(float(rec[k]) for k in ("x", "J_plus", "J_minus", "J_zero"))
            )
    pipes = {}
    for pid, data in rows.items():
        arr = np.array(data)
        x, jp, jm, j0 = arr.T
        rho = law.rtilde_inv(0.5 * (jp + jm))
        q = rho * 0.5 * (jp - jm)
        pipes[pid] = PipeProfile(x, rho, float(np.mean(q)), jp, jm, j0)
    return SteadyProfile(pipes)


__all__ = [
    "HypothesisReport",
    "PipeProfile",
    "SteadyProfile",
    "check_hypotheses",
    "matching_boundary",
    "outlet_density",
    "profile_from_csv",
    "profile_to_csv",
    "steady_network",
    "steady_pipe",
    "RIGHT",
]
