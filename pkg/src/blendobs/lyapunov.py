"""Exponentially weighted L2 energies, stability conditions and decay fits.

The energy of the invariant errors on a pipe is

    E_sigma = int_0^L h_+(x) |d_+|^2 + h_-(x) |d_-|^2 dx,
    h_+(x) = B_+ exp(-psi x),  h_-(x) = B_- exp(psi x),

and the hydrogen energy uses the weight exp(-s psi0 x), where s is the
flow direction on the pipe. Integrals use the trapezoidal rule on the
solver grid.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, SimulationError
from .gas_physics import PressureLaw, RiemannState, eigenvalues
from .network import LEFT, Network, Pipe
from .solver import SystemState

FLOOR = 1e-16


@dataclass(frozen=True)
class WeightConfig:
    """psi, psi0 >= 0 and per-pipe (or uniform) positive B_+, B_-."""

    psi: float = 0.0
    psi0: float = 0.0
    b_plus: float | Mapping[str, float] = 1.0
    b_minus: float | Mapping[str, float] = 1.0

    def __post_init__(self):
        if not (self.psi >= 0 and self.psi0 >= 0):
            raise ConfigError(f"weights: psi and psi0 must be >= 0, got {self.psi}, {self.psi0}")
        for name in ("b_plus", "b_minus"):
            val = getattr(self, name)
            vals = val.values() if isinstance(val, Mapping) else [val]
            if any(not b > 0 for b in vals):
                raise ConfigError(f"weights: {name} must be positive")

    def bp(self, pid: str) -> float:
        return float(self.b_plus[pid] if isinstance(self.b_plus, Mapping) else self.b_plus)

    def bm(self, pid: str) -> float:
        return float(self.b_minus[pid] if isinstance(self.b_minus, Mapping) else self.b_minus)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "WeightConfig":
        if d is None:
            return cls()
        try:
            return cls(
                psi=float(d.get("psi", 0.0)),
                psi0=float(d.get("psi0", 0.0)),
                b_plus=_bval(d.get("b_plus", 1.0)),
                b_minus=_bval(d.get("b_minus", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"weights: {exc}") from None

    def to_dict(self) -> dict:
        return {"psi": self.psi, "psi0": self.psi0, "b_plus": _bdump(self.b_plus), "b_minus": _bdump(self.b_minus)}


def _bval(v):
    return {k: float(x) for k, x in v.items()} if isinstance(v, Mapping) else float(v)


def _bdump(v):
    return dict(v) if isinstance(v, Mapping) else v


@dataclass
class TheoryConstants:
    c: float = math.nan
    eps0: float = math.nan
    M: float = math.nan
    M_hat: float = math.nan
    beta: float = math.nan
    v_low: float = math.nan
    v_high: float = math.nan
    chi: float = math.nan
    chi0: float = math.nan
    eta_sigma: float = 0.0
    eta0: float = 0.0
    D0: float = math.nan
    zeta: float = math.nan
    c_feasible: bool = True  # 3/4 c <= |lambda| <= 5/4 c achievable


def weights(cfg: WeightConfig, pipe: Pipe, x):
    x = np.asarray(x, dtype=float)
    return cfg.bp(pipe.id) * np.exp(-cfg.psi * x), cfg.bm(pipe.id) * np.exp(cfg.psi * x)


def kappa(cfg: WeightConfig, pipe: Pipe) -> float:
    """max over the pipe of h_+/h_- and h_-/h_+ (both ratios are monotone in x)."""
    r = cfg.bp(pipe.id) / cfg.bm(pipe.id)
    return max(r, math.exp(2.0 * cfg.psi * pipe.length) / r)


def trapezoid(y: np.ndarray, dx: float) -> float:
    return float(dx * (np.sum(y) - 0.5 * (y[0] + y[-1])))


def delta_fields(observer: SystemState, plant: SystemState) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    return {
        pid: (o.r_plus - plant.fields[pid].r_plus, o.r_minus - plant.fields[pid].r_minus, o.r_zero - plant.fields[pid].r_zero)
        for pid, o in observer.fields.items()
    }


def energy_sigma(delta: Mapping[str, Sequence[np.ndarray]], cfg: WeightConfig, net: Network) -> float:
    """Sum over pipes of the weighted L2 energy of (d_+, d_-)."""
    total = 0.0
    for pid, d in delta.items():
        pipe = net.pipes[pid]
        hp, hm = weights(cfg, pipe, pipe.x)
        total += trapezoid(hp * d[0] ** 2 + hm * d[1] ** 2, pipe.dx)
    return total


def energy_zero(delta0: Mapping[str, np.ndarray], psi0: float, signs: Mapping[str, int], net: Network) -> float:
    total = 0.0
    for pid, d0 in delta0.items():
        s = signs[pid]
        if s not in (-1, 1):
            raise SimulationError(
                f"pipe {pid}: flow direction undefined (sign {s}); the hydrogen energy needs nonzero velocity"
            )
        pipe = net.pipes[pid]
        total += trapezoid(np.exp(-s * psi0 * pipe.x) * np.asarray(d0) ** 2, pipe.dx)
    return total


def gronwall_envelope(e_at_0, chi: float, eta: float, t):
    """E(0) exp(-chi t) + (eta / chi) (1 - exp(-chi t))."""
    if not chi > 0:
        raise ValueError(f"decay rate chi must be > 0, got {chi}")
    t = np.asarray(t, dtype=float)
    out = e_at_0 * np.exp(-chi * t) - (eta / chi) * np.expm1(-chi * t)
    return float(out) if out.ndim == 0 else out


def gronwall_envelope_zero(e0_at_0, params: TheoryConstants, t):
    """Hydrogen-energy bound with rate zeta < chi0, zeta != chi.

    Uses exp(-chi t) - exp(-zeta t) = exp(-zeta t) expm1((zeta - chi) t) to
    avoid cancellation when zeta is close to chi.
    """
    zeta, chi, chi0, d0 = params.zeta, params.chi, params.chi0, params.D0
    if not zeta > 0:
        raise ValueError(f"zeta must be > 0, got {zeta}")
    if not zeta < chi0:
        raise ValueError(f"zeta must be < chi0 (zeta={zeta}, chi0={chi0})")
    if zeta == chi:
        raise ValueError("zeta must differ from chi")
    if not chi > 0 or d0 < 0:
        raise ValueError("chi must be > 0 and D0 >= 0")
    t = np.asarray(t, dtype=float)
    ez = np.exp(-zeta * t)
    pref = d0 * d0 / (4.0 * (chi0 - zeta)) / (zeta - chi) + d0
    bracket = ez * np.expm1((zeta - chi) * t) / (zeta - chi) - (params.eta_sigma / zeta) * np.expm1(-zeta * t)
    out = e0_at_0 * ez + params.eta0 / zeta + pref * bracket
    return float(out) if out.ndim == 0 else out


@dataclass
class PsiReport:
    margins: dict[str, float]
    chi: float

    @property
    def ok(self) -> bool:
        return all(m > 0 for m in self.margins.values())


def check_psi_condition(net: Network, cfg: WeightConfig, consts: TheoryConstants) -> PsiReport:
    """Per-pipe margin 3/4 psi c - eps0 - (12 nu M + 4 beta M_hat) kappa and the rate chi."""
    margins, rates = {}, []
    base = 0.75 * cfg.psi * consts.c - consts.eps0
    for pid, pipe in net.pipes.items():
        k = kappa(cfg, pipe)
        margins[pid] = base - (12.0 * pipe.nu * consts.M + 4.0 * consts.beta * consts.M_hat) * k
        rates.append(base - (6.0 * pipe.nu * consts.M + 2.0 * consts.beta * consts.M_hat) * 2.0 * k)
    return PsiReport(margins, min(rates))


def spectral_norm(a: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on a^T a."""
    ata = a.T @ a
    x = np.ones(ata.shape[0]) / math.sqrt(ata.shape[0])
    x += 1e-3 * np.arange(ata.shape[0])  # avoid starting orthogonal to the top vector
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = ata @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(x @ y)
        x = y / ny
        if abs(new - lam) <= tol * max(new, 1.0):
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


@lru_cache(maxsize=1024)
def _norm_cached(d2: tuple[float, ...], omega: float) -> float:
    k = len(d2)
    return spectral_norm(-np.eye(k) + omega * np.tile(np.array(d2), (k, 1)))


def _coupling_norm(v: str, net: Network) -> float:
    """Spectral norm of the coupling map at v (fixed by the topology, so cached)."""
    topo = net.topology[v]
    if len(topo.pipes) == 1:
        return 1.0  # R_in -> R_in at a degree-1 node
    return _norm_cached(tuple(float(d) for d in topo.d2), float(topo.omega))


@dataclass
class MuMargin:
    c_low: float
    c_high: float
    c_hat: float
    margin: float


def check_mu_condition(
    v: str,
    state: SystemState,
    cfg: WeightConfig,
    net: Network,
    law: PressureLaw,
    gamma: float | None = None,
) -> MuMargin:
    """Node margin C_low - 2 C_high C_hat mu^2 from the eigenvalues of ``state`` at v.

    C_low collects h_+ lambda_+ at x = L ends and h_- |lambda_-| at x = 0
    ends (minimum); C_high collects the complementary products (maximum).
    """
    g = net.gamma if gamma is None else gamma
    node = net.nodes[v]
    low, high = [], []
    for pid, end in node.incident:
        pipe = net.pipes[pid]
        rp, rm, r0 = state.fields[pid].end(end)
        lam = eigenvalues(law, RiemannState(rp, rm, r0), g)
        x = 0.0 if end == LEFT else pipe.length
        hp, hm = weights(cfg, pipe, x)
        if end == LEFT:
            low.append(float(hm) * abs(float(lam.minus)))
            high.append(float(hp) * float(lam.plus))
        else:
            low.append(float(hp) * float(lam.plus))
            high.append(float(hm) * abs(float(lam.minus)))
    c_low, c_high = min(low), max(high)
    c_hat = _coupling_norm(v, net)
    return MuMargin(c_low, c_high, c_hat, c_low - 2.0 * c_high * c_hat * node.mu ** 2)


@dataclass
class DecayFit:
    chi: float
    plateau: float
    r_squared: float
    flag: str = "ok"  # ok | non-decaying | degenerate
    window: tuple[float, float] = field(default=(math.nan, math.nan))


def fit_decay_rate(times, values, window: tuple[float, float] | None = None) -> DecayFit:
    """Fit E(t) ~ plateau + A exp(-chi t).

    The plateau is the mean of the final 10% of the samples in the window;
    log(max(E - plateau, FLOOR)) is fitted by least squares. Inside the
    window (whole series by default) only the initial stretch where E
    still exceeds 100 times the plateau (and 1000 times the floor) enters
    the fit, so the plateau does not distort the slope. If that stretch is
    shorter than 10 samples the threshold drops to twice the plateau, then
    to the whole window.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(values, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, e = t[sel], e[sel]
    if t.size < 10:
        raise ValueError(f"decay fit needs at least 10 samples, got {t.size}")
    if np.any(e < 0):
        raise ValueError("energies must be nonnegative")
    if np.all(e == 0):
        return DecayFit(math.inf, 0.0, 1.0, "degenerate", (t[0], t[-1]))
    tail = max(1, int(math.ceil(0.1 * t.size)))
    plateau = float(np.mean(e[-tail:]))
    t_fit, e_fit = t, e
    for factor in (100.0, 2.0):
        keep = e > max(factor * plateau, 1e3 * FLOOR)
        # initial contiguous stretch
        stop = int(np.argmin(keep)) if not keep.all() else keep.size
        if stop >= 10:
            t_fit, e_fit = t[:stop], e[:stop]
            break
    y = np.log(np.maximum(e_fit - plateau, FLOOR))
    a = np.vstack([t_fit, np.ones_like(t_fit)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    slope = float(coef[0])
    resid = y - a @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    chi = -slope
    flag = "ok" if chi > 1e-12 and ss_tot > 0 else "non-decaying"
    return DecayFit(chi, plateau, r2, flag, (float(t_fit[0]), float(t_fit[-1])))


def _dlam(law, rp, rm, g, h=1e-6):
    """Finite-difference partial derivatives of lambda_+- in R_+ and R_-."""
    out = []
    for dp, dm in ((h, 0.0), (0.0, h)):
        hi = eigenvalues(law, RiemannState(rp + dp, rm + dm, 0.0 * rp), g)
        lo = eigenvalues(law, RiemannState(rp - dp, rm - dm, 0.0 * rp), g)
        out.append((hi.plus - lo.plus) / (2 * h))
        out.append((hi.minus - lo.minus) / (2 * h))
    return max(float(np.max(np.abs(d))) for d in out)


def measure_constants(
    net: Network,
    law: PressureLaw,
    reference: SystemState,
    states: Sequence[SystemState] = (),
    gamma: float | None = None,
) -> TheoryConstants:
    """Empirical a-priori constants from a reference (steady) state and snapshots.

    ``reference`` plays the role of the steady state J (for M) and of the
    plant (for M_hat); eigenvalue bounds, eps0, beta and the lambda_0 range
    are taken over the reference and all ``states``.
    """
    g = net.gamma if gamma is None else gamma
    pool = [reference, *states]
    lam_min, lam_max = math.inf, 0.0
    eps0 = m_hat = beta = 0.0
    v_low, v_high = math.inf, 0.0
    for s in pool:
        for pid, f in s.fields.items():
            lam = eigenvalues(law, RiemannState(f.r_plus, f.r_minus, f.r_zero), g)
            speeds = np.concatenate([lam.plus, -lam.minus])
            lam_min = min(lam_min, float(speeds.min()))
            lam_max = max(lam_max, float(speeds.max()))
            eps0 = max(eps0, float(np.max(np.abs(np.diff(lam.plus)))) / f.dx, float(np.max(np.abs(np.diff(lam.minus)))) / f.dx)
            beta = max(beta, _dlam(law, f.r_plus, f.r_minus, g))
            v_low = min(v_low, float(np.min(np.abs(lam.zero))))
            v_high = max(v_high, float(np.max(np.abs(lam.zero))))
    for f in reference.fields.values():
        m_hat = max(m_hat, float(np.max(np.abs(np.diff(f.r_plus)))) / f.dx, float(np.max(np.abs(np.diff(f.r_minus)))) / f.dx)
    m = max(float(np.max(np.abs(f.r_plus - f.r_minus))) for f in reference.fields.values())
    c = 4.0 / 3.0 * lam_min
    return TheoryConstants(
        c=c,
        eps0=eps0,
        M=m,
        M_hat=m_hat,
        beta=beta,
        v_low=v_low,
        v_high=v_high,
        c_feasible=bool(0.8 * lam_max <= c),
    )


def norm_equivalence(cfg: WeightConfig, net: Network) -> tuple[float, float]:
    """(min, max) of the weights over the network: min h ||d||^2 <= E_sigma <= max h ||d||^2."""
    lo, hi = math.inf, 0.0
    for pipe in net.pipes.values():
        hp, hm = weights(cfg, pipe, np.array([0.0, pipe.length]))
        lo = min(lo, float(hp.min()), float(hm.min()))
        hi = max(hi, float(hp.max()), float(hm.max()))
    return lo, hi
