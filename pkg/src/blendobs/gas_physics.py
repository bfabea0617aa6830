"""Pressure laws and the Riemann-invariant description of blended gas flow.

Every law exposes vectorized ``pressure``, ``dpressure``, ``sound_speed``,
``rtilde`` and ``rtilde_inv``. ``rtilde`` is the integral of
``sqrt(p'(r)) / r`` from 1 to ``rho``; all three built-in laws have closed
forms. :meth:`PressureLaw.rtilde_numeric` and
:meth:`PressureLaw.rtilde_inv_numeric` evaluate the same maps by adaptive
quadrature and safeguarded Newton iteration and serve laws without a closed
form (and as an independent check of the closed forms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError

RHO_MIN = 0.01
RHO_MAX = 100.0


class PhysicalState(NamedTuple):
    rho: Any  # mixture density
    q: Any  # mixture mass flux
    rho_h: Any  # hydrogen density


class RiemannState(NamedTuple):
    r_plus: Any
    r_minus: Any
    r_zero: Any


class Eigenvalues(NamedTuple):
    plus: Any
    minus: Any
    zero: Any


@dataclass(frozen=True, kw_only=True)
class PressureLaw:
    """Base class; subclasses define ``pressure`` and ``dpressure``."""

    rho_min: float = RHO_MIN
    rho_max: float = RHO_MAX

    kind = "abstract"

    def _check(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.ndim == 0:
            lo = hi = float(rho)
        else:
            lo, hi = rho.min(), rho.max()
        # NaN fails both comparisons
        if not (self.rho_min <= lo and hi <= self.rho_max):
            bad = rho[(~np.isfinite(rho)) | (rho < self.rho_min) | (rho > self.rho_max)]
            raise DomainError(
                f"density {bad.flat[0]!r} outside admissible range [{self.rho_min}, {self.rho_max}]"
            )
        return rho

    def _check_inv(self, rho):
        # results of the closed-form inverses may round just past the bounds
        rho = np.asarray(rho, dtype=float)
        lo, hi = (float(rho), float(rho)) if rho.ndim == 0 else (rho.min(), rho.max())
        if hi > self.rho_max:
            rho = np.where((rho > self.rho_max) & (rho <= self.rho_max * (1 + 1e-12)), self.rho_max, rho)
        if lo < self.rho_min:
            rho = np.where((rho < self.rho_min) & (rho >= self.rho_min * (1 - 1e-12)), self.rho_min, rho)
        return self._check(rho)

    def pressure(self, rho):
        raise NotImplementedError

    def dpressure(self, rho):
        raise NotImplementedError

    def sound_speed(self, rho):
        return np.sqrt(self.dpressure(rho))

    def rtilde(self, rho):
        return self.rtilde_numeric(rho)

    def rtilde_inv(self, w):
        return self.rtilde_inv_numeric(w)

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    # generic machinery

    def rtilde_numeric(self, rho, tol: float = 1e-13):
        """R~(rho) by adaptive Gauss-Kronrod quadrature."""
        rho = self._check(rho)

        def one(r):
            val, _ = integrate.quad(
                lambda s: float(self.sound_speed(s)) / s, 1.0, r, epsabs=tol, epsrel=tol, limit=200
            )
            return val

        return np.vectorize(one, otypes=[float])(rho)

    @property
    def _bracket(self) -> tuple[float, float]:
        return float(self.rtilde(self.rho_min)), float(self.rtilde(self.rho_max))

    def rtilde_inv_numeric(self, w, max_iter: int = 100):
        """Invert ``rtilde`` by Newton steps safeguarded with bisection.

        The bracket is [rho_min, rho_max]; ``rtilde`` is strictly increasing
        with derivative ``sqrt(p')/rho``.
        """
        w = np.asarray(w, dtype=float)
        w_lo, w_hi = self._bracket
        flat = w.ravel()
        if np.any(~np.isfinite(flat)) or np.any(flat < w_lo) or np.any(flat > w_hi):
            raise DomainError(f"value outside range of R~: bracket [{w_lo}, {w_hi}]")
        out = np.empty_like(flat)
        for i, target in enumerate(flat):
            lo, hi = self.rho_min, self.rho_max
            rho = min(max(1.0, lo), hi)
            for _ in range(max_iter):
                f = float(self.rtilde(rho)) - target
                if abs(f) <= 1e-14 * max(1.0, abs(target)):
                    break
                if f > 0:
                    hi = rho
                else:
                    lo = rho
                step = f * rho / float(self.sound_speed(rho))
                cand = rho - step
                rho = cand if lo < cand < hi else 0.5 * (lo + hi)
                if hi - lo <= 1e-16 * hi:
                    break
            else:
                raise DomainError(f"R~ inverse did not converge for w={target} (bracket [{lo}, {hi}])")
            out[i] = rho
        return out.reshape(w.shape)


@dataclass(frozen=True)
class IdealLaw(PressureLaw):
    """p = c^2 rho with c^2 = R_s T."""

    rst: float = 1.0

    kind = "ideal"

    def __post_init__(self):
        if not self.rst > 0:
            raise ConfigError(f"ideal law needs R_s*T > 0, got {self.rst}")

    @property
    def c(self) -> float:
        return math.sqrt(self.rst)

    def pressure(self, rho):
        return self.rst * self._check(rho)

    def dpressure(self, rho):
        return np.full_like(self._check(rho), self.rst)

    def sound_speed(self, rho):
        return np.full_like(self._check(rho), self.c)

    def rtilde(self, rho):
        return self.c * np.log(self._check(rho))

    def rtilde_inv(self, w):
        return self._check_inv(np.exp(np.asarray(w, dtype=float) / self.c))

    def to_dict(self):
        return {"kind": "ideal", "rst": self.rst}


@dataclass(frozen=True)
class AGALaw(PressureLaw):
    """p = R_s T rho / (1 - alpha rho) with alpha <= 0."""

    rst: float = 1.0
    alpha: float = 0.0

    kind = "aga"

    def __post_init__(self):
        if not self.rst > 0:
            raise ConfigError(f"AGA law needs R_s*T > 0, got {self.rst}")
        if self.alpha > 0:
            raise ConfigError(f"AGA law needs alpha_tilde <= 0, got {self.alpha}")

    @property
    def c(self) -> float:
        return math.sqrt(self.rst)

    def _denom(self, rho):
        d = 1.0 - self.alpha * rho
        if np.any(d <= 0):
            raise DomainError("AGA denominator 1 - alpha*rho <= 0")
        return d

    def pressure(self, rho):
        rho = self._check(rho)
        return self.rst * rho / self._denom(rho)

    def dpressure(self, rho):
        rho = self._check(rho)
        return self.rst / self._denom(rho) ** 2

    def sound_speed(self, rho):
        rho = self._check(rho)
        return self.c / self._denom(rho)

    def rtilde(self, rho):
        # c / (r (1 - a r)) = c / r + c a / (1 - a r)
        rho = self._check(rho)
        return self.c * (np.log(rho) - np.log(self._denom(rho)) + math.log(1.0 - self.alpha))

    def rtilde_inv(self, w):
        # rho / (1 - a rho) = k  =>  rho = k / (1 + a k)
        k = np.exp(np.asarray(w, dtype=float) / self.c) / (1.0 - self.alpha)
        den = 1.0 + self.alpha * k
        if np.any(den <= 0):
            raise DomainError("value outside range of R~ for AGA law")
        return self._check_inv(k / den)

    def to_dict(self):
        return {"kind": "aga", "rst": self.rst, "alpha_tilde": self.alpha}


@dataclass(frozen=True)
class IsentropicLaw(PressureLaw):
    """p = a rho^gamma_exp with a > 0, gamma_exp > 1."""

    a: float = 1.0
    gamma_exp: float = 1.4

    kind = "isentropic"

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"isentropic law needs a > 0, got {self.a}")
        if not self.gamma_exp > 1:
            raise ConfigError(f"isentropic law needs gamma > 1, got {self.gamma_exp}")

    def pressure(self, rho):
        return self.a * self._check(rho) ** self.gamma_exp

    def dpressure(self, rho):
        return self.a * self.gamma_exp * self._check(rho) ** (self.gamma_exp - 1.0)

    @property
    def _k(self) -> float:
        # rtilde = k (rho^m - 1), m = (g - 1) / 2
        return 2.0 * math.sqrt(self.a * self.gamma_exp) / (self.gamma_exp - 1.0)

    def rtilde(self, rho):
        m = 0.5 * (self.gamma_exp - 1.0)
        return self._k * np.expm1(m * np.log(self._check(rho)))

    def rtilde_inv(self, w):
        m = 0.5 * (self.gamma_exp - 1.0)
        base = 1.0 + np.asarray(w, dtype=float) / self._k
        if np.any(base <= 0):
            raise DomainError("value outside range of R~ for isentropic law")
        return self._check_inv(base ** (1.0 / m))

    def to_dict(self):
        return {"kind": "isentropic", "a": self.a, "gamma": self.gamma_exp}


def law_from_config(cfg: Mapping[str, Any] | None) -> PressureLaw:
    """Build a law from ``{"kind": "ideal"|"aga"|"isentropic", ...}``."""
    if cfg is None:
        return IdealLaw()
    if not isinstance(cfg, Mapping) or "kind" not in cfg:
        raise ConfigError("pressure_law: expected an object with 'kind'")
    extra = {}
    for key in ("rho_min", "rho_max"):
        if key in cfg:
            extra[key] = float(cfg[key])
    kind = cfg["kind"]
    try:
        if kind == "ideal":
            return IdealLaw(rst=float(cfg.get("rst", 1.0)), **extra)
        if kind == "aga":
            return AGALaw(rst=float(cfg.get("rst", 1.0)), alpha=float(cfg.get("alpha_tilde", 0.0)), **extra)
        if kind == "isentropic":
            return IsentropicLaw(a=float(cfg.get("a", 1.0)), gamma_exp=float(cfg.get("gamma", 1.4)), **extra)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"pressure_law: {exc}") from None
    raise ConfigError(f"pressure_law.kind: unknown law {kind!r}")


def pressure(law: PressureLaw, rho):
    return law.pressure(rho)


def pressure_deriv(law: PressureLaw, rho):
    return law.dpressure(rho)


def rtilde(law: PressureLaw, rho):
    return law.rtilde(rho)


def rtilde_inv(law: PressureLaw, w):
    return law.rtilde_inv(w)


def riemann_from_physical(law: PressureLaw, s: PhysicalState, gamma: float) -> RiemannState:
    rho = np.asarray(s.rho, dtype=float)
    rho_h = np.asarray(s.rho_h, dtype=float)
    if np.any(rho_h < 0) or np.any(rho_h > rho):
        raise DomainError("hydrogen density must satisfy 0 <= rho_h <= rho")
    w = law.rtilde(rho)
    v = np.asarray(s.q, dtype=float) / rho
    return RiemannState(w + v, w - v, rho_h / (rho + gamma))


def physical_from_riemann(law: PressureLaw, r: RiemannState, gamma: float) -> PhysicalState:
    rp = np.asarray(r.r_plus, dtype=float)
    rm = np.asarray(r.r_minus, dtype=float)
    rho = law.rtilde_inv(0.5 * (rp + rm))
    return PhysicalState(rho, rho * 0.5 * (rp - rm), np.asarray(r.r_zero, dtype=float) * (rho + gamma))


def eigenvalues(law: PressureLaw, r: RiemannState, gamma: float) -> Eigenvalues:
    """lambda_+-, lambda_0 as functions of (R_+, R_-)."""
    rp = np.asarray(r.r_plus, dtype=float)
    rm = np.asarray(r.r_minus, dtype=float)
    rho = law.rtilde_inv(0.5 * (rp + rm))
    v = 0.5 * (rp - rm)
    a = law.sound_speed(rho)
    return Eigenvalues(v + a, v - a, rho * v / (rho + gamma))


def source_sigma(nu, r_plus, r_minus):
    """Friction term nu |R_+ - R_-| (R_+ - R_-)."""
    d = np.subtract(r_plus, r_minus)
    return nu * np.abs(d) * d
