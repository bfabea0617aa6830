"""Observer-based state estimation for hydrogen-blended gas flow on pipe networks."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BlendobsError,
    ConfigError,
    DomainError,
    MixingSingularityError,
    SimulationError,
    SteadyStateError,
    SubsonicError,
)
from .gas_physics import AGALaw, IdealLaw, IsentropicLaw, law_from_config  # noqa: E402
from .lyapunov import WeightConfig, fit_decay_rate, gronwall_envelope, gronwall_envelope_zero  # noqa: E402
from .network import Network, load_network, parse_network, validate_network  # noqa: E402
from .observer import NoiseModel, run_twin  # noqa: E402
from .scenario import Scenario, load_scenario  # noqa: E402
from .steady import steady_network  # noqa: E402

__all__ = [
    "AGALaw",
    "BlendobsError",
    "ConfigError",
    "DomainError",
    "IdealLaw",
    "IsentropicLaw",
    "MixingSingularityError",
    "Network",
    "NoiseModel",
    "Scenario",
    "SimulationError",
    "SteadyStateError",
    "SubsonicError",
    "WeightConfig",
    "fit_decay_rate",
    "gronwall_envelope",
    "gronwall_envelope_zero",
    "law_from_config",
    "load_network",
    "load_scenario",
    "parse_network",
    "run_twin",
    "steady_network",
    "validate_network",
]
