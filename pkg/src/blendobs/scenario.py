"""Scenario files: network, law, steady base flow, observer setup, output.

A scenario is a JSON object::

    {
      "network": "star_network.json",        # path or inline object
      "pressure_law": {"kind": "ideal", "rst": 1.0},   # optional override
      "gamma": 0.0,                           # optional override
      "mu": 0.2,                              # optional, scalar or {node: mu}
      "T": 50.0, "cfl": 0.9,
      "steady": {"boundary": {"in": {"pressure": 1.0, "h2": 0.1},
                              "out1": {"flow": -0.0075}}},
      "noise": {"amplitude": 0.0, "seed": 1, "modes": 4, "ramp_time": 1.0},
      "initial": {"kind": "steady_plus_bump", "bump_amplitude": 0.01,
                  "bump_pipe": "all", "h2_bump_amplitude": 0.0},
      "weights": {"psi": 0.5, "psi0": 0.5, "b_plus": 1.0, "b_minus": 1.0},
      "output": {"cadence": 0.1, "path": "out", "snapshots": [10.0]}
    }

Network paths are resolved relative to the scenario file, then against
the bundled data directory. The boundary data of the network is replaced
by constant signals that keep the steady state stationary, unless
``steady.match_boundary`` is false.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .gas_physics import PressureLaw, law_from_config
from .lyapunov import WeightConfig
from .network import Network, network_from_dict, network_to_dict
from .observer import NoiseModel
from .steady import SteadyProfile, matching_boundary, steady_network

DATA_DIR = resources.files("blendobs") / "data"


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "steady_plus_bump"
    bump_amplitude: float = 0.0
    bump_pipe: str | None = "all"
    h2_bump_amplitude: float = 0.0


@dataclass(frozen=True)
class OutputSpec:
    cadence: float = 0.0  # 0: every step
    path: str | None = None
    snapshots: tuple[float, ...] = ()


@dataclass
class Scenario:
    net: Network
    law: PressureLaw
    gamma: float
    T: float
    cfl: float
    noise: NoiseModel
    initial: InitialSpec
    weights: WeightConfig
    output: OutputSpec
    profile: SteadyProfile
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.noise.seed


def _num(obj: Mapping, key: str, path: str, default=None, kind=float):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    val = obj[key]
    if isinstance(val, bool):
        raise ConfigError(f"{path}.{key}: expected a number, got {val!r}")
    try:
        if kind is int:
            if not float(val).is_integer():
                raise ValueError
            return int(val)
        return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {val!r}") from None


def _resolve_network(spec: Any, base_dir: Path | None) -> dict:
    if isinstance(spec, Mapping):
        return dict(spec)
    if not isinstance(spec, str):
        raise ConfigError("$.network: expected a file path or an object")
    candidates = []
    if base_dir is not None:
        candidates.append(Path(base_dir) / spec)
    candidates.append(Path(spec))
    candidates.append(Path(str(DATA_DIR / spec)))
    for cand in candidates:
        if cand.is_file():
            try:
                return json.loads(cand.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{cand}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    raise ConfigError(f"$.network: file not found: {spec}")


def scenario_from_dict(data: Mapping[str, Any], base_dir: Path | None = None, seed: int | None = None) -> Scenario:
    """Validate a decoded scenario object, compute its steady state and build a Scenario."""
    if not isinstance(data, Mapping):
        raise ConfigError("scenario must be a JSON object")
    raw = copy.deepcopy(dict(data))
    if "network" not in raw:
        raise ConfigError("$.network: missing required field")
    net_dict = _resolve_network(raw["network"], base_dir)
    if "pressure_law" in raw:
        net_dict["pressure_law"] = raw["pressure_law"]
    if "gamma" in raw:
        net_dict["gamma"] = raw["gamma"]
    net = network_from_dict(net_dict)
    if "mu" in raw:
        mu = raw["mu"]
        if isinstance(mu, Mapping):
            unknown = set(mu) - set(net.nodes)
            if unknown:
                raise ConfigError(f"$.mu: unknown nodes {sorted(unknown)}")
            net = net.with_mu({k: float(v) for k, v in mu.items()})
        else:
            net = net.with_mu(_num(raw, "mu", "$"))
        for v, node in net.nodes.items():
            if not 0.0 <= node.mu <= 1.0:
                raise ConfigError(f"$.mu: node {v} has mu={node.mu} outside [0, 1]")
    law = law_from_config(net.pressure_law)

    T = _num(raw, "T", "$")
    if T < 0:
        raise ConfigError(f"$.T: must be >= 0, got {T}")
    cfl = _num(raw, "cfl", "$", 0.9)
    if not 0.0 < cfl <= 1.0:
        raise ConfigError(f"$.cfl: must lie in (0, 1], got {cfl}")

    nz = raw.get("noise", {}) or {}
    if not isinstance(nz, Mapping):
        raise ConfigError("$.noise: expected an object")
    noise_seed = seed if seed is not None else _num(nz, "seed", "$.noise", 0, int)
    noise = NoiseModel(
        amplitude=_num(nz, "amplitude", "$.noise", 0.0),
        seed=int(noise_seed),
        modes=_num(nz, "modes", "$.noise", 4, int),
        ramp_time=_num(nz, "ramp_time", "$.noise", 1.0),
    )
    if seed is not None:
        raw.setdefault("noise", {})["seed"] = int(seed)

    ini = raw.get("initial", {}) or {}
    if not isinstance(ini, Mapping):
        raise ConfigError("$.initial: expected an object")
    kind = ini.get("kind", "steady_plus_bump")
    if kind != "steady_plus_bump":
        raise ConfigError(f"$.initial.kind: unknown kind {kind!r}")
    bump_pipe = ini.get("bump_pipe", "all")
    if bump_pipe not in (None, "all") and bump_pipe not in net.pipes:
        raise ConfigError(f"$.initial.bump_pipe: unknown pipe {bump_pipe!r}")
    initial = InitialSpec(
        kind,
        _num(ini, "bump_amplitude", "$.initial", 0.0),
        bump_pipe,
        _num(ini, "h2_bump_amplitude", "$.initial", 0.0),
    )

    weights = WeightConfig.from_dict(raw.get("weights"))

    outp = raw.get("output", {}) or {}
    if not isinstance(outp, Mapping):
        raise ConfigError("$.output: expected an object")
    snaps = outp.get("snapshots", [])
    if not isinstance(snaps, list):
        raise ConfigError("$.output.snapshots: expected a list of times")
    output = OutputSpec(_num(outp, "cadence", "$.output", 0.0), outp.get("path"), tuple(float(s) for s in snaps))

    st = raw.get("steady")
    if not isinstance(st, Mapping) or not isinstance(st.get("boundary"), Mapping):
        raise ConfigError("$.steady.boundary: required object mapping boundary nodes to pressure/flow")
    profile = steady_network(net, law, st["boundary"])
    if st.get("match_boundary", True):
        net = net.with_boundary(matching_boundary(profile, net))

    raw["network"] = network_to_dict(net)
    return Scenario(net, law, net.gamma, T, cfl, noise, initial, weights, output, profile, raw)


def parse_scenario(text: str, base_dir: Path | None = None, seed: int | None = None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data, base_dir, seed)


def load_scenario(path, seed: int | None = None) -> Scenario:
    path = Path(path)
    if not path.is_file():
        bundled = Path(str(DATA_DIR / path.name))
        if bundled.is_file():
            path = bundled
        else:
            raise ConfigError(f"scenario file not found: {path}")
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent, seed)


def reference_scenario_path() -> Path:
    return Path(str(DATA_DIR / "reference_scenario.json"))


def replace_param(data: Mapping[str, Any], dotted: str, value: Any) -> dict:
    """Copy of ``data`` with a dotted path (``noise.amplitude``) set to ``value``."""
    out = copy.deepcopy(dict(data))
    keys = dotted.split(".")
    cur = out
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"parameter path {dotted!r}: {k!r} is not an object")
        cur = nxt
    cur[keys[-1]] = value
    return out
