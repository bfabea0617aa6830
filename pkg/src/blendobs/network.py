"""Pipeline graph: pipes, nodes, boundary signals and config ingestion.

Pipe ends are addressed structurally as ``(pipe_id, end)`` with ``end`` one
of ``LEFT`` (x = 0) or ``RIGHT`` (x = L). The parameterization direction of a
pipe is part of the input and is never changed.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError

LEFT = 0
RIGHT = 1
_END_NAMES = {"left": LEFT, "right": RIGHT}
_END_TAGS = {LEFT: "left", RIGHT: "right"}


@dataclass(frozen=True)
class Signal:
    """Scalar time signal used as nodal boundary data.

    Kinds and parameters:

    * ``constant``: ``value``
    * ``ramp``: ``start``, ``end``, ``t0``, ``t1`` (C1 smoothstep between
      ``t0`` and ``t1``)
    * ``sine``: ``offset``, ``amplitude``, ``omega``, ``phase``
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    _REQUIRED = {
        "constant": ("value",),
        "ramp": ("start", "end", "t0", "t1"),
        "sine": ("offset", "amplitude", "omega", "phase"),
    }

    def __post_init__(self):
        if self.kind not in self._REQUIRED:
            raise ConfigError(f"unknown signal kind {self.kind!r}")
        missing = [k for k in self._REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise ConfigError(f"signal {self.kind!r} missing parameters {missing}")
        if self.kind == "ramp" and not self.params["t1"] > self.params["t0"]:
            raise ConfigError("ramp signal needs t1 > t0")

    @classmethod
    def constant(cls, value: float) -> "Signal":
        return cls("constant", {"value": float(value)})

    def __call__(self, t: float) -> float:
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "ramp":
            s = min(max((t - p["t0"]) / (p["t1"] - p["t0"]), 0.0), 1.0)
            return p["start"] + (p["end"] - p["start"]) * s * s * (3.0 - 2.0 * s)
        return p["offset"] + p["amplitude"] * math.sin(p["omega"] * t + p["phase"])

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **{k: self.params[k] for k in self._REQUIRED[self.kind]}}


@dataclass(frozen=True)
class BoundaryData:
    """Boundary signals of a degree-1 node: u_sigma (incoming invariant) and u_0 (hydrogen)."""

    u_sigma: Signal
    u_0: Signal


@dataclass(frozen=True)
class Pipe:
    id: str
    length: float
    diameter: float
    theta: float
    cells: int

    @property
    def nu(self) -> float:
        """Friction coefficient of the diagonal form, theta / 8."""
        return self.theta / 8.0

    @property
    def dx(self) -> float:
        return self.length / self.cells

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.cells + 1)


@dataclass(frozen=True)
class NodeSpec:
    id: str
    incident: tuple[tuple[str, int], ...]
    mu: float
    boundary: BoundaryData | None = None

    @property
    def degree(self) -> int:
        return len(self.incident)


@dataclass(frozen=True)
class Violation:
    entity: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, entity: str, message: str) -> None:
        self.violations.append(Violation(entity, message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __str__(self) -> str:
        return "; ".join(str(v) for v in self.violations) or "ok"


@dataclass(frozen=True)
class NodeTopology:
    """Precomputed coupling data for one node."""

    pipes: tuple[str, ...]
    ends: tuple[int, ...]
    normals: np.ndarray  # n(v, e) per incident end
    d2: np.ndarray  # squared diameters per incident end
    omega: float  # 2 / sum(D^2)


@dataclass(frozen=True)
class Network:
    pipes: dict[str, Pipe]
    nodes: dict[str, NodeSpec]
    gamma: float = 0.0
    pressure_law: dict[str, Any] | None = None

    @cached_property
    def end_owner(self) -> dict[tuple[str, int], str]:
        return {end: v.id for v in self.nodes.values() for end in v.incident}

    @cached_property
    def topology(self) -> dict[str, NodeTopology]:
        topo = {}
        for v in self.nodes.values():
            pipes = tuple(p for p, _ in v.incident)
            ends = tuple(e for _, e in v.incident)
            d2 = np.array([self.pipes[p].diameter ** 2 for p in pipes])
            normals = np.array([-1.0 if e == LEFT else 1.0 for e in ends])
            topo[v.id] = NodeTopology(pipes, ends, normals, d2, 2.0 / d2.sum())
        return topo

    def degree(self, v: str) -> int:
        return self.nodes[v].degree

    @property
    def interior_nodes(self) -> list[str]:
        return [v for v, n in self.nodes.items() if n.degree >= 2]

    @property
    def boundary_nodes(self) -> list[str]:
        return [v for v, n in self.nodes.items() if n.degree == 1]

    def with_mu(self, mu: float | Mapping[str, float]) -> "Network":
        """Copy with node parameters mu^v replaced (scalar: all nodes)."""
        nodes = {}
        for vid, node in self.nodes.items():
            if isinstance(mu, Mapping):
                new_mu = float(mu.get(vid, node.mu))
            else:
                new_mu = float(mu)
            nodes[vid] = NodeSpec(node.id, node.incident, new_mu, node.boundary)
        return Network(self.pipes, nodes, self.gamma, self.pressure_law)

    def with_boundary(self, data: Mapping[str, BoundaryData]) -> "Network":
        nodes = {
            vid: NodeSpec(n.id, n.incident, n.mu, data.get(vid, n.boundary))
            for vid, n in self.nodes.items()
        }
        return Network(self.pipes, nodes, self.gamma, self.pressure_law)

    def with_cells(self, cells: int | Mapping[str, int]) -> "Network":
        pipes = {}
        for pid, p in self.pipes.items():
            n = cells.get(pid, p.cells) if isinstance(cells, Mapping) else cells
            pipes[pid] = Pipe(p.id, p.length, p.diameter, p.theta, int(n))
        return Network(pipes, self.nodes, self.gamma, self.pressure_law)


def incidence(v: str, e: str, net: Network) -> int:
    """Sign n(v, e): -1 if pipe e meets node v at x = 0, +1 at x = L, else 0."""
    if v not in net.nodes:
        raise KeyError(f"unknown node {v!r}")
    if e not in net.pipes:
        raise KeyError(f"unknown pipe {e!r}")
    for pid, end in net.nodes[v].incident:
        if pid == e:
            return -1 if end == LEFT else 1
    return 0


def validate_network(net: Network) -> ValidationReport:
    """Collect every structural invariant violation; never raises."""
    report = ValidationReport()
    if not (isinstance(net.gamma, (int, float)) and net.gamma >= 0 and math.isfinite(net.gamma)):
        report.add("network", f"gamma must be finite and >= 0, got {net.gamma}")
    if not net.pipes:
        report.add("network", "no pipes")
    for pid, p in net.pipes.items():
        if not p.length > 0:
            report.add(pid, f"length must be > 0, got {p.length}")
        if not p.diameter > 0:
            report.add(pid, f"diameter must be > 0, got {p.diameter}")
        if not p.theta >= 0:
            report.add(pid, f"friction_theta must be >= 0, got {p.theta}")
        if not (isinstance(p.cells, int) and p.cells >= 4):
            report.add(pid, f"cells must be an integer >= 4, got {p.cells}")

    claims: dict[tuple[str, int], list[str]] = {}
    for vid, node in net.nodes.items():
        if node.degree < 1:
            report.add(vid, "node has degree 0")
        if not 0.0 <= node.mu <= 1.0:
            report.add(vid, f"mu must lie in [0, 1], got {node.mu}")
        if node.degree == 1 and node.boundary is None:
            report.add(vid, "degree-1 node needs boundary data")
        if node.degree >= 2 and node.boundary is not None:
            report.add(vid, "boundary data given for an interior node")
        pipes_here = [p for p, _ in node.incident]
        if len(set(pipes_here)) != len(pipes_here):
            report.add(vid, "pipe attached to the node at both ends (self loop)")
        for pid, end in node.incident:
            if pid not in net.pipes:
                report.add(vid, f"references unknown pipe {pid!r}")
                continue
            claims.setdefault((pid, end), []).append(vid)

    for pid in net.pipes:
        for end in (LEFT, RIGHT):
            owners = claims.get((pid, end), [])
            if len(owners) > 1:
                report.add(pid, f"duplicate end claim on {_END_TAGS[end]} end by nodes {owners}")
            elif not owners:
                report.add(pid, f"{_END_TAGS[end]} end is not claimed by any node")

    if net.nodes and net.pipes and not _connected(net):
        report.add("network", "graph is not connected")
    return report


def _connected(net: Network) -> bool:
    adjacency: dict[str, set[str]] = {v: set() for v in net.nodes}
    by_pipe: dict[str, list[str]] = {}
    for vid, node in net.nodes.items():
        for pid, _ in node.incident:
            by_pipe.setdefault(pid, []).append(vid)
    for owners in by_pipe.values():
        for a in owners:
            adjacency[a].update(owners)
    start = next(iter(net.nodes))
    seen = {start}
    queue = deque([start])
    while queue:
        for w in adjacency[queue.popleft()]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(net.nodes)


def _get(obj: Mapping[str, Any], key: str, path: str, kind=float):
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{path}: expected an object")
    if key not in obj:
        raise ConfigError(f"{path}.{key}: missing required field")
    value = obj[key]
    try:
        if kind is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}") from None


def parse_signal(obj: Any, path: str) -> Signal:
    if not isinstance(obj, Mapping) or "kind" not in obj:
        raise ConfigError(f"{path}: signal needs a 'kind'")
    kind = obj["kind"]
    if kind not in Signal._REQUIRED:
        raise ConfigError(f"{path}.kind: unknown signal kind {kind!r}")
    params = {k: _get(obj, k, path) for k in Signal._REQUIRED[kind]}
    try:
        return Signal(kind, params)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def network_from_dict(data: Mapping[str, Any]) -> Network:
    """Build and validate a Network from an already-decoded JSON object."""
    if not isinstance(data, Mapping):
        raise ConfigError("network config must be a JSON object")
    gamma = _get(data, "gamma", "$") if "gamma" in data else 0.0
    raw_pipes = data.get("pipes")
    raw_nodes = data.get("nodes")
    if not isinstance(raw_pipes, list):
        raise ConfigError("$.pipes: expected an array")
    if not isinstance(raw_nodes, list):
        raise ConfigError("$.nodes: expected an array")

    pipes: dict[str, Pipe] = {}
    for i, rp in enumerate(raw_pipes):
        path = f"$.pipes[{i}]"
        pid = _get(rp, "id", path, str)
        if pid in pipes:
            raise ConfigError(f"{path}.id: duplicate pipe id {pid!r}")
        pipes[pid] = Pipe(
            id=pid,
            length=_get(rp, "length", path),
            diameter=_get(rp, "diameter", path),
            theta=_get(rp, "friction_theta", path),
            cells=_get(rp, "cells", path, int),
        )

    nodes: dict[str, NodeSpec] = {}
    for i, rn in enumerate(raw_nodes):
        path = f"$.nodes[{i}]"
        vid = _get(rn, "id", path, str)
        if vid in nodes:
            raise ConfigError(f"{path}.id: duplicate node id {vid!r}")
        inc = rn.get("incident")
        if not isinstance(inc, list):
            raise ConfigError(f"{path}.incident: expected an array")
        incident = []
        for j, item in enumerate(inc):
            ipath = f"{path}.incident[{j}]"
            pid = _get(item, "pipe", ipath, str)
            end_name = _get(item, "end", ipath, str)
            if end_name not in _END_NAMES:
                raise ConfigError(f"{ipath}.end: expected 'left' or 'right', got {end_name!r}")
            incident.append((pid, _END_NAMES[end_name]))
        boundary = None
        if rn.get("boundary") is not None:
            b = rn["boundary"]
            bpath = f"{path}.boundary"
            if not isinstance(b, Mapping) or "u_sigma" not in b or "u_0" not in b:
                raise ConfigError(f"{bpath}: needs 'u_sigma' and 'u_0' signals")
            boundary = BoundaryData(
                parse_signal(b["u_sigma"], f"{bpath}.u_sigma"),
                parse_signal(b["u_0"], f"{bpath}.u_0"),
            )
        mu = _get(rn, "mu", path) if "mu" in rn else 0.0
        nodes[vid] = NodeSpec(vid, tuple(incident), mu, boundary)

    law = data.get("pressure_law")
    if law is not None and not isinstance(law, Mapping):
        raise ConfigError("$.pressure_law: expected an object")
    net = Network(pipes, nodes, gamma, dict(law) if law is not None else None)
    report = validate_network(net)
    if report:
        raise ConfigError(f"invalid network: {report}")
    return net


def parse_network(config_text: str) -> Network:
    """Parse JSON network config text into a validated :class:`Network`."""
    try:
        data = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"network JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return network_from_dict(data)


def network_to_dict(net: Network) -> dict[str, Any]:
    out: dict[str, Any] = {
        "gamma": net.gamma,
        "pipes": [
            {
                "id": p.id,
                "length": p.length,
                "diameter": p.diameter,
                "friction_theta": p.theta,
                "cells": p.cells,
            }
            for p in net.pipes.values()
        ],
        "nodes": [],
    }
    for n in net.nodes.values():
        item: dict[str, Any] = {
            "id": n.id,
            "incident": [{"pipe": p, "end": _END_TAGS[e]} for p, e in n.incident],
            "mu": n.mu,
        }
        if n.boundary is not None:
            item["boundary"] = {"u_sigma": n.boundary.u_sigma.to_dict(), "u_0": n.boundary.u_0.to_dict()}
        out["nodes"].append(item)
    if net.pressure_law is not None:
        out["pressure_law"] = dict(net.pressure_law)
    return out


def serialize_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def load_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())
