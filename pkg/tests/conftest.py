from __future__ import annotations

import json
from pathlib import Path

import pytest

from blendobs.gas_physics import IdealLaw
from blendobs.network import load_network
from blendobs.scenario import DATA_DIR, scenario_from_dict

DATA = Path(str(DATA_DIR))

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def star():
    return load_network(DATA / "star_network.json")


@pytest.fixture
def ideal():
    return IdealLaw(rst=1.0)


@pytest.fixture
def reference_raw() -> dict:
    return json.loads((DATA / "reference_scenario.json").read_text())


def make_scenario(raw: dict, **overrides):
    from blendobs.scenario import replace_param

    for key, val in overrides.items():
        raw = replace_param(raw, key.replace("__", "."), val)
    return scenario_from_dict(raw, DATA)


def single_pipe_dict(length=1.0, diameter=0.5, theta=0.08, cells=50, mu=0.0, u_left=0.0, u_right=0.0):
    sig = lambda v: {"kind": "constant", "value": v}  # noqa: E731
    return {
        "gamma": 0.0,
        "pipes": [{"id": "e", "length": length, "diameter": diameter, "friction_theta": theta, "cells": cells}],
        "nodes": [
            {"id": "a", "incident": [{"pipe": "e", "end": "left"}], "mu": mu,
             "boundary": {"u_sigma": sig(u_left), "u_0": sig(0.0)}},
            {"id": "b", "incident": [{"pipe": "e", "end": "right"}], "mu": mu,
             "boundary": {"u_sigma": sig(u_right), "u_0": sig(0.0)}},
        ],
    }


def series_dict(diams=(0.5, 0.5), cells=10, theta=0.0):
    d = single_pipe_dict(cells=cells, theta=theta)
    d["pipes"] = [
        {"id": f"e{i}", "length": 1.0, "diameter": D, "friction_theta": theta, "cells": cells}
        for i, D in enumerate(diams)
    ]
    d["nodes"][0]["incident"] = [{"pipe": "e0", "end": "left"}]
    d["nodes"][1]["incident"] = [{"pipe": "e1", "end": "right"}]
    d["nodes"].append({"id": "m", "incident": [{"pipe": "e0", "end": "right"}, {"pipe": "e1", "end": "left"}], "mu": 0.0})
    return d


@pytest.fixture(scope="session")
def reference_run():
    """The reference twin run (star network, T = 50), timed once per session."""
    import time

    from blendobs.observer import run_twin
    from blendobs.scenario import load_scenario

    sc = load_scenario(DATA / "reference_scenario.json")
    t0 = time.perf_counter()
    series = run_twin(sc)
    return sc, series, time.perf_counter() - t0
