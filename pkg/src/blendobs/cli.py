"""Command-line interface: ``blendobs {simulate,check,sweep,steady}``.

Exit codes: 0 success, 1 a checked condition failed, 2 configuration
error, 3 runtime error during a run.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import subprocess
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import BlendobsError, ConfigError, SimulationError
from .lyapunov import check_mu_condition, check_psi_condition, fit_decay_rate, measure_constants
from .observer import ErrorSeries, initial_twin, run_twin
from .scenario import Scenario, load_scenario, replace_param, scenario_from_dict
from .steady import profile_to_csv

EXIT_OK, EXIT_CONDITION, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

PARAM_ALIASES = {
    "amplitude": "noise.amplitude",
    "noise": "noise.amplitude",
    "psi": "weights.psi",
    "psi0": "weights.psi0",
    "seed": "noise.seed",
}

log = logging.getLogger("blendobs")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_series_csv(series: ErrorSeries, path: Path) -> None:
    lines = [",".join(ErrorSeries.COLUMNS)]
    lines += [",".join(fmt(v) for v in row) for row in series.rows()]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_snapshot_csv(t: float, plant, observer, path: Path) -> None:
    lines = ["pipe,x,S_plus,S_minus,S_zero,R_plus,R_minus,R_zero"]
    for pid, f in plant.fields.items():
        o = observer.fields[pid]
        for i in range(f.r_plus.size):
            vals = (i * f.dx, f.r_plus[i], f.r_minus[i], f.r_zero[i], o.r_plus[i], o.r_minus[i], o.r_zero[i])
            lines.append(pid + "," + ",".join(fmt(v) for v in vals))
    _atomic_write(path, "\n".join(lines) + "\n")


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _out_dir(args, scenario: Scenario) -> Path:
    if args.out:
        return Path(args.out)
    return Path(scenario.output.path or "out")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    out = _out_dir(args, scenario)
    out.mkdir(parents=True, exist_ok=True)
    start = _now()
    files: list[str] = []
    status, code, message = "ok", EXIT_OK, None
    try:
        series = run_twin(scenario)
    except SimulationError as exc:
        series = exc.partial if exc.partial is not None else ErrorSeries()
        status, code, message = "runtime-error", EXIT_RUNTIME, str(exc)
    diag = out / "diagnostics.csv"
    write_series_csv(series, diag)
    files.append(diag.name)
    for k, (t, plant, obs) in enumerate(series.snapshots):
        p = out / f"snapshot_{k:03d}.csv"
        write_snapshot_csv(t, plant, obs, p)
        files.append(p.name)
    manifest = {
        "version": version_string(),
        "seed": scenario.seed,
        "start": start,
        "end": _now(),
        "status": status,
        "error": message,
        "steps": series.steps,
        "outputs": files,
        "config": scenario.raw,
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if code:
        return _fail(code, message)
    print(f"wrote {len(series)} samples to {diag}")
    return EXIT_OK


def evaluate_conditions(scenario: Scenario):
    """Theory constants and condition margins at t = 0."""
    net, law, g = scenario.net, scenario.law, scenario.gamma
    tw = initial_twin(scenario)
    consts = measure_constants(net, law, tw.plant, [tw.observer], g)
    psi = check_psi_condition(net, scenario.weights, consts)
    mu = {v: check_mu_condition(v, tw.observer, scenario.weights, net, law, g) for v in net.nodes}
    return consts, psi, mu


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    consts, psi, mu = evaluate_conditions(scenario)
    hyp = scenario.profile.hypotheses(scenario.law, scenario.gamma)
    print("constants: " + ", ".join(
        f"{k}={fmt(getattr(consts, k))}" for k in ("c", "eps0", "M", "M_hat", "beta", "v_low", "v_high")
    ))
    if not consts.c_feasible:
        print("warning: eigenvalue spread exceeds the [3/4 c, 5/4 c] band")
    if not hyp.ok:
        print("warning: steady state violates subsonic / nonzero-velocity hypotheses")
    print(f"{'kind':<6}{'entity':<12}{'margin':>26}  ok")
    for pid, m in psi.margins.items():
        print(f"{'psi':<6}{pid:<12}{fmt(m):>26}  {'yes' if m > 0 else 'NO'}")
    for v, m in mu.items():
        print(f"{'mu':<6}{v:<12}{fmt(m.margin):>26}  {'yes' if m.margin > 0 else 'NO'}")
    print(f"chi (theory) = {fmt(psi.chi)}")
    ok = psi.ok and all(m.margin > 0 for m in mu.values())
    return EXIT_OK if ok else EXIT_CONDITION


def _parse_values(text: str) -> list[Any]:
    text = text.strip()
    if text.startswith("["):
        try:
            vals = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--values: {exc.msg}") from None
        if not isinstance(vals, list):
            raise ConfigError("--values: expected a list")
        return vals
    if not text:
        return []
    out = []
    for item in text.split(","):
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            raise ConfigError(f"--values: cannot parse {item!r}") from None
    return out


def sweep_one(raw: dict, base_dir: str, param: str, value: Any, seed: int | None) -> dict:
    """One sweep run; failures are reported in the row, never raised."""
    row = {"value": value, "chi_fit": math.nan, "plateau": math.nan, "r_squared": math.nan}
    try:
        scenario = scenario_from_dict(replace_param(raw, param, value), Path(base_dir), seed)
        series = run_twin(scenario)
        fit = fit_decay_rate(series.times, series.e_sigma)
        row.update(chi_fit=fit.chi, plateau=fit.plateau, r_squared=fit.r_squared, status=fit.flag)
    except (BlendobsError, ValueError, ArithmeticError) as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    if not values:
        raise ConfigError("sweep needs a nonempty value list")
    param = PARAM_ALIASES.get(args.param, args.param)
    path = Path(args.scenario)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    # validate the base scenario before fanning out
    scenario = scenario_from_dict(raw, path.parent, args.seed)
    jobs = max(1, int(args.jobs))
    base = str(path.parent.resolve())
    if jobs == 1:
        rows = [sweep_one(raw, base, param, v, args.seed) for v in values]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(sweep_one, [raw] * len(values), [base] * len(values), [param] * len(values), values, [args.seed] * len(values)))
    out = _out_dir(args, scenario)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["value,chi_fit,plateau,r_squared,status"]
    for r in rows:
        v = r["value"]
        vtxt = fmt(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else json.dumps(v)
        status = r["status"].replace(",", ";")
        lines.append(f"{vtxt},{fmt(r['chi_fit'])},{fmt(r['plateau'])},{fmt(r['r_squared'])},{status}")
    _atomic_write(out / "sweep_summary.csv", "\n".join(lines) + "\n")
    print(f"wrote {len(rows)} rows to {out / 'sweep_summary.csv'}")
    return EXIT_OK


def cmd_steady(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    out = _out_dir(args, scenario)
    out.mkdir(parents=True, exist_ok=True)
    profile_to_csv(scenario.profile, out / "steady_profile.csv")
    hyp = scenario.profile.hypotheses(scenario.law, scenario.gamma)
    for pid, p in scenario.profile.pipes.items():
        print(f"{pid}: q={fmt(p.q)} subsonic={hyp.subsonic[pid]} min|J+-J-|={fmt(hyp.min_velocity_gap[pid])}")
    for v, pr in scenario.profile.node_pressure.items():
        print(f"node {v}: p={fmt(pr)}")
    return EXIT_OK if hyp.ok else EXIT_CONDITION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blendobs", description="Observer twin simulations on hydrogen-blend gas networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log node-set changes and solver details")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        if out:
            p.add_argument("--out", default=None, help="output directory (default: scenario output.path)")

    p = sub.add_parser("simulate", help="run plant and observer, write diagnostics CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="evaluate the psi and mu conditions at t = 0")
    common(p, out=False)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run the scenario for a list of parameter values")
    common(p)
    p.add_argument("--param", required=True, help="dotted scenario field, e.g. noise.amplitude, mu, weights.psi")
    p.add_argument("--values", required=True, help="comma list or JSON list of values")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("steady", help="compute and export the steady profile")
    common(p)
    p.set_defaults(func=cmd_steady)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except SimulationError as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    except OSError as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
