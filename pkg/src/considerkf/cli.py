"""Command-line front end.

Usage::

    considerkf run --config cfg.json [--output out.csv] [--format csv|json] [--tolerance 1e-8]
    considerkf fixtures

Exit codes: 0 success, 1 tolerance violation, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import filters as F
from .bridge import EquivalenceReport, run_equivalence
from .model import (
    FIXTURE_NAMES,
    ParameterPrior,
    Scenario,
    SensitivityWeight,
    SystemModel,
    builtin_fixture,
    validate_model,
)
from .sim import FILTER_IDS, FilterTracker, McReport, measurements_of, run_monte_carlo, simulate

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = ("equivalence", "montecarlo", "single-run")
FORMATS = ("csv", "json")
REQUIRED_KEYS = ("scenario", "command", "steps", "seed")
KNOWN_KEYS = ("scenario", "command", "filters", "weight", "runs", "steps", "seed", "tolerance", "output")
INLINE_REQUIRED = ("phi", "psi", "q", "h", "nmat", "r", "p_hat", "p_pp", "x0_hat", "p0")
INLINE_OPTIONAL = ("g", "s0")
DEFAULT_TOLERANCE = 1e-8

EQUIVALENCE_COLUMNS = ("k", "dev_state", "dev_gain", "dev_cov", "dev_cross")
MONTECARLO_COLUMNS = ("filter", "state_index", "rmse", "avg_nees")
SINGLE_RUN_COLUMNS = ("k", "filter", "state_index", "x_true", "x_hat", "variance")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


Matrix = tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "json"


@dataclass(frozen=True)
class RunConfig:
    scenario: str | dict[str, Any]
    command: str
    steps: int
    seed: int
    filters: tuple[str, ...] = FILTER_IDS
    weight: str | Matrix = "Ppp"
    runs: int = 100
    tolerance: float = DEFAULT_TOLERANCE
    output: OutputSpec = OutputSpec()


def fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- parsing -------------------------------------------------------------------

def _matrix(value, path: str, vector: bool = False):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric array") from None
    if vector:
        if arr.ndim != 1:
            raise ConfigError(path, f"expected a vector, got {arr.ndim}-D array")
    elif arr.ndim != 2:
        raise ConfigError(path, f"expected a row-major nested array (matrix), got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "entries must be finite")
    return arr


def _as_lists(arr: np.ndarray):
    return arr.tolist()


def _int(raw: dict, key: str, minimum: int) -> int:
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, "expected an integer")
    if value < minimum:
        raise ConfigError(key, f"must be ≥ {minimum}")
    return value


def _inline_scenario(raw: dict, path: str = "scenario") -> dict[str, Any]:
    missing = [k for k in INLINE_REQUIRED if k not in raw]
    if missing:
        raise ConfigError(path, f"missing required field(s): {', '.join(missing)}")
    unknown = sorted(set(raw) - set(INLINE_REQUIRED) - set(INLINE_OPTIONAL) - {"name"})
    if unknown:
        raise ConfigError(path, f"unknown field(s): {', '.join(unknown)}")
    out: dict[str, Any] = {}
    for key in INLINE_REQUIRED + INLINE_OPTIONAL:
        if key in raw:
            out[key] = _as_lists(_matrix(raw[key], f"{path}.{key}", vector=key in ("p_hat", "x0_hat")))
    if "name" in raw:
        out["name"] = str(raw["name"])
    return out


def build_scenario(spec: str | dict[str, Any], steps: int, seed: int) -> Scenario:
    """Materialize a fixture name or an inline scenario description."""
    if isinstance(spec, str):
        try:
            base = builtin_fixture(spec)
        except KeyError as exc:
            raise ConfigError("scenario", str(exc.args[0])) from None
        return base.with_steps(steps).with_seed(seed)
    n = len(spec["phi"])
    model = SystemModel.constant(
        phi=spec["phi"], psi=spec["psi"], g=spec.get("g", np.eye(n).tolist()), q=spec["q"],
        h=spec["h"], nmat=spec["nmat"], r=spec["r"],
    )
    report = validate_model(model, 1)
    if report:
        raise ConfigError("scenario", "; ".join(report.messages()))
    try:
        prior = ParameterPrior(spec["p_hat"], spec["p_pp"])
    except ValueError as exc:
        raise ConfigError("scenario.p_pp", str(exc)) from None
    if prior.l != model.l:
        raise ConfigError("scenario.p_hat", f"length {prior.l} does not match psi columns {model.l}")
    try:
        return Scenario(model, prior, spec["x0_hat"], spec["p0"], spec.get("s0"), steps, seed,
                        spec.get("name", "inline"))
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from None


def resolve_weight(config: RunConfig, scenario: Scenario) -> SensitivityWeight:
    if config.weight == "Ppp":
        return SensitivityWeight.from_prior(scenario.prior)
    try:
        w = SensitivityWeight(np.array(config.weight))
    except ValueError as exc:
        raise ConfigError("weight", str(exc)) from None
    if w.w.shape != (scenario.prior.l,) * 2:
        raise ConfigError("weight", f"expected {scenario.prior.l}x{scenario.prior.l}, got {w.w.shape}")
    return w


def parse_config(text: bytes | str) -> RunConfig:
    """Parse and fully validate a JSON run configuration.

    Raises:
        ConfigError: naming the offending field path.
    """
    try:
        raw = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("", f"malformed JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(missing[0], f"missing required field(s): {', '.join(missing)}")
    unknown = sorted(set(raw) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")

    command = raw["command"]
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {COMMANDS}, got {command!r}")
    steps = _int(raw, "steps", 1)
    seed = _int(raw, "seed", 0)
    runs = _int(raw, "runs", 1) if "runs" in raw else RunConfig.runs

    scen = raw["scenario"]
    if isinstance(scen, str):
        scenario_spec: str | dict = scen
    elif isinstance(scen, dict):
        scenario_spec = _inline_scenario(scen)
    else:
        raise ConfigError("scenario", "expected a fixture name or an object of matrices")

    filters = raw.get("filters", list(FILTER_IDS))
    if not isinstance(filters, list) or not filters:
        raise ConfigError("filters", "expected a non-empty list")
    for i, name in enumerate(filters):
        if name not in FILTER_IDS:
            raise ConfigError(f"filters[{i}]", f"unknown filter {name!r}; expected one of {FILTER_IDS}")

    weight_raw = raw.get("weight", "Ppp")
    if isinstance(weight_raw, str):
        if weight_raw != "Ppp":
            raise ConfigError("weight", "string weight must be \"Ppp\"")
        weight: str | Matrix = "Ppp"
    else:
        weight = tuple(tuple(row) for row in _as_lists(_matrix(weight_raw, "weight")))

    tolerance = raw.get("tolerance", DEFAULT_TOLERANCE)
    if isinstance(tolerance, bool) or not isinstance(tolerance, (int, float)) or not math.isfinite(tolerance) \
            or tolerance < 0:
        raise ConfigError("tolerance", "expected a finite non-negative number")

    out_raw = raw.get("output", {})
    if isinstance(out_raw, str):
        out_raw = {"path": out_raw}
    if not isinstance(out_raw, dict):
        raise ConfigError("output", "expected an object with 'path' and 'format'")
    fmt_name = out_raw.get("format", "json")
    if fmt_name not in FORMATS:
        raise ConfigError("output.format", f"must be one of {FORMATS}")
    path = out_raw.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path", "expected a string")

    config = RunConfig(
        scenario=scenario_spec, command=command, steps=steps, seed=seed, filters=tuple(filters),
        weight=weight, runs=runs, tolerance=float(tolerance), output=OutputSpec(path, fmt_name),
    )
    # materialize once so dimension and definiteness problems surface here
    scenario = build_scenario(config.scenario, steps, seed)
    resolve_weight(config, scenario)
    return config


def config_to_json(config: RunConfig) -> str:
    payload = {
        "scenario": config.scenario,
        "command": config.command,
        "filters": list(config.filters),
        "weight": config.weight if isinstance(config.weight, str) else [list(r) for r in config.weight],
        "runs": config.runs,
        "steps": config.steps,
        "seed": config.seed,
        "tolerance": config.tolerance,
        "output": {"path": config.output.path, "format": config.output.format},
    }
    return json.dumps(payload, indent=2)


# -- rendering -------------------------------------------------------------------

def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def render_equivalence(report: EquivalenceReport, fmt_name: str, tolerance: float, name: str) -> str:
    summary = (
        -1, report.max_rel_dev_state, report.max_rel_dev_gain,
        report.max_rel_dev_cov, report.max_rel_dev_cross,
    )
    trace = [(s.k, s.dev_state, s.dev_gain, s.dev_cov, s.dev_cross) for s in report.per_step_trace or []]
    if fmt_name == "csv":
        return _csv(EQUIVALENCE_COLUMNS, [*trace, summary])
    payload = {
        "command": "equivalence",
        "scenario": name,
        "steps": report.steps,
        "tolerance": tolerance,
        "passed": report.within(tolerance),
        "max": dict(zip(EQUIVALENCE_COLUMNS[1:], summary[1:])),
        "max_asymmetry": report.max_asymmetry,
        "min_eig_ratio": report.min_eig_ratio,
        "per_step": [dict(zip(EQUIVALENCE_COLUMNS, row)) for row in trace],
    }
    return json.dumps(payload, indent=2) + "\n"


def render_montecarlo(report: McReport, fmt_name: str, name: str, seed: int) -> str:
    if fmt_name == "csv":
        rows = [
            (fname, i, float(v), m.avg_nees)
            for fname, m in report.filters.items()
            for i, v in enumerate(m.rmse)
        ]
        return _csv(MONTECARLO_COLUMNS, rows)
    payload = {
        "command": "montecarlo",
        "scenario": name,
        "runs": report.runs,
        "steps": report.steps,
        "seed": seed,
        "filters": {
            fname: {
                "rmse": m.rmse.tolist(),
                "avg_nees": m.avg_nees,
                "mean_nees": m.mean_nees.tolist(),
                "calibrated": m.calibrated,
                "note": m.note,
            }
            for fname, m in report.filters.items()
        },
    }
    return json.dumps(payload, indent=2) + "\n"


def single_run(scenario: Scenario, filters, weight: SensitivityWeight) -> list[tuple]:
    """Filter one simulated trajectory; rows follow SINGLE_RUN_COLUMNS."""
    records = simulate(scenario, run=0)
    trackers = [FilterTracker(name, scenario, scenario.x0_hat, weight) for name in filters]
    rows = []
    for k, rec in enumerate(records):
        mats = scenario.model.at(k)
        for tracker in trackers:
            try:
                cov = tracker.step(rec.z, mats)
            except (F.FilterError, ValueError) as exc:
                raise F.FilterError(f"{tracker.name} failed at step {k}: {exc}") from exc
            for i in range(scenario.model.n):
                rows.append((rec.k, tracker.name, i, float(rec.x_true[i]),
                             float(tracker.state.x_hat[i]), float(cov[i, i])))
    return rows


def render_single_run(rows, fmt_name: str, name: str) -> str:
    if fmt_name == "csv":
        return _csv(SINGLE_RUN_COLUMNS, rows)
    payload = {"command": "single-run", "scenario": name,
               "records": [dict(zip(SINGLE_RUN_COLUMNS, row)) for row in rows]}
    return json.dumps(payload, indent=2) + "\n"


# -- execution -------------------------------------------------------------------

def execute(config: RunConfig, stdout=None) -> int:
    """Run a validated config, write its output, and return the exit status."""
    stdout = stdout or sys.stdout
    try:
        scenario = build_scenario(config.scenario, config.steps, config.seed)
        weight = resolve_weight(config, scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    status = EXIT_OK
    fmt_name = config.output.format
    try:
        if config.command == "equivalence":
            z = measurements_of(simulate(scenario, run=0))
            report = run_equivalence(scenario, z, weight=weight, keep_trace=True)
            text = render_equivalence(report, fmt_name, config.tolerance, scenario.name)
            if not report.within(config.tolerance):
                print(
                    f"equivalence violated: max deviation {report.max_deviation:.3e} "
                    f"exceeds tolerance {config.tolerance:.3e}",
                    file=sys.stderr,
                )
                status = EXIT_TOLERANCE
        elif config.command == "montecarlo":
            report = run_monte_carlo(scenario, config.runs, config.filters, weight)
            text = render_montecarlo(report, fmt_name, scenario.name, config.seed)
        else:
            text = render_single_run(single_run(scenario, config.filters, weight), fmt_name, scenario.name)
    except (F.FilterError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if config.output.path:
        try:
            Path(config.output.path).write_text(text)
        except OSError as exc:
            print(f"runtime error: cannot write {config.output.path}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        stdout.write(text)
    return status


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="considerkf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run a configured command")
    run.add_argument("--config", required=True, help="path to JSON config")
    run.add_argument("--output", help="output file (overrides config)")
    run.add_argument("--format", choices=FORMATS, help="output format (overrides config)")
    run.add_argument("--tolerance", type=float, help="equivalence tolerance (overrides config)")
    sub.add_parser("fixtures", help="list builtin scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.cmd == "fixtures":
        for name in FIXTURE_NAMES:
            print(name)
        return EXIT_OK
    try:
        config = parse_config(Path(args.config).read_bytes())
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    output = config.output
    if args.output is not None:
        output = replace(output, path=args.output)
    if args.format is not None:
        output = replace(output, format=args.format)
    config = replace(config, output=output)
    if args.tolerance is not None:
        if not math.isfinite(args.tolerance) or args.tolerance < 0:
            print("config error: tolerance: expected a finite non-negative number", file=sys.stderr)
            return EXIT_CONFIG
        config = replace(config, tolerance=args.tolerance)
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())
