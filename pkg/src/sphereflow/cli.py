"""Command-line runner for flow scenarios.

A scenario is a flat TOML file. ``f`` and ``u0`` are polynomials in
``mu = cos(theta)`` given as ascending coefficient lists. ``f`` may also be
``"round"`` (the constant ``n(n-1)``). ``u0`` may also be ``"constant"`` or
``"bubble:EPS"`` / ``"bubble:EPS:-1"``. A ``preset`` key pulls in one of
the built-in scenarios, and the remaining keys override it.

Exit codes: 0 clean, 2 a requested condition fails (``check``), 3 a
condition is indeterminate, 64 usage or parse error, 70 numerical fault.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .conditions import CONDITION_NAMES, ConditionReport, Verdict, condition_report, load_manifest
from .conformal import Dilation, bubble, normalize
from .errors import ConfigError, NonpositiveFMassError, NonpositiveFactorError, RootNotBracketedError, SphereFlowError
from .flow import (
    CSV_COLUMNS,
    BoundsReport,
    ConcentrationReport,
    DiagnosticsRecord,
    FlowParams,
    Outcome,
    Violation,
    bounds_report,
    run,
)
from .sphere import build_grid, critical_exponent, round_curvature

log = logging.getLogger("sphereflow")

EXIT_OK, EXIT_FAIL, EXIT_INDETERMINATE, EXIT_USAGE, EXIT_FAULT = 0, 2, 3, 64, 70
OUTPUT_ENV = "SPHEREFLOW_OUTPUT_DIR"
MAX_DEGREE = 12

PRESETS = {
    "round-fixed-point": dict(n=4, N=256, f="round", u0="constant", t_max=1.0, sample_interval=0.1),
    "perturbed-round": dict(n=4, N=256, f=[12.0], u0=[1.0, 0.05], t_max=2.0, sample_interval=0.01),
    "bubble-check": dict(n=4, N=256, f=[12.0], u0="bubble:0.1", t_max=0.1, sample_interval=0.01),
    "sign-changing": dict(
        n=4, N=64, f=[12.0, 2.0] + [0.0] * 10 + [-24.0], u0="constant", t_max=6.0, sample_interval=0.01
    ),
    "three-sphere": dict(n=3, N=64, f=[6.0, 0.0, -2.0], u0=[1.0, 0.0, 0.1], t_max=3.0, sample_interval=0.01),
    "concentrating": dict(n=10, N=64, f=[90.0, 9.0], u0="bubble:0.3", t_max=5.0, sample_interval=0.01),
}

_FLOW_KEYS = ("dt", "t_max", "vol_tol", "conv_F2", "blowup_umax", "blowup_S", "sample_interval", "max_halvings")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n: int
    N: int
    f: object
    u0: object = "constant"
    params: FlowParams = field(default_factory=FlowParams)
    csv: Optional[str] = None
    json: Optional[str] = None
    manifest: Optional[Path] = None
    sigma: tuple = (1, -1)
    conditions: tuple = CONDITION_NAMES
    strict_morse: bool = False

    def f_profile(self, grid) -> np.ndarray:
        if isinstance(self.f, str):
            return np.full(grid.N, round_curvature(self.n))
        return np.polynomial.polynomial.polyval(grid.nodes, self.f)

    def u0_profile(self, grid) -> np.ndarray:
        if self.u0 == "constant":
            return np.ones(grid.N)
        if isinstance(self.u0, str):
            _, eps, *pole = self.u0.split(":")
            return bubble(Dilation(float(eps), int(pole[0]) if pole else 1), grid)
        return np.polynomial.polynomial.polyval(grid.nodes, self.u0)


ALLOWED_KEYS = {"preset", "n", "N", "f", "u0", "csv", "json", "manifest", "sigma", "conditions", "strict_morse"} | set(
    _FLOW_KEYS
)


def _number(key, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return int(v) if integer else float(v)


def _coefficients(key, v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key}: expected a non-empty list of coefficients")
    if len(v) > MAX_DEGREE + 1:
        raise ConfigError(f"{key}: polynomial degree is limited to {MAX_DEGREE}")
    return tuple(_number(f"{key}[{i}]", c) for i, c in enumerate(v))


def _parse_u0(v):
    if isinstance(v, str):
        if v == "constant":
            return v
        parts = v.split(":")
        if parts[0] == "bubble" and len(parts) in (2, 3):
            try:
                Dilation(float(parts[1]), int(parts[2]) if len(parts) == 3 else 1)
            except ValueError as exc:
                raise ConfigError(f"u0: {exc}") from exc
            return v
        raise ConfigError(f"u0: unrecognized form {v!r}")
    return _coefficients("u0", v)


def _parse_sigma(v):
    if v == "poles":
        return (1, -1)
    if v == "empty" or v == []:
        return ()
    if isinstance(v, list) and all(p in (1, -1) and not isinstance(p, bool) for p in v):
        return tuple(v)
    raise ConfigError(f"sigma: expected 'poles', 'empty' or a list of +1/-1, got {v!r}")


def build_config(raw: dict, name: str = "scenario", base_dir: Path = Path(".")) -> ScenarioConfig:
    """Validate a flat mapping of scenario keys."""
    unknown = set(raw) - ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    data = {}
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigError(f"preset: unknown name {raw['preset']!r} (known: {', '.join(PRESETS)})")
        data.update(PRESETS[raw["preset"]])
    data.update({k: v for k, v in raw.items() if k != "preset"})
    for key in ("n", "N", "f"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}")
    n = _number("n", data["n"], integer=True)
    N = _number("N", data["N"], integer=True)
    if n < 3:
        raise ConfigError("n: must be at least 3")
    if N < 8 or N > 4096:
        raise ConfigError("N: must lie in [8, 4096]")
    f = data["f"]
    if f != "round":
        f = _coefficients("f", f)
    kwargs = {}
    for key in _FLOW_KEYS:
        if key in data:
            kwargs[key] = _number(key, data[key], integer=key == "max_halvings")
    try:
        params = FlowParams(n=n, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = None
    if data.get("manifest") is not None:
        manifest = (base_dir / str(data["manifest"])).resolve()
        if not manifest.is_file():
            raise ConfigError(f"manifest: file not found: {manifest}")
    conds = data.get("conditions", list(CONDITION_NAMES))
    if not isinstance(conds, list) or any(c not in CONDITION_NAMES for c in conds):
        raise ConfigError(f"conditions: expected a list drawn from {list(CONDITION_NAMES)}")
    for key in ("csv", "json"):
        if key in data and not isinstance(data[key], str):
            raise ConfigError(f"{key}: expected a file name")
    strict = data.get("strict_morse", False)
    if not isinstance(strict, bool):
        raise ConfigError("strict_morse: expected true or false")
    return ScenarioConfig(
        name=name,
        n=n,
        N=N,
        f=f,
        u0=_parse_u0(data.get("u0", "constant")),
        params=params,
        csv=data.get("csv"),
        json=data.get("json"),
        manifest=manifest,
        sigma=_parse_sigma(data.get("sigma", "poles")),
        conditions=tuple(conds),
        strict_morse=strict,
    )


def parse_override(text: str) -> tuple:
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key, parsed


def load_config(path, overrides=()) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for text in overrides:
        k, v = parse_override(text)
        raw[k] = v
    return build_config(raw, name=path.stem, base_dir=path.parent)


def _clean(obj):
    """Replace non-finite floats (not valid JSON) with None."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


@dataclass(eq=True)
class RunReport:
    scenario: str
    conditions: ConditionReport
    bounds: Optional[BoundsReport] = None
    outcome: Optional[str] = None
    concentration: Optional[ConcentrationReport] = None
    violations: list = field(default_factory=list)
    fault: Optional[str] = None
    final: Optional[DiagnosticsRecord] = None
    normalization: Optional[dict] = None
    extremes: Optional[dict] = None
    steps: int = 0

    def to_dict(self) -> dict:
        return _clean(
            {
                "scenario": self.scenario,
                "conditions": self.conditions.to_dict(),
                "bounds": None if self.bounds is None else self.bounds.to_dict(),
                "outcome": self.outcome,
                "concentration": None if self.concentration is None else self.concentration.to_dict(),
                "violations": [v.to_dict() for v in self.violations],
                "fault": self.fault,
                "final": None if self.final is None else self.final.to_dict(),
                "normalization": self.normalization,
                "extremes": self.extremes,
                "steps": self.steps,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        def opt(key, kind):
            return None if d.get(key) is None else kind.from_dict(d[key])

        return cls(
            scenario=d["scenario"],
            conditions=ConditionReport.from_dict(d["conditions"]),
            bounds=opt("bounds", BoundsReport),
            outcome=d.get("outcome"),
            concentration=opt("concentration", ConcentrationReport),
            violations=[Violation.from_dict(v) for v in d.get("violations", [])],
            fault=d.get("fault"),
            final=opt("final", DiagnosticsRecord),
            normalization=d.get("normalization"),
            extremes=d.get("extremes"),
            steps=d.get("steps", 0),
        )


def output_dir(default: Optional[Path] = None) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else (default or Path.cwd())


def _paths(config: ScenarioConfig, out: Optional[Path]):
    out = Path(out) if out is not None else output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out / (config.csv or f"{config.name}.csv"), out / (config.json or f"{config.name}.json")


def write_csv(path: Path, trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in trajectory:
            w.writerow([format(v, ".17g") for v in rec.as_row()])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _conditions(config: ScenarioConfig, grid, f) -> ConditionReport:
    manifest = load_manifest(config.manifest) if config.manifest else None
    return condition_report(f, grid, manifest, config.sigma, config.strict_morse)


def _normalization(u, grid, vol) -> Optional[dict]:
    try:
        res = normalize(u, grid)
    except RootNotBracketedError:
        return None
    unit = res.v * vol ** (-1.0 / critical_exponent(grid.n))
    return {"eps": res.eps, "residual": res.residual, "unit_volume_deviation": float(np.abs(unit - 1.0).max())}


def run_scenario(config: ScenarioConfig, out: Optional[Path] = None, backend: Optional[str] = None) -> int:
    """Run the flow, write the CSV time series and the JSON report."""
    grid = build_grid(config.n, config.N)
    f = config.f_profile(grid)
    u0 = config.u0_profile(grid)
    csv_path, json_path = _paths(config, out)
    report = RunReport(config.name, _conditions(config, grid, f))
    try:
        report.bounds = bounds_report(u0, f, grid)
    except (NonpositiveFMassError, NonpositiveFactorError) as exc:
        report.fault = f"{exc.code}: {exc}"
        write_json(json_path, report.to_dict())
        log.error("%s: initial data not admissible: %s", config.name, exc)
        return EXIT_USAGE
    try:
        result = run(u0, f, config.params, grid, backend=backend)
    except SphereFlowError as exc:
        report.fault = f"{exc.code}: {exc}"
        write_json(json_path, report.to_dict())
        log.error("%s: %s", config.name, report.fault)
        return EXIT_FAULT
    write_csv(csv_path, result.trajectory)
    report.bounds = result.bounds
    report.outcome = result.outcome.value
    report.concentration = result.concentration
    report.violations = list(result.violations)
    report.final = result.trajectory[-1]
    report.extremes = dict(result.extremes)
    report.steps = result.steps
    if result.outcome is not Outcome.CONCENTRATING:
        report.normalization = _normalization(result.final.u, grid, result.final.diagnostics.vol)
    code = EXIT_OK
    if result.concentration is not None and result.concentration.status == "SIGNATURE_FAILED":
        report.fault = "CONCENTRATION_SIGNATURE: final state does not match the blow-up signature"
        code = EXIT_FAULT
    elif report.violations:
        report.fault = f"INVARIANT_VIOLATION: {len(report.violations)} sample(s) out of bounds"
        code = EXIT_FAULT
    write_json(json_path, report.to_dict())
    log.info("%s: %s at t=%.6g after %d steps", config.name, report.outcome, result.final.t, result.steps)
    return code


def check_only(config: ScenarioConfig, out: Optional[Path] = None) -> int:
    """Write the condition and bounds report; exit by the requested verdicts."""
    grid = build_grid(config.n, config.N)
    f = config.f_profile(grid)
    u0 = config.u0_profile(grid)
    _, json_path = _paths(config, out)
    report = RunReport(config.name, _conditions(config, grid, f))
    try:
        report.bounds = bounds_report(u0, f, grid)
    except (NonpositiveFMassError, NonpositiveFactorError) as exc:
        report.fault = f"{exc.code}: {exc}"
    write_json(json_path, report.to_dict())
    verdict = report.conditions.verdict(config.conditions)
    log.info("%s: %s", config.name, verdict.value)
    return {Verdict.PASS: EXIT_OK, Verdict.FAIL: EXIT_FAIL, Verdict.INDETERMINATE: EXIT_INDETERMINATE}[verdict]


def _batch_one(args) -> tuple:
    path, overrides, out = args
    try:
        config = load_config(path, overrides)
        return str(path), run_scenario(config, out)
    except ConfigError as exc:
        log.error("%s: %s", path, exc)
        return str(path), EXIT_USAGE


def batch(directory, overrides=(), workers: Optional[int] = None) -> int:
    """Run every ``*.toml`` in ``directory``; outputs go to one subdirectory per scenario."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    paths = sorted(directory.glob("*.toml"))
    if not paths:
        raise ConfigError(f"no scenario files in {directory}")
    root = output_dir()
    jobs = [(p, tuple(overrides), root / p.stem) for p in paths]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        codes = dict(pool.map(_batch_one, jobs))
    for p, c in codes.items():
        log.info("%s -> exit %d", p, c)
    return max(codes.values())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="set a config key (TOML value)"
    )
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="sphereflow", description="Scalar curvature flow experiments on S^n.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run the flow for one scenario")
    r.add_argument("config")
    c = sub.add_parser("check", parents=[common], help="evaluate conditions and bounds only")
    c.add_argument("config")
    b = sub.add_parser("batch", parents=[common], help="run every scenario in a directory")
    b.add_argument("directory")
    b.add_argument("--workers", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s"
    )
    try:
        if args.command == "batch":
            return batch(args.directory, args.override, args.workers)
        config = load_config(args.config, args.override)
        if args.command == "run":
            return run_scenario(config)
        return check_only(config)
    except ConfigError as exc:
        print(f"sphereflow: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
