"""Config-driven batch runner.

A run is described by one YAML file::

    scenario:
      builtin: section5              # or: custom: {...}, see below
      params: {eta1: 1, eta2: 1, epsilon: 0.05}
    working_interval: [-30, 30]      # optional for builtins
    override_gates: false
    tolerances:
      quadrature: {tail_tol: 1.0e-9, panel_rule: flow, panel_tol: 1.0e-10}
      picard: {grid_spacing: 0.1, stop_tol: 1.0e-6, max_iter: 60, rtol: 1.0e-9}
      integrator: {rtol: 1.0e-10, atol: 1.0e-10, knot_spacing: 0.25}
      residual: 1.0e-4
      dichotomy_slack: 1.0e-6
      bound_slack: 1.0e-3
    suites:
      - suite: conjugacy_residual
        initial_conditions: [{t: 0, x: [0.3, -0.2]}]
        t_grid: {start: -3, stop: 3, num: 13}
      - suite: roundtrip
        points: {t: [-2, 0, 2], x: [[0, 0], [1, -1]]}
      - suite: bound
        points: [{t: 0, x: [1, 1]}]
      - suite: holder
        t: 0
        base: [0.3, -0.2]
        direction: [1, 0]
        scales: [0.5, 0.25, 0.125, 0.0625, 0.03125]
      - suite: gronwall
        pairs: 10
      - suite: probe
        v: [1, 1]
        horizon: 5
        threshold: 10
    output:
      report: report.json
      csv: details.csv

A custom scenario replaces ``builtin``/``params`` by::

    custom:
      dimension: 2
      A: [["-(1 + 1/((1+t^2)*(pi/2+atan(t))))", "0"], ["0", "..."]]
      f: ["0.05*sin(x1+t)", "0.05*cos(x1+t)"]
      mu: "(2/pi)*exp(t)*(pi/2+atan(t))"
      mu_prime: "..."
      log_mu: "..."                  # optional, defaults to ln(mu)
      projector: [[1, 0], [0, 0]]
      constants: {K: 1, alpha: 1, beta: 0.1, gamma: 0.1}   # or: constants: fit

Point sets are either a list of ``{t, x}`` records or a product
``{t: [...], x: [[...], ...]}``; time grids are a list or
``{start, stop, num}``.  Unknown keys anywhere are errors.

Exit codes: 0 when every check passes, 1 when a suite or the dichotomy
verification fails, 2 for configuration, parse and gate errors, 3 for
numerical failures.  A report is written whenever its path is known; runs
that stop early carry ``failed_at`` and ``error``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from .analysis import (
    DEFAULT_BOUND_SLACK,
    DEFAULT_RESIDUAL_TOL,
    PreconditionError,
    SuiteResult,
    bound_suite,
    conjugacy_residual_suite,
    gronwall_suite,
    holder_suite,
    no_bounded_solution_probe,
    roundtrip_suite,
    write_details_csv,
)
from .conjugacy import ConvergenceError, GateError, PicardConfig, QuadratureConfig
from .dichotomy import (
    DichotomySpec,
    FitError,
    fit_dichotomy_constants,
    sample_pair_grid,
)
from .expression import Expression, ExpressionError, parse_expression
from .flows import NonlinearTerm, estimate_perturbation_constants
from .growth_rates import GrowthRate, GrowthRateEvaluationError
from .linear_evolution import (
    EvolutionCache,
    IntegrationError,
    IntegratorConfig,
    IntervalError,
    LinearSystem,
    estimate_norm_bound,
)
from .scenarios import BUILTIN_SCENARIOS, Scenario, build_scenario

__all__ = ["ConfigError", "RunConfig", "SuiteSpec", "load_config", "parse_config", "build_run_scenario", "run", "main"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
SUITE_NAMES = ("conjugacy_residual", "roundtrip", "bound", "holder", "gronwall", "probe")
FIT_SAMPLES = 400


class ConfigError(ValueError):
    """Invalid run configuration."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _mapping(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(value: dict, where: str, allowed: Sequence[str], required: Sequence[str] = ()) -> None:
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    missing = [k for k in required if k not in value]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}")


def _number(value: Any, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(f"{where}: expected a {'positive ' if positive else ''}finite number, got {value!r}")
    return value


def _vector(value: Any, where: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a nonempty list of numbers")
    return [_number(v, f"{where}[{i}]") for i, v in enumerate(value)]


def _time_grid(value: Any, where: str) -> list[float]:
    if isinstance(value, dict):
        _check_keys(value, where, ("start", "stop", "num"), ("start", "stop", "num"))
        num = value["num"]
        if not isinstance(num, int) or num < 1:
            raise ConfigError(f"{where}.num: expected a positive integer")
        return np.linspace(_number(value["start"], f"{where}.start"), _number(value["stop"], f"{where}.stop"), num).tolist()
    return _vector(value, where)


def _point_set(value: Any, where: str) -> list[tuple[float, list[float]]]:
    if isinstance(value, dict):
        _check_keys(value, where, ("t", "x"), ("t", "x"))
        ts = _time_grid(value["t"], f"{where}.t")
        if not isinstance(value["x"], list) or not value["x"]:
            raise ConfigError(f"{where}.x: expected a nonempty list of vectors")
        xs = [_vector(x, f"{where}.x[{i}]") for i, x in enumerate(value["x"])]
        return [(t, x) for t in ts for x in xs]
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a list of {{t, x}} records or a {{t, x}} product")
    out = []
    for i, rec in enumerate(value):
        rec = _mapping(rec, f"{where}[{i}]")
        _check_keys(rec, f"{where}[{i}]", ("t", "x"), ("t", "x"))
        out.append((_number(rec["t"], f"{where}[{i}].t"), _vector(rec["x"], f"{where}[{i}].x")))
    return out


_SUITE_KEYS = {
    "conjugacy_residual": (("initial_conditions", "t_grid", "mirror", "tol"), ("initial_conditions", "t_grid")),
    "roundtrip": (("points", "tol"), ("points",)),
    "bound": (("points", "slack"), ("points",)),
    "holder": (("t", "base", "direction", "scales"), ("base", "direction", "scales")),
    "gronwall": (("pairs", "horizon", "seed", "slack"), ()),
    "probe": (("v", "horizon", "threshold"), ("v", "horizon", "threshold")),
}


@dataclass
class SuiteSpec:
    """One requested suite with its validated arguments."""

    suite: str
    args: dict = field(default_factory=dict)


def _parse_suite(value: Any, where: str) -> SuiteSpec:
    value = _mapping(value, where)
    name = value.get("suite")
    if name not in SUITE_NAMES:
        raise ConfigError(f"{where}.suite: expected one of {list(SUITE_NAMES)}, got {name!r}")
    allowed, required = _SUITE_KEYS[name]
    body = {k: v for k, v in value.items() if k != "suite"}
    _check_keys(body, where, allowed, required)
    args: dict[str, Any] = {}
    for key, raw in body.items():
        at = f"{where}.{key}"
        if key in ("initial_conditions", "points"):
            args[key] = _point_set(raw, at)
        elif key == "t_grid":
            args[key] = _time_grid(raw, at)
        elif key == "scales":
            args[key] = _vector(raw, at)
        elif key in ("base", "direction", "v"):
            args[key] = _vector(raw, at)
        elif key in ("pairs", "seed"):
            if isinstance(raw, bool) or not isinstance(raw, int) or raw < (1 if key == "pairs" else 0):
                raise ConfigError(f"{at}: expected a nonnegative integer")
            args[key] = raw
        elif key == "mirror":
            if not isinstance(raw, bool):
                raise ConfigError(f"{at}: expected true or false")
            args[key] = raw
        elif key == "t":
            args[key] = _number(raw, at)
        else:
            args[key] = _number(raw, at, positive=True)
    return SuiteSpec(name, args)


@dataclass
class Tolerances:
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    picard: PicardConfig = field(default_factory=PicardConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    residual: float = DEFAULT_RESIDUAL_TOL
    dichotomy_slack: float = 1e-6
    bound_slack: float = DEFAULT_BOUND_SLACK

    def tightened(self, factor: float) -> "Tolerances":
        """Numerical tolerances divided by ``factor``; pass thresholds are unchanged."""
        return replace(
            self,
            quadrature=self.quadrature.tightened(factor),
            picard=self.picard.tightened(factor),
            integrator=self.integrator.tightened(factor),
        )


def _dataclass_from(cls, value: Any, where: str):
    """Build a tolerance dataclass, typing each entry after its default."""
    value = _mapping(value, where)
    defaults = cls()
    _check_keys(value, where, [f.name for f in fields(cls)])
    kwargs = {}
    for key, raw in value.items():
        default = getattr(defaults, key)
        if isinstance(default, str):
            if not isinstance(raw, str):
                raise ConfigError(f"{where}.{key}: expected a string")
            kwargs[key] = raw
        elif isinstance(default, int):
            if isinstance(raw, bool) or not isinstance(raw, int) or raw < 1:
                raise ConfigError(f"{where}.{key}: expected a positive integer")
            kwargs[key] = raw
        else:
            kwargs[key] = _number(raw, f"{where}.{key}", positive=True)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_tolerances(value: Any) -> Tolerances:
    value = _mapping(value, "tolerances")
    _check_keys(value, "tolerances", [f.name for f in fields(Tolerances)])
    tol = Tolerances()
    updates: dict[str, Any] = {}
    for key, cls in (("quadrature", QuadratureConfig), ("picard", PicardConfig), ("integrator", IntegratorConfig)):
        if key in value:
            updates[key] = _dataclass_from(cls, value[key], f"tolerances.{key}")
    for key in ("residual", "dichotomy_slack", "bound_slack"):
        if key in value:
            updates[key] = _number(value[key], f"tolerances.{key}", positive=key != "dichotomy_slack")
    return replace(tol, **updates)


@dataclass
class CustomScenario:
    """Expressions and declared (or to-be-fitted) constants of a user system."""

    dimension: int
    A: list[list[Expression]]
    f: list[Expression]
    mu: Expression
    mu_prime: Expression
    log_mu: Expression | None
    projector: np.ndarray
    constants: dict[str, float] | None  # None means "fit"


def _parse_custom(value: Any) -> CustomScenario:
    where = "scenario.custom"
    value = _mapping(value, where)
    _check_keys(
        value, where, ("dimension", "A", "f", "mu", "mu_prime", "log_mu", "projector", "constants"),
        ("dimension", "A", "f", "mu", "mu_prime", "projector", "constants"),
    )
    n = value["dimension"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError(f"{where}.dimension: expected a positive integer")

    def expr(src: Any, at: str, dim: int = n) -> Expression:
        if isinstance(src, (int, float)) and not isinstance(src, bool):
            src = repr(float(src))
        if not isinstance(src, str):
            raise ConfigError(f"{at}: expected an expression string")
        try:
            return parse_expression(src, dimension=dim)
        except ExpressionError as exc:
            raise ConfigError(f"{at}: {exc}") from None

    rows = value["A"]
    if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise ConfigError(f"{where}.A: expected an {n}x{n} list of expressions")
    A = [[expr(e, f"{where}.A[{i}][{j}]") for j, e in enumerate(r)] for i, r in enumerate(rows)]
    if not isinstance(value["f"], list) or len(value["f"]) != n:
        raise ConfigError(f"{where}.f: expected {n} expressions")
    f = [expr(e, f"{where}.f[{i}]") for i, e in enumerate(value["f"])]
    # the growth rate depends on t only
    rates = {key: expr(value[key], f"{where}.{key}", 0) for key in ("mu", "mu_prime", "log_mu") if key in value}
    proj_raw = value["projector"]
    try:
        proj = np.array(proj_raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.projector: expected an {n}x{n} numeric matrix") from None
    if proj.shape != (n, n):
        raise ConfigError(f"{where}.projector: expected an {n}x{n} numeric matrix")
    if not np.allclose(proj @ proj, proj, atol=1e-9):
        raise ConfigError(f"{where}.projector: matrix is not idempotent")
    constants_raw = value["constants"]
    if constants_raw == "fit":
        constants = None
    else:
        constants_raw = _mapping(constants_raw, f"{where}.constants")
        _check_keys(constants_raw, f"{where}.constants", ("K", "alpha", "beta", "gamma"), ("K", "alpha", "beta", "gamma"))
        constants = {k: _number(v, f"{where}.constants.{k}") for k, v in constants_raw.items()}
        if constants["K"] <= 0 or constants["alpha"] <= 0 or constants["beta"] < 0 or constants["gamma"] < 0:
            raise ConfigError(f"{where}.constants: need K, alpha > 0 and beta, gamma >= 0")
    return CustomScenario(
        n, A, f, rates["mu"], rates["mu_prime"], rates.get("log_mu"), proj, constants,
    )


@dataclass
class RunConfig:
    """Validated run configuration; ``raw`` is echoed into the report."""

    builtin: str | None
    params: dict[str, float]
    custom: CustomScenario | None
    working_interval: tuple[float, float] | None
    override_gates: bool
    tolerances: Tolerances
    suites: list[SuiteSpec]
    report: str | None
    csv: str | None
    raw: dict = field(default_factory=dict)


TOP_KEYS = ("scenario", "working_interval", "override_gates", "tolerances", "suites", "output")


def parse_config(data: Any) -> RunConfig:
    """Validate a configuration mapping, raising :class:`ConfigError` with the offending key path."""
    data = _mapping(data, "config")
    _check_keys(data, "config", TOP_KEYS, ("scenario",))
    scen = _mapping(data["scenario"], "scenario")
    _check_keys(scen, "scenario", ("builtin", "params", "custom"))
    builtin, params, custom = None, {}, None
    if ("builtin" in scen) == ("custom" in scen):
        raise ConfigError("scenario: give exactly one of 'builtin' and 'custom'")
    if "builtin" in scen:
        builtin = scen["builtin"]
        if builtin not in BUILTIN_SCENARIOS:
            raise ConfigError(f"scenario.builtin: unknown label {builtin!r}; builtin: {sorted(BUILTIN_SCENARIOS)}")
        raw_params = _mapping(scen.get("params", {}) or {}, "scenario.params")
        params = {k: _number(v, f"scenario.params.{k}") for k, v in raw_params.items()}
    else:
        if "params" in scen:
            raise ConfigError("scenario.params: only valid with 'builtin'")
        custom = _parse_custom(scen["custom"])
    interval = None
    if "working_interval" in data:
        iv = _vector(data["working_interval"], "working_interval")
        if len(iv) != 2 or not iv[0] < iv[1]:
            raise ConfigError("working_interval: expected [t_min, t_max] with t_min < t_max")
        interval = (iv[0], iv[1])
    elif custom is not None:
        raise ConfigError("working_interval: required for custom scenarios")
    override = data.get("override_gates", False)
    if not isinstance(override, bool):
        raise ConfigError("override_gates: expected true or false")
    tolerances = _parse_tolerances(data["tolerances"]) if "tolerances" in data else Tolerances()
    suites_raw = data.get("suites", []) or []
    if not isinstance(suites_raw, list):
        raise ConfigError("suites: expected a list")
    suites = [_parse_suite(s, f"suites[{i}]") for i, s in enumerate(suites_raw)]
    out = _mapping(data.get("output", {}) or {}, "output")
    _check_keys(out, "output", ("report", "csv"))
    for key in ("report", "csv"):
        if key in out and not isinstance(out[key], str):
            raise ConfigError(f"output.{key}: expected a path string")
    return RunConfig(builtin, params, custom, interval, override, tolerances, suites, out.get("report"), out.get("csv"), data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return parse_config(data)


# --------------------------------------------------------------------------
# scenario construction
# --------------------------------------------------------------------------


def _scalar_fn(e: Expression) -> Callable:
    def fn(t):
        return e.evaluate(t)

    return fn


def _custom_scenario(cfg: RunConfig) -> Scenario:
    c = cfg.custom
    n = c.dimension
    interval = cfg.working_interval
    log_mu = c.log_mu
    rate = GrowthRate(
        _scalar_fn(c.mu),
        _scalar_fn(c.mu_prime),
        _scalar_fn(log_mu) if log_mu is not None else (lambda t: np.log(c.mu.evaluate(t))),
        "custom",
    )

    def coeff(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, n, n))
        for i in range(n):
            for j in range(n):
                out[:, i, j] = c.A[i][j].evaluate(t)
        return out

    def f(t, x):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([comp.evaluate(t, x) for comp in c.f])

    system = LinearSystem(n, coeff, estimate_norm_bound(coeff, interval), "custom", interval, norm_bound_estimated=True)
    projector = c.projector
    notes = ["norm bound M estimated by sampling the working interval"]
    estimated: dict[str, bool] = {"K": False, "alpha": False, "beta": False, "gamma": False, "M": True}
    if c.constants is None:
        cache = EvolutionCache(system, cfg.tolerances.integrator)
        lo, hi = max(interval[0], -5.0), min(interval[1], 5.0)
        K, alpha, _ = fit_dichotomy_constants(cache, lambda s: projector, rate, sample_pair_grid(lo, hi, 200, seed=0))
        rng = np.random.default_rng(0)
        ts = rng.uniform(interval[0], interval[1], FIT_SAMPLES)
        xs = rng.uniform(-5.0, 5.0, (FIT_SAMPLES, n))
        term = estimate_perturbation_constants(f, rate, ts, xs)
        constants = {"K": max(K, 1.0), "alpha": alpha, "beta": term.beta, "gamma": term.gamma}
        estimated.update(K=True, alpha=True, beta=True, gamma=True)
        notes.append("K, alpha, beta, gamma estimated by fitting; gates evaluated on estimates")
    else:
        constants = c.constants
    spec = DichotomySpec(lambda s: projector, constants["K"], constants["alpha"], rate, constant_projector=True)
    term = NonlinearTerm(f, constants["beta"], constants["gamma"], rate, estimated=c.constants is None)
    return Scenario(
        label="custom",
        system=system,
        rate=rate,
        spec=spec,
        perturbation=term,
        notes=notes,
        params={**constants, "estimated": estimated},
        override_gates=cfg.override_gates,
    )


def build_run_scenario(cfg: RunConfig) -> Scenario:
    """Scenario described by ``cfg``; gate violations raise :class:`GateError`."""
    if cfg.custom is not None:
        return _custom_scenario(cfg)
    params = dict(cfg.params)
    if cfg.working_interval is not None:
        params["interval"] = cfg.working_interval
    if cfg.builtin == "section5":
        params["override_gates"] = cfg.override_gates
    try:
        return build_scenario(cfg.builtin, **params)
    except TypeError as exc:
        raise ConfigError(f"scenario.params: {exc}") from None


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def _run_suite(spec: SuiteSpec, scenario: Scenario, problem, cache, tol: Tolerances):
    a = spec.args
    if spec.suite == "probe":
        return no_bounded_solution_probe(cache, scenario.spec, a["v"], a["horizon"], a["threshold"])
    if problem is None:
        raise ConfigError(f"suite {spec.suite!r} needs a perturbed scenario")
    if spec.suite == "conjugacy_residual":
        return conjugacy_residual_suite(
            problem, a["initial_conditions"], a["t_grid"], a.get("tol", tol.residual), a.get("mirror", True)
        )
    if spec.suite == "roundtrip":
        return roundtrip_suite(problem, a["points"], a.get("tol", tol.residual))
    if spec.suite == "bound":
        return bound_suite(problem, a["points"], a.get("slack", tol.bound_slack))
    if spec.suite == "holder":
        return holder_suite(problem, a.get("t", 0.0), a["base"], a["direction"], a["scales"])[2]
    return gronwall_suite(
        problem, pairs=a.get("pairs", 10), horizon=a.get("horizon", 3.0), seed=a.get("seed", 0), slack=a.get("slack", 1e-6)
    )


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _scenario_summary(scenario: Scenario) -> dict:
    out = {
        "label": scenario.label,
        "params": scenario.params,
        "interval": list(scenario.system.interval),
        "rate": scenario.rate.label,
        "K": scenario.spec.K,
        "alpha": scenario.spec.alpha,
        "norm_bound": scenario.system.norm_bound,
    }
    if scenario.perturbation is not None:
        out.update(beta=scenario.perturbation.beta, gamma=scenario.perturbation.gamma)
        out["gate_value"] = 6 * scenario.spec.K * scenario.perturbation.gamma / scenario.spec.alpha
    return out


def run(cfg: RunConfig, tighten: float = 1.0, csv_path: str | None = None, report_path: str | None = None) -> tuple[int, dict]:
    """Execute ``cfg``; returns the exit code and the report mapping, and writes the outputs."""
    report: dict[str, Any] = {
        "scenario": None,
        "config_echo": cfg.raw,
        "dichotomy": None,
        "suites": [],
        "notes": [],
    }
    if tighten != 1.0:
        report["notes"].append(f"numerical tolerances tightened by a factor {tighten:g}")
    tol = cfg.tolerances.tightened(tighten) if tighten != 1.0 else cfg.tolerances
    report_path = report_path or cfg.report
    csv_path = csv_path or cfg.csv
    results: list[SuiteResult] = []
    stage = "scenario"
    code = EXIT_OK
    try:
        scenario = build_run_scenario(cfg)
        report["scenario"] = _scenario_summary(scenario)
        report["notes"].extend(scenario.notes)
        stage = "dichotomy"
        cache = scenario.cache(tol.integrator)
        dich = scenario.verify(cache, slack=tol.dichotomy_slack, fit=True)
        report["dichotomy"] = dich.to_dict()
        if not dich.passed:
            code = EXIT_FAIL
        problem = None
        if scenario.perturbation is not None:
            stage = "problem"
            problem = scenario.problem(quad=tol.quadrature, picard=tol.picard, cache=cache)
        for i, spec in enumerate(cfg.suites):
            stage = f"suites[{i}]:{spec.suite}"
            result = _run_suite(spec, scenario, problem, cache, tol)
            if isinstance(result, SuiteResult):
                results.append(result)
                entry = result.to_dict()
            else:
                entry = {"suite_name": "probe", "pass": result.passed, **result.to_dict()}
            report["suites"].append(entry)
            if not entry["pass"]:
                code = EXIT_FAIL
    except (ConfigError, GateError, ExpressionError, IntervalError, PreconditionError) as exc:
        code = EXIT_CONFIG
        report.update(failed_at=stage, error=f"{type(exc).__name__}: {exc}")
        if isinstance(exc, GateError):
            report["gate"] = exc.gate
    except (IntegrationError, ConvergenceError, FitError, GrowthRateEvaluationError, FloatingPointError) as exc:
        code = EXIT_NUMERICAL
        report.update(failed_at=stage, error=f"{type(exc).__name__}: {exc}")
    report["exit_code"] = code
    report = _jsonable(report)
    report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    if report_path:
        Path(report_path).write_text(json.dumps(report, indent=2) + "\n")
    if csv_path and results:
        write_details_csv(results, csv_path)
    return code, report


def _summary_lines(report: dict) -> list[str]:
    lines = []
    if report.get("dichotomy") is not None:
        d = report["dichotomy"]
        lines.append(f"dichotomy: {'pass' if d.get('passed') else 'FAIL'}")
    for s in report["suites"]:
        worst = s.get("worst_residual")
        extra = f" worst={worst:.3e} bound={s['bound_used']:.3e}" if worst is not None else ""
        lines.append(f"{s['suite_name']}: {'pass' if s['pass'] else 'FAIL'}{extra}")
    if "failed_at" in report:
        lines.append(f"stopped at {report['failed_at']}: {report['error']}")
    return lines


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="algdich", description="Run dichotomy and conjugacy checks from a YAML config.")
    parser.add_argument("config", help="path of the YAML run configuration")
    parser.add_argument("--override-gates", action="store_true", help="run even when the contraction gate fails")
    parser.add_argument("--csv", help="write per-sample suite records to this CSV file")
    parser.add_argument("--report", help="write the JSON report here instead of the configured path")
    parser.add_argument("--tighten", type=float, default=1.0, metavar="FACTOR", help="divide all numerical tolerances by FACTOR")
    args = parser.parse_args(argv)
    if not args.tighten > 0:
        print("error: --tighten must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if args.report:
            Path(args.report).write_text(json.dumps({"failed_at": "config", "error": str(exc), "exit_code": EXIT_CONFIG}) + "\n")
        return EXIT_CONFIG
    if args.override_gates:
        cfg = replace(cfg, override_gates=True)
    code, report = run(cfg, tighten=args.tighten, csv_path=args.csv, report_path=args.report)
    for line in _summary_lines(report):
        print(line)
    if "gate" in report:
        print(f"gate violated: {report['gate']}", file=sys.stderr)
    return code
