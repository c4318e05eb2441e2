"""Property suites that certify the conjugacy numerically.

Every suite returns a :class:`SuiteResult` whose ``passed`` flag is exactly
``worst_residual <= bound_used``.  Per-sample records are kept in
``details`` and can be written as CSV with :func:`write_details_csv`.

* :func:`conjugacy_residual_suite` checks that ``H`` carries nonlinear
  solutions to linear ones and that ``G`` carries linear solutions back.
* :func:`roundtrip_suite` checks ``G(t, H(t, x)) = x`` and ``H(t, G(t, y)) = y``.
* :func:`bound_suite` checks the displacement bound ``2 K beta / alpha``.
* :func:`holder_suite` checks ``|H(t,x) - H(t,x')| <= p |x - x'|^q`` and the
  ``G`` analogue over shrinking separations, and fits the observed exponent.
* :func:`gronwall_suite` runs :func:`~algdich.flows.gronwall_check` on
  random initial pairs.
* :func:`no_bounded_solution_probe` certifies that nonzero linear solutions
  grow beyond a threshold in the direction the dichotomy predicts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conjugacy import (
    LAMBDA_MARGIN,
    ConjugacyProblem,
    GateError,
    HolderConstants,
    forward_map_H_many,
    inverse_map_G_many,
    theoretical_holder_constants,
)
from .dichotomy import DichotomySpec
from .flows import gronwall_check, nonlinear_flow_many
from .linear_evolution import EvolutionCache

__all__ = [
    "SuiteResult",
    "ProbeResult",
    "PreconditionError",
    "DEFAULT_RESIDUAL_TOL",
    "SCALAR_RESIDUAL_TOL",
    "DEFAULT_BOUND_SLACK",
    "conjugacy_residual_suite",
    "roundtrip_suite",
    "bound_suite",
    "holder_suite",
    "gronwall_suite",
    "no_bounded_solution_probe",
    "write_details_csv",
]

DEFAULT_RESIDUAL_TOL = 1e-4
SCALAR_RESIDUAL_TOL = 1e-8
DEFAULT_BOUND_SLACK = 1e-3
MIN_HOLDER_SCALES = 5


class PreconditionError(ValueError):
    """A suite was called with inputs outside its domain."""


@dataclass
class SuiteResult:
    """Outcome of one property suite.

    ``details`` holds one record per sample with keys ``kind``, ``t``,
    ``inputs``, ``residual``, ``bound`` and ``pass``; ``extra`` carries
    suite-specific diagnostics such as fitted exponents.
    """

    suite_name: str
    samples: int
    worst_residual: float
    bound_used: float
    passed: bool
    details: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_details(cls, name: str, details: list[dict], bound: float, extra: dict | None = None) -> "SuiteResult":
        worst = max((d["residual"] for d in details), default=0.0)
        return cls(name, len(details), float(worst), float(bound), bool(worst <= bound), details, extra or {})

    def worst(self, kind: str) -> float:
        """Largest residual among the records of one ``kind``."""
        return max((d["residual"] for d in self.details if d["kind"] == kind), default=0.0)

    def to_dict(self) -> dict:
        return {
            "suite_name": self.suite_name,
            "samples": self.samples,
            "worst_residual": self.worst_residual,
            "bound_used": self.bound_used,
            "pass": self.passed,
            "details": self.details,
            "extra": self.extra,
        }


def _record(kind: str, t: float, inputs, residual: float, bound: float) -> dict:
    residual = float(residual)
    return {
        "kind": kind,
        "t": float(t),
        "inputs": [float(v) for v in np.ravel(inputs)],
        "residual": residual,
        "bound": float(bound),
        "pass": bool(residual <= bound),
    }


def _points(points) -> tuple[np.ndarray, np.ndarray]:
    ts = np.array([float(t) for t, _ in points])
    xs = np.array([np.asarray(x, dtype=float) for _, x in points])
    return ts, xs.reshape(len(ts), -1)


def conjugacy_residual_suite(
    problem: ConjugacyProblem,
    initial_conditions: Sequence[tuple[float, Sequence[float]]],
    t_grid: Sequence[float],
    tol: float = DEFAULT_RESIDUAL_TOL,
    mirror: bool = True,
) -> SuiteResult:
    """Residuals of the two conjugacy identities along solutions.

    ``kind="H"``: ``|H(t, X(t,t0,x0)) - T(t,t0) H(t0,x0)|``.
    ``kind="G"``: ``|G(t, Y(t,t0,y0)) - X(t,t0,G(t0,y0))|`` with ``y0 = x0``.
    """
    t0s, x0s = _points(initial_conditions)
    t_grid = np.asarray(t_grid, dtype=float)
    m, k = len(t0s), len(t_grid)
    cache = problem.cache
    targets = np.broadcast_to(t_grid, (m, k))
    details: list[dict] = []

    xs = nonlinear_flow_many(problem, t0s, x0s, targets)
    h_path = forward_map_H_many(problem, np.repeat(t_grid[None, :], m, axis=0).ravel(), xs.reshape(m * k, -1))
    h_path = h_path.reshape(m, k, -1)
    h0 = forward_map_H_many(problem, t0s, x0s)
    for i in range(m):
        for j, t in enumerate(t_grid):
            linear = cache.propagate(float(t), float(t0s[i]), h0[i])
            details.append(_record("H", t, [t0s[i], *x0s[i]], np.linalg.norm(h_path[i, j] - linear), tol))

    if mirror:
        ys = np.stack([np.stack([cache.propagate(float(t), float(t0s[i]), x0s[i]) for t in t_grid]) for i in range(m)])
        g_path = inverse_map_G_many(problem, np.repeat(t_grid[None, :], m, axis=0).ravel(), ys.reshape(m * k, -1))
        g_path = g_path.reshape(m, k, -1)
        g0 = inverse_map_G_many(problem, t0s, x0s)
        back = nonlinear_flow_many(problem, t0s, g0, targets)
        for i in range(m):
            for j, t in enumerate(t_grid):
                details.append(_record("G", t, [t0s[i], *x0s[i]], np.linalg.norm(g_path[i, j] - back[i, j]), tol))
    return SuiteResult.from_details("conjugacy_residual", details, tol)


def roundtrip_suite(
    problem: ConjugacyProblem, points: Sequence[tuple[float, Sequence[float]]], tol: float = DEFAULT_RESIDUAL_TOL
) -> SuiteResult:
    """``|G(t, H(t, x)) - x|`` (kind ``"GH"``) and ``|H(t, G(t, x)) - x|`` (kind ``"HG"``)."""
    ts, xs = _points(points)
    hx = forward_map_H_many(problem, ts, xs)
    ghx = inverse_map_G_many(problem, ts, hx)
    gx = inverse_map_G_many(problem, ts, xs)
    hgx = forward_map_H_many(problem, ts, gx)
    details = [_record("GH", t, x, np.linalg.norm(r - x), tol) for t, x, r in zip(ts, xs, ghx)]
    details += [_record("HG", t, x, np.linalg.norm(r - x), tol) for t, x, r in zip(ts, xs, hgx)]
    return SuiteResult.from_details("roundtrip", details, tol)


def bound_suite(
    problem: ConjugacyProblem,
    points: Sequence[tuple[float, Sequence[float]]],
    slack: float = DEFAULT_BOUND_SLACK,
) -> SuiteResult:
    """Displacements ``|H(t,x) - x|`` and ``|G(t,x) - x|`` against ``2 K beta / alpha + slack``."""
    ts, xs = _points(points)
    bound = problem.displacement_bound + slack
    hx = forward_map_H_many(problem, ts, xs)
    gx = inverse_map_G_many(problem, ts, xs)
    details = [_record("H", t, x, np.linalg.norm(r - x), bound) for t, x, r in zip(ts, xs, hx)]
    details += [_record("G", t, x, np.linalg.norm(r - x), bound) for t, x, r in zip(ts, xs, gx)]
    return SuiteResult.from_details(
        "bound", details, bound, {"displacement_bound": problem.displacement_bound, "slack": slack}
    )


def _loglog_fit(scales: np.ndarray, dists: np.ndarray) -> tuple[float | None, float | None]:
    """Least-squares fit of ``log d = log c + e log s``; ``None`` when some ``d`` vanishes."""
    if np.any(dists <= 0):
        return None, None
    exponent, intercept = np.polyfit(np.log(scales), np.log(dists), 1)
    return float(exponent), float(math.exp(intercept))


def holder_suite(
    problem: ConjugacyProblem,
    t: float,
    base: Sequence[float],
    direction: Sequence[float],
    scales: Sequence[float],
    constants: HolderConstants | None = None,
) -> tuple[float | None, float | None, SuiteResult]:
    """Hoelder inequality for ``H`` and ``G`` along ``base + scale * direction``.

    Each record's residual is ``d_k / (p scale_k^q)``, so the suite passes
    when every ratio is at most one.  When ``gamma = 0`` the perturbation
    does not depend on the state, ``H`` and ``G`` are translations, and the
    constants ``p = q = 1`` are used.  Returns the fitted exponent and
    prefactor of ``H`` with the suite; the ``G`` fit is in ``extra``.  A
    vanishing ``d_k`` makes the fit degenerate, which is reported as ``None``.
    """
    scales = np.asarray(scales, dtype=float)
    if len(scales) < MIN_HOLDER_SCALES:
        raise PreconditionError(f"at least {MIN_HOLDER_SCALES} scales are needed")
    if np.any(scales <= 0) or np.any(scales >= 1) or np.any(np.diff(scales) >= 0):
        raise PreconditionError("scales must be decreasing and lie in (0, 1)")
    direction = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise PreconditionError("direction must be nonzero")
    direction = direction / norm
    base = np.asarray(base, dtype=float)
    problem.require_holder_gate()
    notes: list[str] = []
    if constants is None:
        if problem.gamma == 0.0:
            K, alpha, beta = problem.K, problem.alpha, problem.beta
            lam = 4 * K * beta / alpha * (1 + LAMBDA_MARGIN)
            seps = (float(scales[-1]), float(scales[0]))
            constants = HolderConstants(1 + 4 * K * beta / alpha, 1.0, 1 + lam, 1.0, math.nan, lam, seps)
            notes.append("gamma = 0: H and G are translations; exponents q = q' = 1 with the gamma-free prefactors")
        else:
            constants = theoretical_holder_constants(problem, t, (float(scales[-1]), float(scales[0])))
    if constants.p_prime is None or constants.q_prime is None:
        raise GateError("G-side constants", "p' and q' are undefined for this problem")

    pts = np.vstack([base[None, :], base[None, :] + scales[:, None] * direction[None, :]])
    ts = np.full(len(pts), float(t))
    details: list[dict] = []
    fits = {}
    for kind, values, p, q in (
        ("H", forward_map_H_many(problem, ts, pts), constants.p, constants.q),
        ("G", inverse_map_G_many(problem, ts, pts), constants.p_prime, constants.q_prime),
    ):
        dists = np.linalg.norm(values[1:] - values[0], axis=1)
        for s, d in zip(scales, dists):
            limit = p * s**q
            rec = _record(kind, t, base + s * direction, d / limit, 1.0)
            rec.update(scale=float(s), distance=float(d), limit=float(limit))
            details.append(rec)
        fits[kind] = _loglog_fit(scales, dists)
    extra = {
        "constants": constants.to_dict(),
        "fit_H": {"exponent": fits["H"][0], "prefactor": fits["H"][1]},
        "fit_G": {"exponent": fits["G"][0], "prefactor": fits["G"][1]},
        "notes": notes + list(constants.notes),
    }
    result = SuiteResult.from_details("holder", details, 1.0, extra)
    return fits["H"][0], fits["H"][1], result


def gronwall_suite(
    problem: ConjugacyProblem,
    pairs: int = 10,
    horizon: float = 3.0,
    window: tuple[float, float] = (-3.0, 3.0),
    spread: float = 2.0,
    slack: float = 1e-6,
    seed: int = 0,
) -> SuiteResult:
    """Gronwall ratios for random initial pairs over ``t - t0`` in ``(0, horizon]``.

    Residuals are the worse of the nonlinear and linear ratios; the bound is
    ``1 + slack``.
    """
    rng = np.random.default_rng(seed)
    n = problem.system.dimension
    lo = max(window[0], problem.system.interval[0])
    hi = min(window[1], problem.system.interval[1] - horizon)
    grid_offsets = np.linspace(horizon / 12, horizon, 12)
    details = []
    for _ in range(pairs):
        t0 = float(rng.uniform(lo, hi))
        x0 = rng.uniform(-spread, spread, n)
        x1 = rng.uniform(-spread, spread, n)
        report = gronwall_check(problem, t0, x0, x1, t0 + grid_offsets, slack=slack)
        details.append(_record("gronwall", t0, [*x0, *x1], max(report.worst_nonlinear, report.worst_linear), 1 + slack))
    return SuiteResult.from_details("gronwall", details, 1 + slack)


@dataclass
class ProbeResult:
    """Outcome of :func:`no_bounded_solution_probe`.

    ``predicted`` maps a direction (``"backward"`` or ``"forward"``) to the
    first time at which the dichotomy lower bound exceeds the threshold;
    ``observed`` maps it to the first sampled time at which the solution
    norm does.
    """

    passed: bool
    vector: list[float]
    predicted: dict[str, float]
    observed: dict[str, float | None]
    max_norm: dict[str, float]
    threshold: float
    horizon: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(vars(self))


def no_bounded_solution_probe(
    cache: EvolutionCache,
    spec: DichotomySpec,
    v: Sequence[float],
    horizon: float,
    threshold: float,
    samples: int = 201,
    zero_tol: float = 1e-12,
) -> ProbeResult:
    """Certify that ``T(t, 0) v`` leaves the ball of radius ``threshold`` for ``|t| <= horizon``.

    With ``r`` the weight ratio between ``0`` and ``t``, the dichotomy gives
    ``|T(t,0) v| >= r^alpha |P v| / K - K r^-alpha |Q v|`` for ``t < 0``
    and ``|T(t,0) v| >= r^alpha |Q v| / K - K r^-alpha |P v|`` for
    ``t > 0``.  For each direction in which this lower bound crosses the
    threshold inside the horizon, the solution norm must be seen to cross it
    as well.  At least one such direction is required.
    """
    v = np.asarray(v, dtype=float)
    if not (horizon > 0 and threshold > 0):
        raise PreconditionError("horizon and threshold must be positive")
    p0 = spec.P(0.0)
    pv, qv = p0 @ v, v - p0 @ v
    npv, nqv = float(np.linalg.norm(pv)), float(np.linalg.norm(qv))
    if npv <= zero_tol and nqv <= zero_tol:
        raise PreconditionError("both dichotomy components of v vanish")
    K, alpha, rate = spec.K, spec.alpha, spec.rate
    lo, hi = cache.system.interval
    log0 = float(rate.log_mu(0.0))
    predicted: dict[str, float] = {}
    observed: dict[str, float | None] = {}
    max_norm: dict[str, float] = {}
    for name, sign, grow, decay in (("backward", -1.0, npv, nqv), ("forward", 1.0, nqv, npv)):
        reach = min(horizon, hi if sign > 0 else -lo)
        if grow <= zero_tol or reach <= 0:
            continue
        times = sign * np.linspace(0.0, reach, samples)
        log_r = sign * (np.asarray(rate.log_mu(times), dtype=float) - log0)
        lower = np.exp(alpha * log_r) * grow / K - K * np.exp(-alpha * log_r) * decay
        crossing = np.flatnonzero(lower > threshold)
        if crossing.size == 0:
            continue
        predicted[name] = float(times[crossing[0]])
        norms = np.array([np.linalg.norm(cache.propagate(float(t), 0.0, v)) for t in times])
        above = np.flatnonzero(norms > threshold)
        observed[name] = float(times[above[0]]) if above.size else None
        max_norm[name] = float(norms.max())
    passed = bool(predicted) and all(observed[d] is not None for d in predicted)
    notes = ["forward-time estimate uses the unstable-side inequality with the roles of P and Q exchanged"]
    if not predicted:
        notes.append("the lower bound stays below the threshold within the horizon")
    return ProbeResult(passed, v.tolist(), predicted, observed, max_norm, float(threshold), float(horizon), notes)


def write_details_csv(results: Sequence[SuiteResult], path) -> None:
    """Write every per-sample record as ``suite, kind, t, input_1.., residual, bound, pass``."""
    width = max((len(d["inputs"]) for r in results for d in r.details), default=0)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["suite", "kind", "t", *[f"input_{i + 1}" for i in range(width)], "residual", "bound", "pass"])
        for result in results:
            for d in result.details:
                inputs = [repr(x) for x in d["inputs"]] + [""] * (width - len(d["inputs"]))
                writer.writerow([result.suite_name, d["kind"], repr(d["t"]), *inputs, repr(d["residual"]), repr(d["bound"]), d["pass"]])
