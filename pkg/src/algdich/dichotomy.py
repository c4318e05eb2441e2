"""Verification and estimation of algebraic and (h, k) dichotomies.

An algebraic dichotomy with projector family ``P(s)`` (``Q = I - P``),
constants ``K, alpha`` and growth rate ``mu`` requires

    ||T(t, s) P(s)|| <= K (mu(t) / mu(s)) ** (-alpha)   for t >= s,
    ||T(t, s) Q(s)|| <= K (mu(s) / mu(t)) ** (-alpha)   for t <= s.

Operator norms are spectral norms.  Checks are carried out on finite grids
of ``(t, s)`` pairs; the report keeps the worst observed ratio on each side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Sequence

import numpy as np

from .growth_rates import GrowthRate, weight_ratio
from .linear_evolution import EvolutionCache

__all__ = [
    "DichotomySpec",
    "DichotomyReport",
    "CompensationResult",
    "FitError",
    "uniform_pair_grid",
    "sample_pair_grid",
    "verify_dichotomy",
    "fit_dichotomy_constants",
    "verify_hk_dichotomy",
    "check_compensation_law",
]

ProjectorFn = Callable[[float], np.ndarray]
Pair = tuple[float, float]


class FitError(ValueError):
    """The regression design is degenerate."""


@dataclass(frozen=True)
class DichotomySpec:
    """Declared dichotomy: projector family, constants and growth rate.

    ``constant_projector`` declares that ``P(s)`` does not depend on ``s``,
    which lets batched evaluations skip per-time projector calls.
    """

    projector: ProjectorFn
    K: float
    alpha: float
    rate: GrowthRate
    constant_projector: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError(f"K must be positive, got {self.K!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    def P(self, s: float) -> np.ndarray:
        return np.asarray(self.projector(s), dtype=float)

    def Q(self, s: float) -> np.ndarray:
        p = self.P(s)
        return np.eye(p.shape[0]) - p

    def P_many(self, ts) -> np.ndarray:
        """Projectors at several times, shape ``(m, n, n)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.constant_projector:
            p = self.P(float(ts[0]))
            return np.broadcast_to(p, (ts.size,) + p.shape)
        return np.stack([self.P(float(s)) for s in ts])

    def idempotency_defects(self, grid: Sequence[float], tol: float = 1e-9) -> list[float]:
        """Times of ``grid`` at which ``P(s)`` fails to be idempotent."""
        bad = []
        for s in grid:
            p = self.P(s)
            if np.max(np.abs(p @ p - p)) > tol:
                bad.append(float(s))
        return bad


@dataclass
class DichotomyReport:
    max_stable_ratio: float
    max_unstable_ratio: float
    violations: list[Pair]
    fitted_K: float | None
    fitted_alpha: float | None
    fit_residual: float | None
    passed: bool = False
    slack: float = 0.0
    pairs_checked: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "max_stable_ratio": self.max_stable_ratio,
            "max_unstable_ratio": self.max_unstable_ratio,
            "violations": [list(p) for p in self.violations],
            "fitted_K": self.fitted_K,
            "fitted_alpha": self.fitted_alpha,
            "fit_residual": self.fit_residual,
            "passed": self.passed,
            "slack": self.slack,
            "pairs_checked": self.pairs_checked,
            "notes": list(self.notes),
        }


def uniform_pair_grid(t_min: float, t_max: float, points: int) -> list[Pair]:
    """All ordered pairs ``(t, s)`` with ``t != s`` from a uniform time grid."""
    grid = np.linspace(t_min, t_max, points)
    return [(float(t), float(s)) for t, s in permutations(grid, 2)]


def sample_pair_grid(t_min: float, t_max: float, count: int, seed: int = 0) -> list[Pair]:
    """``count`` reproducible random ordered pairs with distinct entries."""
    rng = np.random.default_rng(seed)
    pairs: list[Pair] = []
    while len(pairs) < count:
        t, s = rng.uniform(t_min, t_max, size=2)
        if t != s:
            pairs.append((float(t), float(s)))
    return pairs


def _side_norms(cache: EvolutionCache, projector: ProjectorFn, pairs: Sequence[Pair]):
    """Yield ``(t, s, side, norm)`` with side 'P' for t >= s and 'Q' for t <= s."""
    n = cache.system.dimension
    eye = np.eye(n)
    for t, s in pairs:
        p_s = np.asarray(projector(s), dtype=float)
        sides = []
        if t >= s:
            sides.append(("P", p_s, lambda r: np.asarray(projector(r), dtype=float)))
        if t <= s:
            sides.append(("Q", eye - p_s, lambda r: eye - np.asarray(projector(r), dtype=float)))
        for side, proj, proj_fn in sides:
            if not proj.any():
                yield t, s, side, 0.0
                continue
            mat = cache.projected_transition(t, s, proj, proj_fn)
            yield t, s, side, float(np.linalg.norm(mat, 2))


def _verify(
    cache: EvolutionCache,
    projector: ProjectorFn,
    pairs: Sequence[Pair],
    K: float,
    slack: float,
    stable_weight: Callable[[float, float], float],
    unstable_weight: Callable[[float, float], float],
) -> DichotomyReport:
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    for t, s in pairs:
        cache.system.require_inside(t, s)
    worst = {"P": 0.0, "Q": 0.0}
    violations: list[Pair] = []
    for t, s, side, norm in _side_norms(cache, projector, pairs):
        weight = stable_weight(t, s) if side == "P" else unstable_weight(t, s)
        ratio = norm / weight
        worst[side] = max(worst[side], ratio)
        if ratio > K * (1 + slack) and (t, s) not in violations:
            violations.append((t, s))
    passed = worst["P"] <= K * (1 + slack) and worst["Q"] <= K * (1 + slack)
    return DichotomyReport(
        max_stable_ratio=worst["P"],
        max_unstable_ratio=worst["Q"],
        violations=violations,
        fitted_K=None,
        fitted_alpha=None,
        fit_residual=None,
        passed=passed,
        slack=slack,
        pairs_checked=len(pairs),
    )


def verify_dichotomy(
    cache: EvolutionCache,
    spec: DichotomySpec,
    pair_grid: Sequence[Pair],
    slack: float = 1e-6,
    fit: bool = False,
) -> DichotomyReport:
    """Check the two algebraic dichotomy bounds on every pair of ``pair_grid``.

    With ``fit=True`` the report also carries the constants fitted on the
    same pairs (left empty when the design is degenerate).
    """
    report = _verify(
        cache,
        spec.projector,
        pair_grid,
        spec.K,
        slack,
        lambda t, s: weight_ratio(spec.rate, t, s, spec.alpha),
        lambda t, s: weight_ratio(spec.rate, s, t, spec.alpha),
    )
    if fit:
        try:
            report.fitted_K, report.fitted_alpha, report.fit_residual = fit_dichotomy_constants(
                cache, spec.projector, spec.rate, pair_grid
            )
        except FitError as exc:
            report.notes.append(f"constant fit skipped: {exc}")
    return report


def fit_dichotomy_constants(
    cache: EvolutionCache, projector: ProjectorFn, rate: GrowthRate, pair_grid: Sequence[Pair]
) -> tuple[float, float, float]:
    """Least-squares fit of ``log||T P|| = log K - alpha * log-weight`` per side.

    Returns the larger ``K``, the smaller ``alpha`` over the non-empty sides
    and the largest absolute regression residual (in log space).
    """
    data: dict[str, list[tuple[float, float]]] = {"P": [], "Q": []}
    for t, s, side, norm in _side_norms(cache, projector, pair_grid):
        if norm == 0.0 or t == s:
            continue
        lt, ls = float(rate.log_mu(t)), float(rate.log_mu(s))
        x = lt - ls if side == "P" else ls - lt
        data[side].append((x, math.log(norm)))
    fits = []
    for side, rows in data.items():
        if not rows:
            continue
        x, y = np.array(rows).T
        if len(rows) < 2 or np.ptp(x) <= 1e-12 * max(1.0, np.max(np.abs(x))):
            raise FitError(f"{side}-side pairs do not span distinct weight values")
        design = np.column_stack([np.ones_like(x), -x])
        (log_k, alpha), *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = float(np.max(np.abs(design @ np.array([log_k, alpha]) - y)))
        fits.append((math.exp(log_k), float(alpha), resid))
    if not fits:
        raise FitError("both projected sides vanish on the grid")
    return max(f[0] for f in fits), min(f[1] for f in fits), max(f[2] for f in fits)


def verify_hk_dichotomy(
    cache: EvolutionCache,
    h: Callable,
    k: Callable,
    K: float,
    alpha: float,
    projector: ProjectorFn,
    pair_grid: Sequence[Pair],
    slack: float = 1e-6,
) -> DichotomyReport:
    """Check the (h, k) dichotomy bounds.

    ``||T(t,s) P(s)|| <= K h(t)/h(s) exp(-alpha (t - s))`` for ``t >= s`` and
    ``||T(t,s) Q(s)|| <= K k(t)/k(s) exp(-alpha (s - t))`` for ``t <= s``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if not K > 0:
        raise ValueError(f"K must be positive, got {K!r}")
    return _verify(
        cache,
        projector,
        pair_grid,
        K,
        slack,
        lambda t, s: float(h(t) / h(s)) * math.exp(-alpha * (t - s)),
        lambda t, s: float(k(t) / k(s)) * math.exp(-alpha * (s - t)),
    )


@dataclass
class CompensationResult:
    passed: bool
    empirical_C: float
    worst_pair: Pair | None


def check_compensation_law(h: Callable, k: Callable, C: float, pair_grid: Sequence[Pair]) -> CompensationResult:
    """Check ``k(t)/k(s) <= C h(t)/h(s)`` for ``t >= s`` and report the empirical C."""
    if not C > 0:
        raise ValueError("C must be positive")
    worst, worst_pair = 0.0, None
    for t, s in pair_grid:
        if t < s:
            raise ValueError(f"compensation law pairs need t >= s, got {(t, s)}")
        ratio = float((k(t) / k(s)) / (h(t) / h(s)))
        if ratio > worst:
            worst, worst_pair = ratio, (t, s)
    return CompensationResult(worst <= C * (1 + 1e-12), worst, worst_pair)
