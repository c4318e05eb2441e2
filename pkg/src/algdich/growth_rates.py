"""Growth rates and dichotomy weight ratios.

A growth rate is a strictly increasing positive function ``mu`` with
``mu(0) = 1``, ``mu -> 0`` at minus infinity and ``mu -> infinity`` at plus
infinity.  It replaces ``exp(t)`` in the weights of an algebraic dichotomy,
which take the form ``(mu(t) / mu(s)) ** (-alpha)``.

Every rate carries closed-form evaluators for ``mu``, ``mu'`` and ``log(mu)``
so that weight ratios can be formed in log space and never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ScalarFunction = Callable[[np.ndarray | float], np.ndarray | float]

__all__ = [
    "GrowthRate",
    "GrowthRateEvaluationError",
    "RateViolation",
    "ValidationReport",
    "validate_growth_rate",
    "weight_ratio",
    "exponential_rate",
    "arctan_exponential_rate",
    "algebraic_rate",
    "BUILTIN_RATES",
    "get_rate",
]


class GrowthRateEvaluationError(ValueError):
    """Raised when a growth rate evaluates to a non-finite value."""

    def __init__(self, label: str, quantity: str, t: float):
        super().__init__(f"growth rate {label!r}: {quantity} is not finite at t={t!r}")
        self.t = t
        self.quantity = quantity


@dataclass(frozen=True)
class GrowthRate:
    """A growth rate given by paired closed-form evaluators.

    ``log_derivative`` is optional; when absent ``mu_prime / mu`` is used.
    Builtin rates supply it directly because ``mu`` itself under- or
    overflows long before the ratio does.
    """

    mu: ScalarFunction
    mu_prime: ScalarFunction
    log_mu: ScalarFunction
    label: str
    log_derivative_fn: ScalarFunction | None = field(default=None, compare=False)

    def log_derivative(self, t):
        """Return ``mu'(t) / mu(t)``, the weight density of the rate."""
        if self.log_derivative_fn is not None:
            return self.log_derivative_fn(t)
        return self.mu_prime(t) / self.mu(t)

    def sup_log_derivative(self, interval: tuple[float, float], samples: int = 4001) -> float:
        """Sampled supremum of ``mu'/mu`` over ``interval`` (an estimate)."""
        grid = np.linspace(interval[0], interval[1], samples)
        return float(np.max(self.log_derivative(grid)))


@dataclass(frozen=True)
class RateViolation:
    check: str
    t: float
    value: float


@dataclass
class ValidationReport:
    label: str
    passed: bool
    violations: list[RateViolation]
    small_threshold: float
    large_threshold: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "passed": self.passed,
            "violations": [vars(v) for v in self.violations],
            "small_threshold": self.small_threshold,
            "large_threshold": self.large_threshold,
        }


def _evaluate(g: GrowthRate, quantity: str, fn: ScalarFunction, grid: np.ndarray) -> np.ndarray:
    values = np.broadcast_to(np.asarray(fn(grid), dtype=float), grid.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        raise GrowthRateEvaluationError(g.label, quantity, float(grid[np.argmax(bad)]))
    return values


def validate_growth_rate(
    g: GrowthRate,
    grid: Sequence[float],
    tol: float,
    small_threshold: float = 1e-3,
    large_threshold: float = 1e3,
) -> ValidationReport:
    """Check the growth-rate axioms on a sampled grid.

    The limit axioms are replaced by proxies: ``mu`` at the left end of the
    grid must lie below ``small_threshold`` and at the right end above
    ``large_threshold``.  Each violated check is reported with the grid
    point that triggered it.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must contain at least two times")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if tol <= 0:
        raise ValueError("tol must be positive")

    mu = _evaluate(g, "mu", g.mu, grid)
    mu_prime = _evaluate(g, "mu_prime", g.mu_prime, grid)
    log_mu = _evaluate(g, "log_mu", g.log_mu, grid)

    violations: list[RateViolation] = []
    mu0 = float(np.asarray(g.mu(0.0), dtype=float))
    if not abs(mu0 - 1.0) <= tol:
        violations.append(RateViolation("normalised_at_zero", 0.0, mu0))
    for i in np.flatnonzero(np.diff(mu) <= 0):
        violations.append(RateViolation("increasing", float(grid[i + 1]), float(mu[i + 1])))
    for i in np.flatnonzero(mu_prime <= 0):
        violations.append(RateViolation("positive_derivative", float(grid[i]), float(mu_prime[i])))
    # compare in log space: exp(log_mu) may overflow where mu is still finite
    with np.errstate(divide="ignore"):
        log_of_mu = np.log(mu)
    positive = mu > 0
    mismatch = np.abs(log_of_mu - log_mu) > tol * np.maximum(1.0, np.abs(log_mu))
    for i in np.flatnonzero(mismatch & positive):
        violations.append(RateViolation("log_consistency", float(grid[i]), float(log_mu[i])))
    for i in np.flatnonzero(~positive):
        violations.append(RateViolation("positive", float(grid[i]), float(mu[i])))
    if not mu[0] < small_threshold:
        violations.append(RateViolation("left_limit_proxy", float(grid[0]), float(mu[0])))
    if not mu[-1] > large_threshold:
        violations.append(RateViolation("right_limit_proxy", float(grid[-1]), float(mu[-1])))
    return ValidationReport(g.label, not violations, violations, small_threshold, large_threshold)


def weight_ratio(g: GrowthRate, t, s, alpha: float):
    """Return ``(mu(t) / mu(s)) ** (-alpha)`` evaluated in log space."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if np.isscalar(t) and np.isscalar(s) and t == s:
        return 1.0
    value = np.exp(-alpha * (np.asarray(g.log_mu(t)) - np.asarray(g.log_mu(s))))
    return float(value) if np.ndim(value) == 0 else value


def _as_float(t):
    return np.asarray(t, dtype=float)


def exponential_rate() -> GrowthRate:
    """``mu(t) = exp(t)``; the classical exponential dichotomy weight."""
    return GrowthRate(
        mu=lambda t: np.exp(_as_float(t)),
        mu_prime=lambda t: np.exp(_as_float(t)),
        log_mu=lambda t: _as_float(t) + 0.0,
        label="exponential",
        log_derivative_fn=lambda t: np.ones_like(_as_float(t)),
    )


def _arccot_shift(t):
    # pi/2 + arctan(t) rewritten as arctan2(1, -t): no cancellation for t << 0
    return np.arctan2(1.0, -_as_float(t))


def arctan_exponential_rate() -> GrowthRate:
    """``mu(t) = (2/pi) exp(t) (pi/2 + arctan t)``."""
    two_over_pi = 2.0 / math.pi
    return GrowthRate(
        mu=lambda t: two_over_pi * np.exp(_as_float(t)) * _arccot_shift(t),
        mu_prime=lambda t: two_over_pi
        * np.exp(_as_float(t))
        * (_arccot_shift(t) + 1.0 / (1.0 + _as_float(t) ** 2)),
        log_mu=lambda t: math.log(two_over_pi) + _as_float(t) + np.log(_arccot_shift(t)),
        label="arctan-exponential",
        log_derivative_fn=lambda t: 1.0 + 1.0 / (_arccot_shift(t) * (1.0 + _as_float(t) ** 2)),
    )


def algebraic_rate() -> GrowthRate:
    """``mu(t) = t + sqrt(1 + t^2) = exp(asinh t)``; weights decay polynomially."""
    return GrowthRate(
        mu=lambda t: np.exp(np.arcsinh(_as_float(t))),
        mu_prime=lambda t: np.exp(np.arcsinh(_as_float(t))) / np.sqrt(1.0 + _as_float(t) ** 2),
        log_mu=lambda t: np.arcsinh(_as_float(t)),
        label="algebraic",
        log_derivative_fn=lambda t: 1.0 / np.sqrt(1.0 + _as_float(t) ** 2),
    )


BUILTIN_RATES: dict[str, Callable[[], GrowthRate]] = {
    "exponential": exponential_rate,
    "arctan-exponential": arctan_exponential_rate,
    "algebraic": algebraic_rate,
}


def get_rate(label: str) -> GrowthRate:
    """Look up a builtin growth rate by label."""
    try:
        return BUILTIN_RATES[label]()
    except KeyError:
        raise KeyError(f"unknown growth rate {label!r}; builtin: {sorted(BUILTIN_RATES)}") from None
