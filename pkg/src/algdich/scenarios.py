"""Builtin problem instances with declared constants and closed-form oracles.

* :func:`example_2_2` is the diagonal system
  ``x1' = -eta1 (mu'/mu) x1``, ``x2' = eta2 (mu'/mu) x2``, which has an
  algebraic dichotomy with ``P = diag(1, 0)``, ``K = 1`` and
  ``alpha = min(eta1, eta2)``.
* :func:`section5` perturbs that system, with the arctan-exponential rate,
  by ``f(t, x) = (eps sin(x1 + t), eps cos(x1 + t))`` and declares
  ``beta = gamma = 2 eps``.
* :func:`scalar_oracle` is ``x' = -a x + c`` with ``mu = e^t``, where every
  object of the construction has a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .conjugacy import (
    THEOREM_GATE,
    ConjugacyProblem,
    GateError,
    PicardConfig,
    QuadratureConfig,
)
from .dichotomy import (
    DichotomyReport,
    DichotomySpec,
    sample_pair_grid,
    verify_dichotomy,
)
from .flows import NonlinearTerm
from .growth_rates import GrowthRate, arctan_exponential_rate, exponential_rate
from .linear_evolution import EvolutionCache, IntegratorConfig, LinearSystem

__all__ = [
    "Scenario",
    "example_2_2",
    "section5",
    "scalar_oracle",
    "BUILTIN_SCENARIOS",
    "build_scenario",
    "sup_on_interval",
    "ARCTAN_RATE_CLAIMED_UPPER",
]

# upper bound for mu'/mu of the arctan-exponential rate as commonly stated; it is not a true bound
ARCTAN_RATE_CLAIMED_UPPER = 1.0 + 2.0 / math.pi
DEFAULT_PAIR_WINDOW = (-5.0, 5.0)
DEFAULT_PAIR_COUNT = 200


def sup_on_interval(fn: Callable, interval: tuple[float, float], samples: int = 8001) -> float:
    """Supremum of a scalar function on an interval: dense sampling, then local refinement."""
    grid = np.linspace(interval[0], interval[1], samples)
    values = np.asarray(fn(grid), dtype=float) * np.ones_like(grid)
    k = int(np.argmax(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, samples - 1)]
    best = float(values[k])
    if hi > lo:
        res = minimize_scalar(lambda t: -float(fn(np.array([t]))[0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


@dataclass
class Scenario:
    """A linear system with its declared dichotomy, optional perturbation and oracles.

    ``oracle`` maps names (``"transition"``, ``"flow"``, ``"h"``, ``"H"``,
    ``"G"``, ``"g"``) to closed-form evaluators when they are known.
    """

    label: str
    system: LinearSystem
    rate: GrowthRate
    spec: DichotomySpec
    perturbation: NonlinearTerm | None = None
    oracle: dict[str, Callable] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    params: dict[str, float] = field(default_factory=dict)
    override_gates: bool = False

    def default_pairs(self) -> list[tuple[float, float]]:
        lo = max(self.system.interval[0], DEFAULT_PAIR_WINDOW[0])
        hi = min(self.system.interval[1], DEFAULT_PAIR_WINDOW[1])
        return sample_pair_grid(lo, hi, DEFAULT_PAIR_COUNT, seed=0)

    def cache(self, config: IntegratorConfig | None = None) -> EvolutionCache:
        return EvolutionCache(self.system, config)

    def verify(self, cache: EvolutionCache | None = None, slack: float = 1e-6, fit: bool = False) -> DichotomyReport:
        """Check the declared dichotomy on the default pair grid."""
        return verify_dichotomy(cache or self.cache(), self.spec, self.default_pairs(), slack=slack, fit=fit)

    def problem(
        self,
        config: IntegratorConfig | None = None,
        quad: QuadratureConfig | None = None,
        picard: PicardConfig | None = None,
        override_gates: bool | None = None,
        cache: EvolutionCache | None = None,
    ) -> ConjugacyProblem:
        if self.perturbation is None:
            raise ValueError(f"scenario {self.label!r} has no perturbation")
        cache = cache or self.cache(config)
        return ConjugacyProblem(
            self.system,
            cache,
            self.spec,
            self.perturbation,
            quad or QuadratureConfig(),
            picard or PicardConfig(),
            self.override_gates if override_gates is None else override_gates,
            self.label,
        )


def _diagonal_coefficient(eta1: float, eta2: float, rate: GrowthRate):
    def coeff(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        r = np.asarray(rate.log_derivative(t), dtype=float) * np.ones_like(t)
        out = np.zeros((t.size, 2, 2))
        out[:, 0, 0] = -eta1 * r
        out[:, 1, 1] = eta2 * r
        return out

    return coeff


_STABLE = np.diag([1.0, 0.0])


def _stable_projector(s):
    return _STABLE


def example_2_2(
    eta1: float = 1.0, eta2: float = 1.0, rate: GrowthRate | None = None, interval: tuple[float, float] = (-10.0, 10.0)
) -> Scenario:
    """Diagonal linear system with an algebraic dichotomy of exponent ``min(eta1, eta2)``."""
    if not (eta1 > 0 and eta2 > 0):
        raise ValueError("eta1 and eta2 must be positive")
    rate = rate or exponential_rate()
    bound = max(eta1, eta2) * sup_on_interval(rate.log_derivative, interval)
    system = LinearSystem(2, _diagonal_coefficient(eta1, eta2, rate), bound, f"example_2_2[{rate.label}]", interval)
    alpha = min(eta1, eta2)
    spec = DichotomySpec(_stable_projector, 1.0, alpha, rate, constant_projector=True)

    def transition(t, s):
        gap = float(rate.log_mu(t) - rate.log_mu(s))
        return np.diag([math.exp(-eta1 * gap), math.exp(eta2 * gap)])

    notes = []
    if eta1 != eta2:
        notes.append(
            f"alpha = min(eta1, eta2) = {alpha:g}; the larger value {max(eta1, eta2):g} does not bound "
            "the slower side, so it is not used"
        )
    return Scenario(
        label="example_2_2",
        system=system,
        rate=rate,
        spec=spec,
        oracle={"transition": transition},
        notes=notes,
        params={"eta1": eta1, "eta2": eta2},
    )


def section5(
    eta1: float = 1.0,
    eta2: float = 1.0,
    epsilon: float = 0.05,
    interval: tuple[float, float] = (-30.0, 30.0),
    override_gates: bool = False,
) -> Scenario:
    """Perturbed diagonal system with the arctan-exponential rate.

    The theorem gate ``6 K gamma / alpha < 1`` with ``gamma = 2 eps``,
    ``K = 1`` and ``alpha = min(eta1, eta2)`` amounts to
    ``eps < min(eta1, eta2) / 12``.  Larger ``eps`` is rejected unless
    ``override_gates`` is set.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    rate = arctan_exponential_rate()
    base = example_2_2(eta1, eta2, rate, interval)
    alpha = base.spec.alpha
    if not 6.0 * 2.0 * epsilon / alpha < 1.0 and not override_gates:
        raise GateError(
            THEOREM_GATE,
            f"6*K*gamma/alpha = {12.0 * epsilon / alpha:.6g} with gamma = 2*epsilon; needs epsilon < {alpha / 12:.6g}",
        )
    eps = float(epsilon)

    def f(t, x):
        phase = x[:, 0] + t
        return eps * np.column_stack([np.sin(phase), np.cos(phase)])

    term = NonlinearTerm(f, beta=2 * eps, gamma=2 * eps, rate=rate)
    sup = sup_on_interval(rate.log_derivative, interval)
    notes = list(base.notes)
    notes.append(f"epsilon gate: epsilon < min(eta1, eta2)/12 = {alpha / 12:.6g}; the looser eta/8 does not imply 6K*gamma/alpha < 1")
    notes.append(
        f"mu'/mu lies in (1, {sup:.6f}] on the working interval; the bound 1 + 2/pi = "
        f"{ARCTAN_RATE_CLAIMED_UPPER:.6f} is exceeded near t = -0.43, so the norm bound uses the true supremum"
    )
    if override_gates and not 12.0 * eps / alpha < 1.0:
        notes.append("theorem gate overridden")
    return Scenario(
        label="section5",
        system=base.system,
        rate=rate,
        spec=base.spec,
        perturbation=term,
        oracle={"transition": base.oracle["transition"]},
        notes=notes,
        params={"eta1": eta1, "eta2": eta2, "epsilon": eps},
        override_gates=override_gates,
    )


def scalar_oracle(a: float = 1.0, c: float = 0.5, interval: tuple[float, float] = (-40.0, 40.0)) -> Scenario:
    """``x' = -a x + c`` with ``mu = e^t``, ``K = 1``, ``alpha = a``, ``beta = |c|``, ``gamma = 0``.

    Closed forms: ``h = -c/a``, ``H(t, x) = x - c/a``, ``G(t, y) = y + c/a``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    rate = exponential_rate()
    system = LinearSystem(1, lambda t: np.full((np.size(t), 1, 1), -a), a, "scalar_oracle", interval)
    spec = DichotomySpec(lambda s: np.eye(1), 1.0, a, rate, constant_projector=True)
    cc = float(c)
    term = NonlinearTerm(lambda t, x: np.full_like(x, cc), beta=abs(cc), gamma=0.0, rate=rate)
    shift = cc / a
    oracle = {
        "transition": lambda t, s: np.array([[math.exp(-a * (t - s))]]),
        "flow": lambda t, t0, x0: shift + (np.asarray(x0, dtype=float) - shift) * math.exp(-a * (t - t0)),
        "h": lambda t, tau, xi: np.full(1, -shift),
        "g": lambda t, tau, xi: np.full(1, shift),
        "H": lambda t, x: np.asarray(x, dtype=float) - shift,
        "G": lambda t, y: np.asarray(y, dtype=float) + shift,
    }
    return Scenario(
        label="scalar_oracle",
        system=system,
        rate=rate,
        spec=spec,
        perturbation=term,
        oracle=oracle,
        params={"a": a, "c": cc},
    )


BUILTIN_SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "example_2_2": example_2_2,
    "section5": section5,
    "scalar_oracle": scalar_oracle,
}


def build_scenario(label: str, **params) -> Scenario:
    try:
        factory = BUILTIN_SCENARIOS[label]
    except KeyError:
        raise KeyError(f"unknown scenario {label!r}; builtin: {sorted(BUILTIN_SCENARIOS)}") from None
    return factory(**params)
