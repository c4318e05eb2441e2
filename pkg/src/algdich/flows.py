"""Nonlinear and linear flows, and the Gronwall-type growth bounds.

The nonlinear system is ``x' = A(t) x + f(t, x)``; its flow is written
``X(t, t0, x0)`` and the linear flow ``Y(t, t0, y0) = T(t, t0) y0``.

Many trajectories are integrated in one call.  Each trajectory ``i`` runs
in its own shifted clock ``s_i = t0_i + sign * u`` so that all of them share
the elapsed time ``u``; the block-relative step control of
:class:`~algdich.linear_evolution.BlockRK45` keeps every trajectory at its
own relative accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .growth_rates import GrowthRate
from .linear_evolution import (
    EvolutionCache,
    IntegratorConfig,
    LinearSystem,
    solve_blocks,
)

__all__ = [
    "NonlinearTerm",
    "GronwallReport",
    "estimate_perturbation_constants",
    "integrate_shifted",
    "integrate_shifted_dense",
    "nonlinear_flow",
    "nonlinear_flow_many",
    "linear_flow",
    "gronwall_check",
]

ESTIMATE_INFLATION = 1.05


@dataclass(frozen=True)
class NonlinearTerm:
    """Perturbation ``f`` with weighted bound ``beta`` and weighted Lipschitz ``gamma``.

    ``f`` is vectorised: ``f(t, x)`` takes times of shape ``(m,)`` and states
    of shape ``(m, n)`` and returns shape ``(m, n)``.  The declared constants
    mean ``|f(t,x)| <= beta mu'(t)/mu(t)`` and
    ``|f(t,x1) - f(t,x2)| <= gamma mu'(t)/mu(t) |x1 - x2|``.
    """

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    beta: float
    gamma: float
    rate: GrowthRate
    estimated: bool = False

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be nonnegative")

    def evaluate(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.f(np.array([float(t)]), x[None, :]), dtype=float)[0]

    def check(self, ts, xs, slack: float = 1e-9, seed: int = 0) -> list[tuple[str, float, float]]:
        """Sample both hypotheses; return ``(kind, t, excess ratio)`` for violations."""
        ts = np.asarray(ts, dtype=float)
        xs = np.asarray(xs, dtype=float)
        r = np.asarray(self.rate.log_derivative(ts), dtype=float) * np.ones_like(ts)
        fx = np.asarray(self.f(ts, xs), dtype=float)
        out = []
        size = np.linalg.norm(fx, axis=1)
        for t, value, bound in zip(ts, size, self.beta * r):
            if value > bound * (1 + slack):
                out.append(("bound", float(t), float(value / bound) if bound > 0 else float("inf")))
        partners = xs[np.random.default_rng(seed).permutation(len(xs))]
        diff = np.linalg.norm(fx - np.asarray(self.f(ts, partners), dtype=float), axis=1)
        dist = np.linalg.norm(xs - partners, axis=1)
        for t, d, dx, rr in zip(ts, diff, dist, r):
            bound = self.gamma * rr * dx
            if dx > 0 and d > bound * (1 + slack):
                out.append(("lipschitz", float(t), float(d / bound) if bound > 0 else float("inf")))
        return out


def estimate_perturbation_constants(
    f: Callable, rate: GrowthRate, ts, xs, inflation: float = ESTIMATE_INFLATION, seed: int = 0
) -> NonlinearTerm:
    """Estimate ``beta`` and ``gamma`` by sampling, inflated by ``inflation``.

    ``gamma`` uses random partner points drawn from the same sample.  The
    returned term is flagged as estimated.
    """
    ts = np.asarray(ts, dtype=float)
    xs = np.asarray(xs, dtype=float)
    r = np.asarray(rate.log_derivative(ts), dtype=float) * np.ones_like(ts)
    fx = np.asarray(f(ts, xs), dtype=float)
    beta = float(np.max(np.linalg.norm(fx, axis=1) / r))
    partners = xs[np.random.default_rng(seed).permutation(len(xs))]
    dist = np.linalg.norm(xs - partners, axis=1)
    keep = dist > 0
    gamma = 0.0
    if keep.any():
        diff = np.linalg.norm(fx - np.asarray(f(ts, partners), dtype=float), axis=1)
        gamma = float(np.max(diff[keep] / (r[keep] * dist[keep])))
    return NonlinearTerm(f, inflation * beta, inflation * gamma, rate, estimated=True)


@dataclass
class GronwallReport:
    worst_nonlinear: float
    worst_linear: float
    passed: bool
    slack: float
    samples: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def integrate_shifted(
    system: LinearSystem,
    forcing: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
    config: IntegratorConfig,
    t0s: np.ndarray,
    x0s: np.ndarray,
    offsets: np.ndarray,
    sign: float,
) -> np.ndarray:
    """Integrate ``x' = A(s)x + forcing(s, x)`` for many trajectories at once.

    Trajectory ``i`` starts at ``(t0s[i], x0s[i])``; it is sampled at the
    times ``t0s[i] + sign * offsets[i, j]`` with ``offsets >= 0``.  Returns an
    array of shape ``(m, k, n)``.  Coefficients are never evaluated outside
    the working interval: a trajectory whose own offsets are exhausted keeps
    running with its time clipped to the interval, and its later states are
    discarded.
    """
    t0s = np.asarray(t0s, dtype=float)
    x0s = np.asarray(x0s, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    m, n = x0s.shape
    if offsets.shape[0] != m or np.any(offsets < 0):
        raise ValueError("offsets must have one nonnegative row per trajectory")
    out = np.empty(offsets.shape + (n,))
    horizon = float(offsets.max()) if offsets.size else 0.0
    if horizon == 0.0:
        out[:] = x0s[:, None, :]
        return out
    lo, hi = system.interval

    def rhs(u, y):
        s = np.clip(t0s + sign * u, lo, hi)
        x = y.reshape(m, n)
        dx = np.einsum("mij,mj->mi", system.matrices(s), x)
        if forcing is not None:
            dx = dx + forcing(s, x)
        return sign * dx.ravel()

    samples = np.unique(offsets)
    sol = solve_blocks(rhs, 0.0, horizon, x0s.ravel(), n, config, t_eval=samples)
    states = sol.y.T.reshape(len(samples), m, n)
    index = np.searchsorted(samples, offsets)
    for i in range(m):
        out[i] = states[index[i], i]
    out[offsets == 0.0] = np.broadcast_to(x0s[:, None, :], out.shape)[offsets == 0.0]
    return out


def integrate_shifted_dense(
    system: LinearSystem,
    forcing: Callable[[np.ndarray, np.ndarray], np.ndarray] | None,
    config: IntegratorConfig,
    t0s: np.ndarray,
    x0s: np.ndarray,
    horizon: float,
    sign: float,
) -> Callable[[float], np.ndarray]:
    """Like :func:`integrate_shifted`, returning a continuous solution ``u -> (m, n)``.

    The returned function is defined for ``0 <= u <= horizon`` and uses the
    integrator's own dense output.
    """
    t0s = np.asarray(t0s, dtype=float)
    x0s = np.asarray(x0s, dtype=float)
    m, n = x0s.shape
    if horizon <= 0.0:
        return lambda u: x0s.copy()
    lo, hi = system.interval

    def rhs(u, y):
        s = np.clip(t0s + sign * u, lo, hi)
        x = y.reshape(m, n)
        dx = np.einsum("mij,mj->mi", system.matrices(s), x)
        if forcing is not None:
            dx = dx + forcing(s, x)
        return sign * dx.ravel()

    sol = solve_blocks(rhs, 0.0, horizon, x0s.ravel(), n, config, dense_output=True).sol
    return lambda u: sol(u).reshape(m, n)


def _flow(system: LinearSystem, forcing, config: IntegratorConfig, t0s, x0s, targets) -> np.ndarray:
    t0s = np.asarray(t0s, dtype=float)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(len(t0s), -1)
    system.require_inside(*t0s, *targets.ravel())
    out = np.empty(targets.shape + (x0s.shape[1],))
    delta = targets - t0s[:, None]
    for sign in (1.0, -1.0):
        mask = sign * delta > 0
        rows = np.flatnonzero(mask.any(axis=1))
        if rows.size == 0:
            continue
        offsets = np.where(mask[rows], sign * delta[rows], 0.0)
        res = integrate_shifted(system, forcing, config, t0s[rows], x0s[rows], offsets, sign)
        sub = out[rows]
        sub[mask[rows]] = res[mask[rows]]
        out[rows] = sub
    same = delta == 0
    out[same] = np.broadcast_to(x0s[:, None, :], out.shape)[same]
    return out


def nonlinear_flow_many(problem, t0s, x0s, targets) -> np.ndarray:
    """``X(targets[i, j], t0s[i], x0s[i])`` with shape ``(m, k, n)``."""
    return _flow(problem.system, problem.perturbation.f, problem.cache.config, t0s, x0s, targets)


def nonlinear_flow(problem, t0: float, x0, t: float) -> np.ndarray:
    """``X(t, t0, x0)``, the solution of the perturbed system through ``(t0, x0)``."""
    x0 = np.asarray(x0, dtype=float)
    if t == t0:
        problem.system.require_inside(t0)
        return x0.copy()
    return nonlinear_flow_many(problem, [t0], x0[None, :], [[t]])[0, 0]


def linear_flow(cache: EvolutionCache, t0: float, y0, t: float) -> np.ndarray:
    """``Y(t, t0, y0) = T(t, t0) y0``."""
    y0 = np.asarray(y0, dtype=float)
    if t == t0:
        cache.system.require_inside(t0)
        return y0.copy()
    return cache.propagate(t, t0, y0)


def gronwall_check(problem, t0: float, x0, x0_alt, t_grid: Sequence[float], slack: float = 1e-6) -> GronwallReport:
    """Worst ratio of observed solution separation to the Gronwall bounds.

    Nonlinear: ``|dX(t)| <= |dx0| e^{M(t-t0)} (mu(t)/mu(t0))^gamma``.
    Linear: ``|dY(t)| <= |dy0| e^{M(t-t0)}``, with ``y0, y0'`` taken as
    ``x0, x0'``.  Identical initial data give ratio zero.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < t0):
        raise ValueError("gronwall_check needs t >= t0 on the whole grid")
    x0 = np.asarray(x0, dtype=float)
    x0_alt = np.asarray(x0_alt, dtype=float)
    gap = float(np.linalg.norm(x0 - x0_alt))
    M = problem.system.norm_bound
    gamma = problem.perturbation.gamma
    rate = problem.perturbation.rate
    if gap == 0.0:
        return GronwallReport(0.0, 0.0, True, slack, len(t_grid))
    both = nonlinear_flow_many(problem, [t0, t0], np.stack([x0, x0_alt]), np.stack([t_grid, t_grid]))
    worst_nl, worst_lin = 0.0, 0.0
    for j, t in enumerate(t_grid):
        growth = np.exp(M * (t - t0))
        bound_nl = gap * growth * np.exp(gamma * (float(rate.log_mu(t)) - float(rate.log_mu(t0))))
        worst_nl = max(worst_nl, float(np.linalg.norm(both[0, j] - both[1, j])) / bound_nl)
        dy = linear_flow(problem.cache, t0, x0 - x0_alt, t)
        worst_lin = max(worst_lin, float(np.linalg.norm(dy)) / (gap * growth))
    passed = worst_nl <= 1 + slack and worst_lin <= 1 + slack
    return GronwallReport(worst_nl, worst_lin, passed, slack, len(t_grid))
