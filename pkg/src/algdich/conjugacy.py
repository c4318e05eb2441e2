"""Construction of the conjugacy ``H`` and its inverse ``G``.

For a perturbation ``f`` of a dichotomic linear system,

    h(t, (tau, xi)) = - int_{-inf}^{t} T(t,s) P(s) f(s, X(s, tau, xi)) ds
                      + int_{t}^{+inf} T(t,s) Q(s) f(s, X(s, tau, xi)) ds

is the unique bounded solution of ``z' = A(t) z - f(t, X(t, tau, xi))`` and
``H(t, x) = x + h(t, (t, x))``.  The inverse ``G(t, y) = y + g(t, (t, y))``
uses the fixed point ``g`` of

    z  ->  int_{-inf}^{t} T(t,s) P(s) f(s, Y(s) + z(s)) ds
         - int_{t}^{+inf} T(t,s) Q(s) f(s, Y(s) + z(s)) ds,

with ``Y(s) = T(s, tau) xi``.  Both improper integrals are truncated at the
radius ``T*`` where the analytic tail bound
``(K beta / alpha) (mu(t - T*) / mu(t)) ** alpha`` drops below ``tail_tol``.

Evaluating the truncated integrals
----------------------------------
``X(s, tau, xi)`` oscillates ever faster as ``s -> -inf`` in typical
examples, so resolving the integrand by panels is prohibitively expensive at
the certified radius.  The default rule ``"flow"`` uses the
variation-of-constants identity instead:

    - int_{t-T}^{t} T(t,s) P(s) f(s, X(s)) ds = T(t, t-T) P(t-T) X(t-T) - P(t) X(t),

and the mirrored identity for the unstable side.  The quadrature is then
carried out by the adaptive integrator that produced ``X``, whose error is
controlled relative to the size of ``X`` and stays bounded once pulled back
by the decaying factor ``T(t, t-T) P``.  The rule ``"gauss-kronrod"``
evaluates the same truncated integrals by adaptive Gauss-Kronrod panels over
the integrand itself.  It is far slower and serves as an independent check.

The Picard map is evaluated by sweeps as well.  The base trajectory ``Y`` is
integrated outward from the centre, and the stable part of ``z_{m+1}`` solves
``E' = A E + P(s) f(s, Y + z_m)`` from ``E = 0`` at the left end of the
window; the unstable part comes from a backward sweep from the right end.
Sweep tolerances are scaled by the dichotomy weight relative to the centre,
so accuracy is spent where errors survive.  The iterate ``z_m`` lives on a
uniform collocation grid and is interpolated by cubic splines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.interpolate import CubicSpline

from .dichotomy import DichotomySpec
from .flows import (
    NonlinearTerm,
    integrate_shifted,
    integrate_shifted_dense,
    nonlinear_flow,
    nonlinear_flow_many,
)
from .growth_rates import GrowthRate
from .linear_evolution import (
    BlockRK45,
    EvolutionCache,
    IntegrationError,
    IntegratorConfig,
    IntervalError,
    LinearSystem,
    solve_blocks,
)

__all__ = [
    "QuadratureConfig",
    "PicardConfig",
    "ConjugacyProblem",
    "GateError",
    "ConvergenceError",
    "PicardResult",
    "HolderConstants",
    "THEOREM_GATE",
    "HOLDER_GATE",
    "truncation_radius",
    "tail_bound",
    "green_integral_h",
    "green_integral_h_many",
    "forward_map_H",
    "forward_map_H_many",
    "picard_g",
    "picard_g_many",
    "inverse_map_G",
    "inverse_map_G_many",
    "h_side_holder_constants",
    "g_side_holder_constants",
    "theoretical_holder_constants",
]

THEOREM_GATE = "6*K*gamma/alpha < 1"
HOLDER_GATE = "alpha > gamma"
LAMBDA_GATE = "2*K*gamma*e/alpha < 1"
PANEL_RULES = ("flow", "gauss-kronrod")
# lambda must exceed its lower bound strictly; this is the relative margin used
LAMBDA_MARGIN = 1e-3
# successive differences below this multiple of the integrator tolerance are noise
NOISE_FLOOR_FACTOR = 1e3
# consecutive non-contracting Picard steps after which the differences are taken to be sweep noise
STALL_STEPS = 2


class GateError(ValueError):
    """A hypothesis gate of the linearization theorem is violated."""

    def __init__(self, gate: str, message: str):
        super().__init__(f"gate violated: {gate}: {message}")
        self.gate = gate


class ConvergenceError(RuntimeError):
    """The Picard iteration did not reach its stopping rule."""

    def __init__(self, iterations: int, last_delta: float):
        super().__init__(
            f"Picard iteration did not converge in {iterations} iterations (last delta {last_delta:.3e}); "
            "check the contraction gate and the collocation grid"
        )
        self.iterations = iterations
        self.last_delta = last_delta


@dataclass(frozen=True)
class QuadratureConfig:
    """Truncation and panel tolerances for the improper Green integrals."""

    tail_tol: float = 1e-9
    panel_rule: str = "flow"
    panel_tol: float = 1e-10

    def __post_init__(self):
        if not (self.tail_tol > 0 and self.panel_tol > 0):
            raise ValueError("tail_tol and panel_tol must be positive")
        if self.panel_rule not in PANEL_RULES:
            raise ValueError(f"panel_rule must be one of {PANEL_RULES}, got {self.panel_rule!r}")

    def tightened(self, factor: float) -> "QuadratureConfig":
        return replace(self, tail_tol=self.tail_tol / factor, panel_tol=self.panel_tol / factor)


@dataclass(frozen=True)
class PicardConfig:
    """Collocation spacing, sweep tolerance and stopping rule of the Picard iteration.

    ``rtol`` is the tolerance of the sweeps that evaluate the Green integrals,
    measured after pulling each local error back to the centre of the run
    with the dichotomy weight.
    """

    grid_spacing: float = 0.1
    stop_tol: float = 1e-6
    max_iter: int = 60
    rtol: float = 1e-8

    def __post_init__(self):
        if not (self.grid_spacing > 0 and self.stop_tol > 0 and self.rtol > 0):
            raise ValueError("grid_spacing, stop_tol and rtol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def tightened(self, factor: float) -> "PicardConfig":
        return replace(self, stop_tol=self.stop_tol / factor, rtol=self.rtol / factor)


@dataclass
class ConjugacyProblem:
    """Linear system, dichotomy and perturbation, with numerical configuration.

    Construction enforces ``6 K gamma / alpha < 1`` unless ``override_gates``
    is set.
    """

    system: LinearSystem
    cache: EvolutionCache
    spec: DichotomySpec
    perturbation: NonlinearTerm
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    picard: PicardConfig = field(default_factory=PicardConfig)
    override_gates: bool = False
    label: str = ""

    def __post_init__(self):
        if self.cache.system is not self.system:
            raise ValueError("cache was built for a different system")
        if not self.gate_holds and not self.override_gates:
            raise GateError(THEOREM_GATE, f"6*K*gamma/alpha = {self.gate_value:.6g} is not below 1")

    @property
    def K(self) -> float:
        return self.spec.K

    @property
    def alpha(self) -> float:
        return self.spec.alpha

    @property
    def beta(self) -> float:
        return self.perturbation.beta

    @property
    def gamma(self) -> float:
        return self.perturbation.gamma

    @property
    def rate(self) -> GrowthRate:
        return self.spec.rate

    @property
    def gate_value(self) -> float:
        return 6.0 * self.K * self.gamma / self.alpha

    @property
    def gate_holds(self) -> bool:
        return self.gate_value < 1.0

    @property
    def contraction_constant(self) -> float:
        """``2 K gamma / alpha``, the contraction constant of the Picard map."""
        return 2.0 * self.K * self.gamma / self.alpha

    @property
    def displacement_bound(self) -> float:
        """``2 K beta / alpha``, the bound on ``|H(t,x) - x|`` and ``|G(t,y) - y|``."""
        return 2.0 * self.K * self.beta / self.alpha

    def require_holder_gate(self) -> None:
        if not self.alpha > self.gamma:
            raise GateError(HOLDER_GATE, f"alpha = {self.alpha:g} does not exceed gamma = {self.gamma:g}")

    def tightened(self, factor: float) -> "ConjugacyProblem":
        """Copy with integrator, quadrature and Picard tolerances divided by ``factor``."""
        cache = EvolutionCache(self.system, self.cache.config.tightened(factor))
        return ConjugacyProblem(
            self.system,
            cache,
            self.spec,
            self.perturbation,
            self.quad.tightened(factor),
            self.picard.tightened(factor),
            self.override_gates,
            self.label,
        )


# --------------------------------------------------------------------------
# truncation
# --------------------------------------------------------------------------


def tail_bound(problem: ConjugacyProblem, t: float, radius: float, side: str) -> float:
    """Analytic bound on the Green integral beyond ``radius`` on one side."""
    amp = problem.K * problem.beta / problem.alpha
    if side == "stable":
        gap = float(problem.rate.log_mu(t) - problem.rate.log_mu(t - radius))
    elif side == "unstable":
        gap = float(problem.rate.log_mu(t + radius) - problem.rate.log_mu(t))
    else:
        raise ValueError(f"side must be 'stable' or 'unstable', got {side!r}")
    return amp * math.exp(-problem.alpha * gap)


def truncation_radius(problem: ConjugacyProblem, t: float, side: str, tail_tol: float | None = None) -> float:
    """Smallest ``T`` with tail bound at most ``tail_tol``, by monotone bisection."""
    tol = problem.quad.tail_tol if tail_tol is None else tail_tol
    amp = problem.K * problem.beta / problem.alpha
    radius = 0.0
    if amp > tol:
        lo, hi = 0.0, max(1.0, math.log(amp / tol) / problem.alpha)
        while tail_bound(problem, t, hi, side) > tol:
            lo, hi = hi, 2.0 * hi
            if hi > 1e9:
                raise IntervalError(f"tail bound does not reach {tol:g} within any finite radius")
        while hi - lo > 1e-12 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if tail_bound(problem, t, mid, side) > tol:
                lo = mid
            else:
                hi = mid
        radius = hi
    end = t - radius if side == "stable" else t + radius
    t_min, t_max = problem.system.interval
    if not t_min <= end <= t_max:
        raise IntervalError(
            f"truncation radius {radius:.4g} on the {side} side at t={t:g} needs time {end:.4g}, "
            f"outside the working interval [{t_min}, {t_max}]; enlarge [t_min, t_max]"
        )
    return radius


def _side_active(problem: ConjugacyProblem, t: float, side: str) -> bool:
    proj = problem.spec.P(t) if side == "stable" else problem.spec.Q(t)
    return bool(np.any(np.abs(proj) > 0))


def _radii(problem: ConjugacyProblem, ts: np.ndarray, tail_tol: float | None = None):
    out = np.zeros((len(ts), 2))
    for i, t in enumerate(ts):
        for j, side in enumerate(("stable", "unstable")):
            if _side_active(problem, t, side):
                out[i, j] = truncation_radius(problem, t, side, tail_tol)
    return out[:, 0], out[:, 1]


def _flow_config(problem: ConjugacyProblem) -> IntegratorConfig:
    cfg = problem.cache.config
    tol = min(cfg.rtol, problem.quad.panel_tol)
    return replace(cfg, rtol=tol, atol=min(cfg.atol, problem.quad.panel_tol))


# --------------------------------------------------------------------------
# h and H
# --------------------------------------------------------------------------


def _green_h_flow(problem: ConjugacyProblem, ts, taus, xis) -> np.ndarray:
    spec = problem.spec
    cache = problem.cache
    m, n = xis.shape
    x_t = nonlinear_flow_many(problem, taus, xis, ts[:, None])[:, 0]
    r_stable, r_unstable = _radii(problem, ts)
    config = _flow_config(problem)
    out = -x_t.copy()
    for radii, sign, proj, proj_fn in (
        (r_stable, -1.0, spec.P, spec.P),
        (r_unstable, 1.0, spec.Q, spec.Q),
    ):
        active = radii > 0
        ends = np.empty_like(x_t)
        if active.any():
            ends[active] = integrate_shifted(
                problem.system,
                problem.perturbation.f,
                config,
                ts[active],
                x_t[active],
                radii[active][:, None],
                sign,
            )[:, 0]
        for i in range(m):
            if active[i]:
                s = ts[i] + sign * radii[i]
                out[i] += cache.propagate(ts[i], s, proj(s) @ ends[i], proj_fn)
            else:
                out[i] += proj(ts[i]) @ x_t[i]
    return out


def _green_h_quadrature(problem: ConjugacyProblem, t: float, tau: float, xi: np.ndarray) -> np.ndarray:
    spec, cache, f = problem.spec, problem.cache, problem.perturbation.f
    n = xi.size
    x_t = nonlinear_flow(problem, tau, xi, t)
    r_stable, r_unstable = (r[0] for r in _radii(problem, np.array([t])))
    config = _flow_config(problem)
    system = problem.system

    def rhs(s, x):
        return system.matrix(s) @ x + f(np.array([s]), x[None, :])[0]

    total = np.zeros(n)
    for radius, sign, proj in ((r_stable, -1.0, spec.P), (r_unstable, 1.0, spec.Q)):
        if radius == 0.0:
            continue
        end = t + sign * radius
        traj = solve_ivp(
            rhs, (t, end), x_t, method=BlockRK45, dense_output=True, rtol=config.rtol, atol=config.atol
        )
        if traj.status != 0:
            raise IntegrationError(f"trajectory integration failed ({traj.message})", (t, end))

        def integrand(s, proj=proj, traj=traj):
            forcing = f(np.array([s]), traj.sol(s)[None, :])[0]
            return cache.propagate(t, s, proj(s) @ forcing, proj)

        a, b = (end, t) if sign < 0 else (t, end)
        value, _err = quad_vec(integrand, a, b, epsabs=problem.quad.panel_tol, epsrel=0.0, norm="max", limit=200000)
        total += -value if sign < 0 else value
    return total


def green_integral_h_many(problem: ConjugacyProblem, ts, taus, xis) -> np.ndarray:
    """Batched :func:`green_integral_h`; returns shape ``(m, n)``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    if problem.quad.panel_rule == "gauss-kronrod":
        return np.stack([_green_h_quadrature(problem, t, tau, xi) for t, tau, xi in zip(ts, taus, xis)])
    return _green_h_flow(problem, ts, taus, xis)


def green_integral_h(problem: ConjugacyProblem, t: float, tau: float, xi) -> np.ndarray:
    """``h(t, (tau, xi))``: the bounded solution of the linear system forced by ``-f(t, X(t, tau, xi))``.

    The error is at most ``2 tail_tol`` from truncation plus the panel
    (integrator) error, and the norm of the result is at most
    ``2 K beta / alpha`` up to that error.
    """
    return green_integral_h_many(problem, [t], [tau], np.asarray(xi, dtype=float)[None, :])[0]


def forward_map_H_many(problem: ConjugacyProblem, ts, xs) -> np.ndarray:
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return xs + green_integral_h_many(problem, ts, ts, xs)


def forward_map_H(problem: ConjugacyProblem, t: float, x) -> np.ndarray:
    """``H(t, x) = x + h(t, (t, x))``."""
    return forward_map_H_many(problem, [t], np.asarray(x, dtype=float)[None, :])[0]


# --------------------------------------------------------------------------
# g and G
# --------------------------------------------------------------------------


@dataclass
class PicardResult:
    """Converged collocation function ``z(s) = g(s, (center, xi))``.

    ``weights`` are the dichotomy weights ``exp(-alpha |log mu(s) - log mu(center)|)``
    of the nodes; ``deltas`` are weighted sup-norms of successive differences
    and ``ratios`` the quotients of consecutive deltas above the noise floor.
    """

    center: float
    xi: np.ndarray
    times: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    iterations: int
    final_delta: float
    deltas: list[float]
    ratios: list[float]
    converged: bool
    bounded: bool
    contraction_constant: float
    noise_floor: float
    noise_limited: bool

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    @property
    def g_values(self) -> dict[float, np.ndarray]:
        return {float(t): v for t, v in zip(self.times, self.values)}

    def value_at(self, t: float) -> np.ndarray:
        if len(self.times) == 1:
            return self.values[0].copy()
        return CubicSpline(self.times, self.values, axis=0)(t)

    @property
    def center_value(self) -> np.ndarray:
        return self.values[int(np.argmin(np.abs(self.times - self.center)))]

    def summary(self) -> dict:
        return {
            "center": self.center,
            "iterations": self.iterations,
            "final_delta": self.final_delta,
            "max_ratio": self.max_ratio,
            "ratios": list(self.ratios),
            "converged": self.converged,
            "bounded": self.bounded,
            "noise_limited": self.noise_limited,
        }


# sweeps are restarted, and re-projected, after this much elapsed time
REPROJECT_EVERY = 2.0


def _node_grid(u_lo: float, u_hi: float, spacing: float) -> np.ndarray:
    left = np.linspace(-u_lo, 0.0, max(2, math.ceil(u_lo / spacing - 1e-9) + 1)) if u_lo > 0 else np.zeros(1)
    right = np.linspace(0.0, u_hi, max(2, math.ceil(u_hi / spacing - 1e-9) + 1)) if u_hi > 0 else np.zeros(1)
    return np.concatenate([left, right[1:]])


class _PiecewiseCubic:
    """Lightweight evaluator for the coefficients of a scipy cubic spline."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray):
        spline = CubicSpline(nodes, values, axis=0)
        self.breaks = spline.x
        self.coeffs = spline.c
        self.last = len(self.breaks) - 2

    def __call__(self, u: float) -> np.ndarray:
        i = min(max(int(np.searchsorted(self.breaks, u, side="right")) - 1, 0), self.last)
        dx = u - self.breaks[i]
        c = self.coeffs[:, i]
        return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]


def _range_projectors(problem: ConjugacyProblem, times: np.ndarray, sign: float) -> np.ndarray:
    """``P(s)`` for the forward (stable) sweep, ``Q(s)`` for the backward one; shape ``(m, n, n)``."""
    p = problem.spec.P_many(times)
    return p if sign > 0 else np.eye(p.shape[-1]) - p


def _sweep(problem, taus, u_nodes, base, sign, nonlinear_base, spline):
    """One directional sweep of the Picard map, returning node values of shape ``(N, m, n)``.

    For ``sign = +1`` integrates ``E' = A E + P(s) F(s)`` from ``E = 0`` at the
    left end of the window, which gives ``int T(t,s) P(s) F(s) ds`` over the
    part of the window left of ``t``; ``sign = -1`` runs backward from the
    right end with ``Q`` and yields minus the mirrored integral.  ``F`` is
    ``f(s, B + z)`` for a linear base ``B`` and ``f(s, B + z) - f(s, B)`` for
    a nonlinear one.  An error made at ``s`` reaches the centre damped by at
    least ``exp(-alpha |log mu(s) - log mu(tau)|)`` on either side, so each
    trajectory's tolerance is multiplied by the inverse of that factor plus
    one.  The state is re-projected whenever the integration is restarted.
    """
    system = problem.system
    f = problem.perturbation.f
    alpha = problem.alpha
    m = len(taus)
    n = system.dimension
    lo, hi = system.interval
    pic = problem.picard
    config = replace(problem.cache.config, rtol=pic.rtol, atol=pic.rtol)
    order = np.arange(len(u_nodes)) if sign > 0 else np.arange(len(u_nodes))[::-1]
    u_start = u_nodes[order[0]]
    v_nodes = sign * (u_nodes[order] - u_start)
    log_tau = np.asarray(problem.rate.log_mu(taus), dtype=float)
    zero = np.zeros((m, n))

    def times(v):
        return np.clip(taus + u_start + sign * v, lo, hi)

    def rhs(v, e):
        u = u_start + sign * v
        s = times(v)
        b = base(u)
        z = spline(u).reshape(m, n) if spline is not None else zero
        if nonlinear_base:
            both = f(np.concatenate([s, s]), np.concatenate([b + z, b]))
            forcing = both[:m] - both[m:]
        else:
            forcing = f(s, b + z)
        out = np.einsum("mij,mj->mi", system.matrices(s), e.reshape(m, n))
        out += np.einsum("mij,mj->mi", _range_projectors(problem, s, sign), forcing)
        return sign * out.ravel()

    def weight(v):
        gap = np.abs(log_tau - np.asarray(problem.rate.log_mu(times(v)), dtype=float))
        return 1.0 + np.exp(np.minimum(alpha * gap, 700.0))

    out = np.zeros((len(u_nodes), m, n))
    per_chunk = max(1, int(round(REPROJECT_EVERY / pic.grid_spacing)))
    state = np.zeros(m * n)
    k = 0
    while k < len(u_nodes) - 1:
        j = min(k + per_chunk, len(u_nodes) - 1)
        sol = solve_blocks(rhs, v_nodes[k], v_nodes[j], state, n, config, t_eval=v_nodes[k : j + 1], weight=weight)
        values = sol.y.T.reshape(-1, m, n)
        s_end = times(v_nodes[j])
        values[-1] = np.einsum("mij,mj->mi", _range_projectors(problem, s_end, sign), values[-1])
        out[order[k : j + 1]] = values
        state = values[-1].ravel()
        k = j
    return out


def _base_trajectory(problem, taus, xis, u_lo, u_hi, nonlinear_base):
    """Base trajectory through ``(tau_i, xi_i)`` as a function of the offset ``u``.

    Both halves are integrated outward from the centre, the direction in which
    the dichotomy makes the integration well conditioned.
    """
    forcing = problem.perturbation.f if nonlinear_base else None
    config = problem.cache.config
    left = integrate_shifted_dense(problem.system, forcing, config, taus, xis, u_lo, -1.0)
    right = integrate_shifted_dense(problem.system, forcing, config, taus, xis, u_hi, 1.0)
    return lambda u: left(-u) if u < 0 else right(u)


def picard_g_many(
    problem: ConjugacyProblem,
    taus,
    xis,
    u_lo: float | None = None,
    u_hi: float | None = None,
    base: str = "linear",
    z0: Callable | np.ndarray | None = None,
) -> list[PicardResult]:
    """Run the Picard iteration for several centres ``(tau_i, xi_i)`` at once.

    All runs share the relative window ``[tau_i - u_lo, tau_i + u_hi]`` and
    collocation nodes ``tau_i + u_k``.  ``base="nonlinear"`` replaces the
    linear trajectory ``Y`` by the nonlinear ``X`` and the forcing by
    ``f(s, X + z) - f(s, X)``, whose unique bounded fixed point is zero.

    The iteration stops when the weighted sup-norm of the last difference is
    at most ``stop_tol (1 - rho) / rho`` with ``rho = 2 K gamma / alpha``, or
    at most the noise floor of the sweeps when that is larger.  A run whose
    difference fails to shrink by ``(1 + rho) / 2`` for ``STALL_STEPS``
    consecutive steps has reached the accuracy of its sweeps and stops as
    well.  Runs stopped above ``stop_tol (1 - rho) / rho`` are flagged as
    ``noise_limited``; their ``final_delta`` measures the attained accuracy.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    m, n = xis.shape
    if base not in ("linear", "nonlinear"):
        raise ValueError("base must be 'linear' or 'nonlinear'")
    r_stable, r_unstable = _radii(problem, taus)
    u_lo = float(r_stable.max()) if u_lo is None else float(u_lo)
    u_hi = float(r_unstable.max()) if u_hi is None else float(u_hi)
    if np.any(u_lo < r_stable - 1e-12) or np.any(u_hi < r_unstable - 1e-12):
        raise ValueError("window does not cover the truncation radius around every centre")
    problem.system.require_inside(*(taus - u_lo), *(taus + u_hi))

    pic = problem.picard
    u_nodes = _node_grid(u_lo, u_hi, pic.grid_spacing)
    N = len(u_nodes)
    times = taus[None, :] + u_nodes[:, None]
    stable_on = u_lo > 0 and any(_side_active(problem, t, "stable") for t in taus)
    unstable_on = u_hi > 0 and any(_side_active(problem, t, "unstable") for t in taus)
    nonlinear_base = base == "nonlinear"

    if z0 is None:
        z = np.zeros((N, m, n))
    elif callable(z0):
        z = np.stack([np.stack([np.asarray(z0(s), dtype=float) for s in row]) for row in times])
    else:
        z = np.broadcast_to(np.asarray(z0, dtype=float), (N, m, n)).copy()

    trajectory = _base_trajectory(problem, taus, xis, u_lo, u_hi, nonlinear_base)
    log_mu = np.asarray(problem.rate.log_mu(times.ravel()), dtype=float).reshape(N, m)
    weights = np.exp(-problem.alpha * np.abs(log_mu - np.asarray(problem.rate.log_mu(taus), dtype=float)))
    bound = problem.displacement_bound
    noise = NOISE_FLOOR_FACTOR * pic.rtol
    rho = problem.contraction_constant
    target = pic.stop_tol * (1.0 - rho) / rho if 0.0 < rho < 1.0 else (math.inf if rho == 0.0 else pic.stop_tol)
    threshold = max(target, noise)

    # a step is stalled when it shrinks the difference by less than (1 + rho) / 2, halfway
    # between the contraction constant and no progress at all
    stall_factor = 0.5 * (1.0 + min(rho, 1.0))
    stalls = np.zeros(m, dtype=int)
    deltas: list[np.ndarray] = []
    ratios: list[list[float]] = [[] for _ in range(m)]
    bounded = np.ones(m, dtype=bool)
    converged = False
    iteration = 0
    for iteration in range(1, pic.max_iter + 1):
        spline = _PiecewiseCubic(u_nodes, z.reshape(N, m * n)) if N > 1 and np.any(z != 0.0) else None
        z_new = np.zeros((N, m, n))
        if stable_on:
            z_new += _sweep(problem, taus, u_nodes, trajectory, 1.0, nonlinear_base, spline)
        if unstable_on:
            # the backward sweep already carries the minus sign of the unstable integral
            z_new += _sweep(problem, taus, u_nodes, trajectory, -1.0, nonlinear_base, spline)
        excess = np.maximum(0.0, np.linalg.norm(z_new, axis=2) - bound) * weights
        bounded &= np.all(excess <= noise, axis=0)
        delta = np.max(np.linalg.norm(z_new - z, axis=2) * weights, axis=0)
        if deltas:
            prev = deltas[-1]
            for i in range(m):
                if prev[i] > noise and delta[i] > noise:
                    ratios[i].append(float(delta[i] / prev[i]))
            stalls = np.where((delta > threshold) & (delta >= stall_factor * prev), stalls + 1, 0)
        deltas.append(delta)
        z = z_new
        if np.all((delta <= threshold) | (stalls >= STALL_STEPS)):
            converged = True
            break
    if not converged:
        raise ConvergenceError(iteration, float(np.max(deltas[-1])))

    results = []
    for i in range(m):
        results.append(
            PicardResult(
                center=float(taus[i]),
                xi=xis[i].copy(),
                times=times[:, i].copy(),
                values=z[:, i].copy(),
                weights=weights[:, i].copy(),
                iterations=iteration,
                final_delta=float(deltas[-1][i]),
                deltas=[float(d[i]) for d in deltas],
                ratios=ratios[i],
                converged=converged,
                bounded=bool(bounded[i]),
                contraction_constant=rho,
                noise_floor=noise,
                noise_limited=bool(deltas[-1][i] > target),
            )
        )
    return results


def picard_g(
    problem: ConjugacyProblem,
    tau: float,
    xi,
    window: tuple[float, float] | None = None,
    base: str = "linear",
    z0: Callable | np.ndarray | None = None,
) -> PicardResult:
    """Fixed point ``g(., (tau, xi))`` on a collocation grid over ``window``.

    ``window`` defaults to ``[tau - T*, tau + T*]`` with the truncation radii
    at ``tau``; a supplied window must contain that interval.  Values are
    accurate near ``tau``; towards the window ends they lose the truncated
    part of the integrals.
    """
    xi = np.asarray(xi, dtype=float)
    u_lo = u_hi = None
    if window is not None:
        if not window[0] <= tau <= window[1]:
            raise ValueError("window must contain the centre tau")
        u_lo, u_hi = tau - window[0], window[1] - tau
    return picard_g_many(problem, [tau], xi[None, :], u_lo, u_hi, base, z0)[0]


def inverse_map_G_many(problem: ConjugacyProblem, ts, ys, chunk: int = 16, with_runs: bool = False):
    """``G(t_i, y_i)`` for many points; optionally also return the Picard runs.

    Points are batched in order of ``|y|``: a batch shares its step sizes and
    iteration count, and large states make the forcing oscillate fast along
    the base trajectory, so mixing them with small ones slows the whole batch.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.empty_like(ys)
    runs: list[PicardResult | None] = [None] * len(ts)
    order = np.argsort(np.linalg.norm(ys, axis=1), kind="stable")
    for start in range(0, len(ts), chunk):
        idx = order[start : start + chunk]
        batch = picard_g_many(problem, ts[idx], ys[idx])
        out[idx] = ys[idx] + np.stack([r.center_value for r in batch])
        for i, r in zip(idx, batch):
            runs[i] = r
    return (out, runs) if with_runs else out


def inverse_map_G(problem: ConjugacyProblem, t: float, y) -> np.ndarray:
    """``G(t, y) = y + g(t, (t, y))``."""
    return inverse_map_G_many(problem, [t], np.asarray(y, dtype=float)[None, :])[0]


# --------------------------------------------------------------------------
# Hoelder constants
# --------------------------------------------------------------------------


@dataclass
class HolderConstants:
    p: float
    q: float
    p_prime: float | None
    q_prime: float | None
    M_tilde: float
    lam: float | None
    separations: tuple[float, float]
    notes: list[str] = field(default_factory=list)

    def as_tuple(self) -> tuple:
        return (self.p, self.q, self.p_prime, self.q_prime)

    def to_dict(self) -> dict:
        return dict(vars(self), separations=list(self.separations))


def _m_tilde(rate: GrowthRate, alpha: float, gamma: float, M: float, t: float, d: float) -> float:
    tau = math.log(1.0 / d) / (M + gamma)
    lt = float(rate.log_mu(t))
    back = float(rate.log_mu(t - tau)) - lt  # log of mu(t - tau) / mu(t) < 0
    fwd = lt - float(rate.log_mu(t + tau))  # log of mu(t) / mu(t + tau) < 0
    logs = [math.ceil(math.log(d) / g) + 1 for g in (back, fwd)]
    return float(max(logs + [alpha, M]))


def h_side_holder_constants(
    K: float, alpha: float, beta: float, gamma: float, M: float, rate: GrowthRate, t: float, separations: Sequence[float]
) -> tuple[float, float, float]:
    """``(p, q, M_tilde)`` for ``|H(t,x) - H(t,x')| <= p |x - x'|^q``.

    ``M_tilde`` is maximised over the separations to be certified, so the
    returned ``q`` is valid for each of them.
    """
    if not alpha > gamma:
        raise GateError(HOLDER_GATE, f"alpha = {alpha:g} does not exceed gamma = {gamma:g}")
    if not gamma > 0:
        raise GateError("gamma > 0", "q = min(alpha/M~, gamma/(M + gamma)) vanishes when gamma = 0")
    seps = [float(d) for d in separations]
    if not seps or min(seps) <= 0 or max(seps) >= 1:
        raise ValueError("separations must lie in (0, 1)")
    p = 1 + 4 * K * beta / alpha + K * gamma / (alpha + gamma) + K * gamma / (alpha - gamma)
    m_tilde = max(_m_tilde(rate, alpha, gamma, M, t, d) for d in seps)
    q = min(alpha / m_tilde, gamma / (M + gamma))
    return p, q, m_tilde


def g_side_holder_constants(
    K: float, alpha: float, beta: float, gamma: float, M: float, rate: GrowthRate, t: float, separations: Sequence[float]
) -> tuple[float, float, float, list[str]]:
    """``(p', q', lambda, notes)`` for ``|G(t,y) - G(t,y')| <= p' |y - y'|^q'``."""
    p, q, m_tilde = h_side_holder_constants(K, alpha, beta, gamma, M, rate, t, separations)
    denom = 1 - 2 * K * gamma * math.e / alpha
    if denom <= 0:
        raise GateError(LAMBDA_GATE, f"2*K*gamma*e/alpha = {1 - denom:.6g}, lambda is undefined")
    lam = (4 * K * beta / alpha + 2 * K * gamma / alpha) / denom * (1 + LAMBDA_MARGIN)
    notes = []
    third = math.inf
    for d in separations:
        tau = math.log(1.0 / d) / (M + gamma)
        growth = float(rate.log_mu(t + tau) - rate.log_mu(t))
        third = min(third, alpha * growth / (M * tau) if M > 0 else math.inf)
        if not growth < 1.0 / alpha:
            notes.append(f"side condition ln(mu(t+tau~)/mu(t)) < 1/alpha fails at separation {d:g}")
    q_prime = min(alpha / m_tilde, gamma / (M + gamma), third)
    return 1 + lam, q_prime, lam, notes


def theoretical_holder_constants(
    problem: ConjugacyProblem, t: float = 0.0, separations: Sequence[float] = (2.0**-8, 0.5)
) -> HolderConstants:
    """Proof-level constants ``(p, q, p', q')`` evaluated at time ``t``.

    ``separations`` lists the distances ``|x - x'|`` to be certified; the
    exponent constant ``M~`` is evaluated at each and the largest is used.
    """
    problem.require_holder_gate()
    args = (problem.K, problem.alpha, problem.beta, problem.gamma, problem.system.norm_bound, problem.rate, t, separations)
    p, q, m_tilde = h_side_holder_constants(*args)
    p_prime, q_prime, lam, notes = g_side_holder_constants(*args)
    seps = (float(min(separations)), float(max(separations)))
    return HolderConstants(p, q, p_prime, q_prime, m_tilde, lam, seps, notes)
