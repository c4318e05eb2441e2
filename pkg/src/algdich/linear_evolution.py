"""Evolution operator of a nonautonomous linear system ``x' = A(t) x``.

``T(t, s)`` is realised by adaptive Runge-Kutta integration.  Transitions
between knots of a uniform grid are cached in both time directions, so a
request ``T(t, s)`` integrates only the two partial pieces at its ends and
chains cached segment matrices in between.  Backward requests are integrated
backward; nothing is ever obtained by matrix inversion.

The integrator is scipy's Dormand-Prince 4(5) pair with one change: the
error norm is taken per block (one block per trajectory or matrix column),
each block measured relative to its own magnitude.  A decaying column is
then held to its own relative accuracy instead of being swamped by a
growing neighbour, and many independent trajectories can share one call.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.integrate._ivp.rk import RK45

__all__ = [
    "IntegratorConfig",
    "LinearSystem",
    "EvolutionCache",
    "IntegrationError",
    "IntervalError",
    "BlockRK45",
    "solve_blocks",
    "estimate_norm_bound",
    "transition",
    "projected_transition",
]

CoefficientMap = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """The ODE integrator failed (step underflow or non-finite state)."""

    def __init__(self, message: str, interval: tuple[float, float] | None = None):
        if interval is not None:
            message = f"{message} on [{interval[0]:.6g}, {interval[1]:.6g}]"
        super().__init__(message)
        self.interval = interval


class IntervalError(ValueError):
    """A time lies outside the declared working interval."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances of the embedded 4(5) pair and the cache knot spacing."""

    rtol: float = 1e-10
    atol: float = 1e-10
    knot_spacing: float = 0.25
    max_step: float = math.inf

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.knot_spacing > 0 and self.max_step > 0):
            raise ValueError("integrator tolerances, knot spacing and max_step must be positive")

    def tightened(self, factor: float) -> "IntegratorConfig":
        """Divide both tolerances by ``factor``."""
        return replace(self, rtol=self.rtol / factor, atol=self.atol / factor)


class BlockRK45(RK45):
    """RK45 whose step control uses a block-relative maximum norm.

    The state is viewed as consecutive blocks of ``block_size`` entries.  The
    error of every block is scaled by ``atol + rtol * max|block|`` and the
    step is accepted when the largest scaled error is below one.  An optional
    ``weight(t)`` returns one tolerance multiplier per block.
    """

    def __init__(self, fun, t0, y0, t_bound, block_size=None, weight=None, **extraneous):
        super().__init__(fun, t0, y0, t_bound, **extraneous)
        self.block_size = int(block_size or self.n)
        if self.n % self.block_size:
            raise ValueError("state size must be a multiple of block_size")
        self.weight = weight

    def _estimate_error_norm(self, K, h, scale):
        b = self.block_size
        err = self._estimate_error(K, h).reshape(-1, b)
        # recover max(|y|, |y_new|) from the componentwise scale built by the base class
        magnitude = ((scale - self.atol) / self.rtol).reshape(-1, b).max(axis=1, keepdims=True)
        tol = self.atol + self.rtol * magnitude
        if self.weight is not None:
            tol = tol * np.asarray(self.weight(self.t + 0.5 * h), dtype=float).reshape(-1, 1)
        return float(np.max(np.abs(err) / tol))


def solve_blocks(
    fun,
    t0: float,
    t1: float,
    y0: np.ndarray,
    block_size: int,
    config: IntegratorConfig,
    t_eval=None,
    weight=None,
    dense_output: bool = False,
):
    """Run :class:`BlockRK45` from ``t0`` to ``t1`` and validate the outcome."""
    sol = solve_ivp(
        fun,
        (t0, t1),
        np.asarray(y0, dtype=float),
        method=BlockRK45,
        block_size=block_size,
        weight=weight,
        rtol=config.rtol,
        atol=config.atol,
        max_step=config.max_step,
        t_eval=t_eval,
        dense_output=dense_output,
    )
    if sol.status != 0:
        raise IntegrationError(f"integration failed ({sol.message})", (t0, t1))
    if not np.all(np.isfinite(sol.y)):
        raise IntegrationError("non-finite state", (t0, t1))
    return sol


@dataclass(frozen=True)
class LinearSystem:
    """Coefficient map ``A(t)`` of ``x' = A(t) x`` on a working interval.

    ``coeff`` is vectorised: given a 1-D array of ``m`` times it returns an
    array of shape ``(m, n, n)``.  ``norm_bound`` is the constant ``M``
    bounding the spectral norm of ``A(t)``; when it was obtained by sampling
    ``norm_bound_estimated`` is set.
    """

    dimension: int
    coeff: CoefficientMap
    norm_bound: float
    label: str
    interval: tuple[float, float]
    norm_bound_estimated: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.interval[0] < self.interval[1]:
            raise ValueError(f"empty working interval {self.interval}")
        if self.norm_bound < 0:
            raise ValueError("norm bound must be nonnegative")

    def matrices(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.asarray(self.coeff(ts), dtype=float)
        return np.broadcast_to(out, (ts.size, self.dimension, self.dimension))

    def matrix(self, t: float) -> np.ndarray:
        return self.matrices(np.array([t], dtype=float))[0]

    def require_inside(self, *times: float) -> None:
        lo, hi = self.interval
        for t in times:
            if not lo <= t <= hi:
                raise IntervalError(
                    f"time {t!r} lies outside the working interval [{lo}, {hi}] of system {self.label!r}"
                )

    def check(self, grid) -> list[tuple[str, float, float]]:
        """Return (check, t, value) for each grid point violating an invariant."""
        grid = np.asarray(grid, dtype=float)
        mats = self.matrices(grid)
        problems = []
        for t, a in zip(grid, mats):
            if not np.all(np.isfinite(a)):
                problems.append(("finite", float(t), float("nan")))
                continue
            norm = float(np.linalg.norm(a, 2))
            if norm > self.norm_bound * (1 + 1e-12):
                problems.append(("norm_bound", float(t), norm))
        return problems


def estimate_norm_bound(coeff: CoefficientMap, interval: tuple[float, float], samples: int = 4001) -> float:
    """Sampled supremum of the spectral norm of ``A(t)`` (not a certified bound)."""
    grid = np.linspace(interval[0], interval[1], samples)
    mats = np.asarray(coeff(grid), dtype=float)
    return float(np.max(np.linalg.norm(mats, ord=2, axis=(1, 2))))


def _check_projector(projector: np.ndarray, tol: float = 1e-9) -> None:
    if not np.allclose(projector @ projector, projector, atol=tol, rtol=0):
        raise ValueError("projector is not idempotent")


class EvolutionCache:
    """Lazily populated knot cache for ``T(t, s)``.

    Segment matrices ``T(t_{k+1}, t_k)`` and ``T(t_k, t_{k+1})`` are computed
    on first use under a lock, so concurrent readers are safe.  Call
    :meth:`warm_up` to populate everything up front.
    """

    def __init__(self, system: LinearSystem, config: IntegratorConfig | None = None):
        self.system = system
        self.config = config or IntegratorConfig()
        lo, hi = system.interval
        segments = max(1, math.ceil((hi - lo) / self.config.knot_spacing - 1e-9))
        self.knots = np.linspace(lo, hi, segments + 1)
        self.anchor = float(self.knots[np.argmin(np.abs(self.knots))])
        self._forward: list[np.ndarray | None] = [None] * segments
        self._backward: list[np.ndarray | None] = [None] * segments
        self._lock = threading.Lock()
        self._snap = 1e-12 * max(1.0, abs(lo), abs(hi))

    # -- raw integration ---------------------------------------------------
    def _integrate(self, t0: float, t1: float, columns: np.ndarray) -> np.ndarray:
        """Integrate the columns of ``columns`` (shape (n, k)) from t0 to t1."""
        n = self.system.dimension
        k = columns.shape[1]
        if k == 0 or t0 == t1:
            return columns.copy()
        coeff = self.system.coeff

        def rhs(t, y):
            a = np.asarray(coeff(np.array([t])), dtype=float).reshape(n, n)
            return (y.reshape(k, n) @ a.T).ravel()

        # the equation is linear, so each column is integrated at unit size and rescaled;
        # this keeps the accuracy relative however small the column has become
        size = np.max(np.abs(columns), axis=0)
        size[size == 0.0] = 1.0
        sol = solve_blocks(rhs, t0, t1, (columns / size).T.ravel(), n, self.config, t_eval=[t1])
        return sol.y[:, -1].reshape(k, n).T * size

    def _segment(self, k: int, forward: bool) -> np.ndarray:
        store = self._forward if forward else self._backward
        mat = store[k]
        if mat is None:
            with self._lock:
                mat = store[k]
                if mat is None:
                    a, b = self.knots[k], self.knots[k + 1]
                    eye = np.eye(self.system.dimension)
                    mat = self._integrate(a, b, eye) if forward else self._integrate(b, a, eye)
                    store[k] = mat
        return mat

    def warm_up(self) -> None:
        """Compute every segment matrix in both directions."""
        for k in range(len(self._forward)):
            self._segment(k, True)
            self._segment(k, False)

    # -- index helpers -----------------------------------------------------
    def _knot_at_or_after(self, t: float) -> int:
        i = int(np.searchsorted(self.knots, t - self._snap, side="left"))
        return min(i, len(self.knots) - 1)

    def _knot_at_or_before(self, t: float) -> int:
        i = int(np.searchsorted(self.knots, t + self._snap, side="right")) - 1
        return max(i, 0)

    def _at_knot(self, t: float, i: int) -> bool:
        return abs(t - self.knots[i]) <= self._snap

    # -- public evaluation -------------------------------------------------
    def propagate(self, t: float, s: float, initial: np.ndarray, projector: Callable | None = None) -> np.ndarray:
        """Return ``T(t, s) @ initial`` for a matrix or vector ``initial``.

        When ``projector`` (a function of time returning a projector ``R``)
        is given, the columns are assumed to lie in the range of ``R(s)`` and
        are re-projected by ``R(knot)`` after each cached segment.  This uses
        ``T(t, s) R(s) = R(t) T(t, s)`` to keep rounding errors from leaking
        into complementary directions.
        """
        t, s = float(t), float(s)
        self.system.require_inside(t, s)
        initial = np.asarray(initial, dtype=float)
        vector = initial.ndim == 1
        m = initial.reshape(self.system.dimension, -1).copy()
        if t == s:
            return m.ravel() if vector else m
        if t > s:
            i, j = self._knot_at_or_after(s), self._knot_at_or_before(t)
            if i > j:
                m = self._integrate(s, t, m)
            else:
                if not self._at_knot(s, i):
                    m = self._integrate(s, self.knots[i], m)
                for k in range(i, j):
                    m = self._segment(k, True) @ m
                    if projector is not None:
                        m = projector(self.knots[k + 1]) @ m
                if not self._at_knot(t, j):
                    m = self._integrate(self.knots[j], t, m)
        else:
            i, j = self._knot_at_or_before(s), self._knot_at_or_after(t)
            if i < j:
                m = self._integrate(s, t, m)
            else:
                if not self._at_knot(s, i):
                    m = self._integrate(s, self.knots[i], m)
                for k in range(i - 1, j - 1, -1):
                    m = self._segment(k, False) @ m
                    if projector is not None:
                        m = projector(self.knots[k]) @ m
                if not self._at_knot(t, j):
                    m = self._integrate(self.knots[j], t, m)
        return m.ravel() if vector else m

    def transition(self, t: float, s: float) -> np.ndarray:
        if t == s:
            self.system.require_inside(t)
            return np.eye(self.system.dimension)
        return self.propagate(t, s, np.eye(self.system.dimension))

    def projected_transition(self, t: float, s: float, projector: np.ndarray, projector_fn: Callable | None = None) -> np.ndarray:
        projector = np.asarray(projector, dtype=float)
        _check_projector(projector)
        if not projector.any():
            self.system.require_inside(t, s)
            return np.zeros_like(projector)
        return self.propagate(t, s, projector, projector_fn)

    def direct_transition(self, t: float, s: float) -> np.ndarray:
        """``T(t, s)`` by a single integration, bypassing the knot cache."""
        self.system.require_inside(t, s)
        return self._integrate(float(s), float(t), np.eye(self.system.dimension))

    def fundamental_matrices(self) -> dict[float, np.ndarray]:
        """Map each knot ``t_k`` to ``Phi(t_k) = T(t_k, anchor)``."""
        k0 = int(np.argmin(np.abs(self.knots - self.anchor)))
        out = {self.anchor: np.eye(self.system.dimension)}
        phi = np.eye(self.system.dimension)
        for k in range(k0, len(self.knots) - 1):
            phi = self._segment(k, True) @ phi
            out[float(self.knots[k + 1])] = phi
        phi = np.eye(self.system.dimension)
        for k in range(k0 - 1, -1, -1):
            phi = self._segment(k, False) @ phi
            out[float(self.knots[k])] = phi
        return out


def transition(cache: EvolutionCache, t: float, s: float) -> np.ndarray:
    """Evolution operator ``T(t, s)``; identity when ``t == s``."""
    return cache.transition(t, s)


def projected_transition(cache: EvolutionCache, t: float, s: float, projector: np.ndarray) -> np.ndarray:
    """``T(t, s) @ projector`` obtained by integrating the projected columns only."""
    return cache.projected_transition(t, s, projector)
