import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdich.growth_rates import get_rate
from algdich.linear_evolution import (
    EvolutionCache,
    IntegrationError,
    IntegratorConfig,
    IntervalError,
    LinearSystem,
    estimate_norm_bound,
    projected_transition,
    transition,
)


def scalar_system(a=1.0, interval=(-10.0, 10.0)):
    return LinearSystem(
        dimension=1,
        coeff=lambda t: np.full((np.size(t), 1, 1), -a),
        norm_bound=abs(a),
        label="scalar",
        interval=interval,
    )


def diagonal_system(eta1, eta2, rate, interval=(-10.0, 10.0)):
    def coeff(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        r = rate.log_derivative(t) * np.ones_like(t)
        out = np.zeros((t.size, 2, 2))
        out[:, 0, 0] = -eta1 * r
        out[:, 1, 1] = eta2 * r
        return out

    return LinearSystem(2, coeff, max(eta1, eta2) * 2.0, "diag", interval)


def diag_oracle(eta1, eta2, rate, t, s):
    # closed-form transition of the diagonal system: powers of mu(t)/mu(s)
    lr = float(rate.log_mu(t) - rate.log_mu(s))
    return np.diag([math.exp(-eta1 * lr), math.exp(eta2 * lr)])


def coupled_system(interval=(-6.0, 6.0)):
    # constant non-normal matrix, closed form via scipy's expm as an independent oracle
    A = np.array([[-1.0, 2.0], [0.0, 0.5]])
    return (
        LinearSystem(2, lambda t: np.broadcast_to(A, (np.size(t), 2, 2)).copy(), np.linalg.norm(A, 2), "coupled", interval),
        A,
    )


EXP = get_rate("exponential")
ARC = get_rate("arctan-exponential")


@pytest.fixture(scope="module")
def diag_cache():
    return EvolutionCache(diagonal_system(1.0, 1.0, EXP))


@pytest.fixture(scope="module")
def arc_cache():
    return EvolutionCache(diagonal_system(1.0, 1.0, ARC))


def test_identity_at_equal_times(diag_cache):
    assert np.array_equal(transition(diag_cache, 2.5, 2.5), np.eye(2))


def test_scalar_decay():
    cache = EvolutionCache(scalar_system())
    assert transition(cache, 1.0, 0.0)[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-9)
    assert transition(cache, 0.0, 1.0)[0, 0] == pytest.approx(math.e, rel=1e-9)


def test_example_diagonal_forward_and_backward(diag_cache):
    np.testing.assert_allclose(transition(diag_cache, 2.0, 0.0), np.diag([math.exp(-2), math.exp(2)]), rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(transition(diag_cache, -2.0, 0.0), np.diag([math.exp(2), math.exp(-2)]), rtol=1e-9, atol=1e-14)


def test_projected_transition_examples(diag_cache):
    P = np.diag([1.0, 0.0])
    out = projected_transition(diag_cache, 3.0, 0.0, P)
    assert out[0, 0] == pytest.approx(math.exp(-3.0), rel=1e-9)
    assert np.all(out[[0, 1, 1], [1, 0, 1]] == 0.0)
    assert np.array_equal(projected_transition(diag_cache, 1.3, -0.7, np.zeros((2, 2))), np.zeros((2, 2)))
    np.testing.assert_allclose(
        projected_transition(diag_cache, 1.3, -0.7, np.eye(2)), transition(diag_cache, 1.3, -0.7), rtol=1e-12
    )


def test_projected_transition_rejects_non_idempotent(diag_cache):
    with pytest.raises(ValueError):
        projected_transition(diag_cache, 1.0, 0.0, np.array([[2.0, 0.0], [0.0, 0.0]]))


def test_nonautonomous_rate_matches_power_formula(arc_cache):
    for t, s in [(3.7, -4.2), (-8.1, 2.0), (0.1, 0.05), (9.0, 8.99)]:
        np.testing.assert_allclose(transition(arc_cache, t, s), diag_oracle(1, 1, ARC, t, s), rtol=1e-8, atol=1e-300)


def test_coupled_system_against_matrix_exponential():
    from scipy.linalg import expm

    system, A = coupled_system()
    cache = EvolutionCache(system)
    for t, s in [(2.3, -1.1), (-3.0, 1.5), (0.2, 0.1)]:
        np.testing.assert_allclose(transition(cache, t, s), expm(A * (t - s)), rtol=1e-8, atol=1e-12)


def test_anchor_is_exact_identity(diag_cache):
    phi = diag_cache.fundamental_matrices()
    assert np.array_equal(phi[diag_cache.anchor], np.eye(2))
    # a knot entry agrees with the closed form T(t_k, anchor)
    t_k = sorted(phi)[3]
    np.testing.assert_allclose(phi[t_k], diag_oracle(1, 1, EXP, t_k, diag_cache.anchor), rtol=1e-9)


def test_composed_segments_match_direct_integration(arc_cache):
    for t, s in [(6.3, -7.1), (-5.5, 4.4)]:
        composed = transition(arc_cache, t, s)
        direct = arc_cache.direct_transition(t, s)
        assert np.max(np.abs(composed - direct) / np.maximum(np.abs(direct), 1e-300)) < 1e-8


def test_outside_interval_is_an_error(diag_cache):
    with pytest.raises(IntervalError):
        transition(diag_cache, 10.5, 0.0)
    with pytest.raises(IntervalError):
        transition(diag_cache, 0.0, -11.0)


def test_integration_failure_names_subinterval():
    system = LinearSystem(
        1,
        lambda t: np.where(np.atleast_1d(t)[:, None, None] > 0.6, np.nan, -1.0) * np.ones((np.size(t), 1, 1)),
        1.0,
        "broken",
        (-2.0, 2.0),
    )
    cache = EvolutionCache(system)
    with pytest.raises(IntegrationError, match=r"\[0\.5, 0\.75\]"):
        transition(cache, 1.0, 0.0)


def test_norm_bound_checks():
    system = diagonal_system(1.0, 2.0, ARC)
    grid = np.linspace(-10, 10, 101)
    assert system.check(grid) == []
    estimate = estimate_norm_bound(system.coeff, system.interval)
    expected = 2.0 * float(np.max(ARC.log_derivative(np.linspace(-10, 10, 4001))))
    assert estimate == pytest.approx(expected, rel=1e-6)
    too_small = LinearSystem(2, system.coeff, 1.0, "tight", system.interval)
    assert too_small.check(grid)


def test_tightened_config():
    cfg = IntegratorConfig().tightened(10)
    assert cfg.rtol == pytest.approx(1e-11) and cfg.atol == pytest.approx(1e-11)
    assert cfg.knot_spacing == 0.25


def test_concurrent_reads_are_consistent():
    cache = EvolutionCache(diagonal_system(1.0, 1.0, ARC))
    pairs = [(t, s) for t in np.linspace(-8, 8, 9) for s in np.linspace(-8, 8, 5)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda p: transition(cache, *p), pairs))
    for (t, s), value in zip(pairs, results):
        np.testing.assert_array_equal(value, transition(cache, t, s))


times = st.floats(min_value=-9.5, max_value=9.5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(t=times, tau=times, s=times)
def test_cocycle_property(arc_cache, t, tau, s):
    lhs = transition(arc_cache, t, tau) @ transition(arc_cache, tau, s)
    rhs = transition(arc_cache, t, s)
    assert np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(t=times, s=times)
def test_inverse_property(arc_cache, t, s):
    prod = transition(arc_cache, s, t) @ transition(arc_cache, t, s)
    np.testing.assert_allclose(prod, np.eye(2), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(t=times, s=times)
def test_commutation_with_projector(arc_cache, t, s):
    P = np.diag([1.0, 0.0])
    T = transition(arc_cache, t, s)
    np.testing.assert_allclose(T @ P, P @ T, atol=1e-12)
    np.testing.assert_allclose(projected_transition(arc_cache, t, s, P), T @ P, rtol=1e-8, atol=1e-300)
