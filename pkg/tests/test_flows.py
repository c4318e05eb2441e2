import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import diagonal_system, scalar_system

from algdich.flows import (
    NonlinearTerm,
    estimate_perturbation_constants,
    gronwall_check,
    linear_flow,
    nonlinear_flow,
    nonlinear_flow_many,
)
from algdich.growth_rates import get_rate
from algdich.linear_evolution import EvolutionCache, transition

EXP = get_rate("exponential")
ARC = get_rate("arctan-exponential")


def wave_term(eps, rate=ARC):
    # f(t, x) = (eps sin(x1 + t), eps cos(x1 + t)); |f| = eps and Lipschitz eps, both <= 2 eps mu'/mu
    def f(t, x):
        phase = x[:, 0] + t
        return eps * np.column_stack([np.sin(phase), np.cos(phase)])

    return NonlinearTerm(f, beta=2 * eps, gamma=2 * eps, rate=rate)


def const_term(c, rate=EXP, dim=1):
    return NonlinearTerm(lambda t, x: np.full_like(x, c), beta=abs(c), gamma=0.0, rate=rate)


def zero_term(rate=EXP):
    return NonlinearTerm(lambda t, x: np.zeros_like(x), beta=0.0, gamma=0.0, rate=rate)


def setting(system, term):
    return SimpleNamespace(system=system, cache=EvolutionCache(system), perturbation=term)


@pytest.fixture(scope="module")
def wave():
    return setting(diagonal_system(1.0, 1.0, ARC, interval=(-12.0, 12.0)), wave_term(0.1))


@pytest.fixture(scope="module")
def scalar():
    return setting(scalar_system(1.0, interval=(-30.0, 30.0)), const_term(0.5))


def test_zero_perturbation_reduces_to_linear_flow():
    prob = setting(diagonal_system(1.0, 1.0, ARC), zero_term(ARC))
    x0 = np.array([0.7, -1.2])
    for t in [3.0, -2.5]:
        np.testing.assert_allclose(nonlinear_flow(prob, 0.5, x0, t), transition(prob.cache, t, 0.5) @ x0, rtol=1e-8)


def test_scalar_closed_form(scalar):
    # X = c + (x0 - c) e^{-(t - t0)}
    for t0, x0, t in [(0.0, 0.0, 20.0), (1.0, 2.0, -3.0), (-2.0, -1.0, 4.0)]:
        expected = 0.5 + (x0 - 0.5) * math.exp(-(t - t0))
        assert nonlinear_flow(scalar, t0, np.array([x0]), t)[0] == pytest.approx(expected, rel=1e-9, abs=1e-12)
    assert nonlinear_flow(scalar, 0.0, np.array([0.0]), 25.0)[0] == pytest.approx(0.5, abs=1e-10)


def test_initial_time_returns_initial_state(wave):
    x0 = np.array([0.3, -0.4])
    out = nonlinear_flow(wave, 1.2, x0, 1.2)
    assert np.array_equal(out, x0)


def test_linear_flow_examples(scalar):
    assert np.array_equal(linear_flow(scalar.cache, 0.0, np.array([2.0]), 0.0), np.array([2.0]))
    assert linear_flow(scalar.cache, 0.0, np.array([2.0]), 1.0)[0] == pytest.approx(2 * math.exp(-1), rel=1e-9)
    diag = EvolutionCache(diagonal_system(1.0, 1.0, ARC))
    t, t0 = 2.0, -1.0
    ratio = float(ARC.mu(t) / ARC.mu(t0))
    np.testing.assert_allclose(linear_flow(diag, t0, np.array([1.0, 1.0]), t), [1 / ratio, ratio], rtol=1e-9)


def test_batched_flow_matches_single_calls(wave):
    rng = np.random.default_rng(3)
    t0s = rng.uniform(-2, 2, 6)
    x0s = rng.uniform(-2, 2, (6, 2))
    targets = np.column_stack([t0s - 3.0, t0s + 1.5, t0s - 0.7])
    batch = nonlinear_flow_many(wave, t0s, x0s, targets)
    for i in range(6):
        for j in range(3):
            single = nonlinear_flow(wave, t0s[i], x0s[i], targets[i, j])
            np.testing.assert_allclose(batch[i, j], single, rtol=1e-7, atol=1e-9)


def test_flow_outside_interval(wave):
    from algdich.linear_evolution import IntervalError

    with pytest.raises(IntervalError):
        nonlinear_flow(wave, 0.0, np.zeros(2), 13.0)


def test_term_bound_checks():
    term = wave_term(0.1)
    rng = np.random.default_rng(0)
    ts = rng.uniform(-10, 10, 300)
    xs = rng.uniform(-5, 5, (300, 2))
    assert term.check(ts, xs) == []
    loose = NonlinearTerm(term.f, beta=0.05, gamma=0.05, rate=ARC)
    kinds = {v[0] for v in loose.check(ts, xs)}
    assert kinds == {"bound", "lipschitz"}


def test_estimated_constants_are_inflated():
    rng = np.random.default_rng(1)
    ts = rng.uniform(-5, 5, 200)
    xs = rng.uniform(-3, 3, (200, 1))
    term = estimate_perturbation_constants(const_term(0.5).f, EXP, ts, xs)
    assert term.estimated
    assert term.beta == pytest.approx(1.05 * 0.5)
    assert term.gamma == 0.0


def test_gronwall_identical_data(wave):
    rep = gronwall_check(wave, 0.0, np.array([0.2, 0.1]), np.array([0.2, 0.1]), [0.5, 1.0])
    assert rep.worst_nonlinear == 0.0 and rep.worst_linear == 0.0 and rep.passed


def test_gronwall_scalar_closed_form(scalar):
    grid = np.linspace(0.1, 3.0, 15)
    rep = gronwall_check(scalar, 0.0, np.array([1.0]), np.array([-0.5]), grid)
    assert rep.passed
    # difference decays like e^{-(t-t0)} while the bound grows like e^{M(t-t0)} with M = 1
    expected = max(math.exp(-2 * t) for t in grid)
    assert rep.worst_nonlinear == pytest.approx(expected, rel=1e-7)


def test_gronwall_wave_random_pair(wave):
    rng = np.random.default_rng(11)
    x0, x1 = rng.uniform(-1, 1, (2, 2))
    rep = gronwall_check(wave, 0.3, x0, x1, np.linspace(0.3, 3.3, 13)[1:])
    assert rep.passed and rep.worst_nonlinear <= 1 + 1e-6 and rep.worst_linear <= 1 + 1e-6


def test_gronwall_requires_forward_grid(wave):
    with pytest.raises(ValueError):
        gronwall_check(wave, 1.0, np.zeros(2), np.ones(2), [0.5])


small = st.floats(-1.5, 1.5)


@settings(max_examples=20, deadline=None)
@given(t0=st.floats(-3, 0), ds=st.floats(0.1, 2), dt=st.floats(0.1, 2), a=small, b=small)
def test_semigroup(wave, t0, ds, dt, a, b):
    s, t = t0 + ds, t0 + ds + dt
    x0 = np.array([a, b])
    direct = nonlinear_flow(wave, t0, x0, t)
    stepped = nonlinear_flow(wave, s, nonlinear_flow(wave, t0, x0, s), t)
    np.testing.assert_allclose(stepped, direct, rtol=1e-7, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(a=small, b=small, c=small, d=small, t=st.floats(-5, 5))
def test_linear_flow_is_linear(wave, a, b, c, d, t):
    u, v = np.array([a, b]), np.array([c, d])
    lhs = linear_flow(wave.cache, 0.0, u + v, t)
    rhs = linear_flow(wave.cache, 0.0, u, t) + linear_flow(wave.cache, 0.0, v, t)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.abs(u).sum() + np.abs(v).sum()))
