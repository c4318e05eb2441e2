import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import P_STABLE, const, diagonal_system, scalar_system

from algdich.dichotomy import (
    DichotomySpec,
    FitError,
    check_compensation_law,
    fit_dichotomy_constants,
    sample_pair_grid,
    uniform_pair_grid,
    verify_dichotomy,
    verify_hk_dichotomy,
)
from algdich.growth_rates import get_rate
from algdich.linear_evolution import EvolutionCache

EXP = get_rate("exponential")
ALG = get_rate("algebraic")
PAIRS = sample_pair_grid(-5.0, 5.0, 200, seed=7)


@pytest.fixture(scope="module")
def exp_cache():
    return EvolutionCache(diagonal_system(1.0, 1.0, EXP))


@pytest.fixture(scope="module")
def alg_cache():
    return EvolutionCache(diagonal_system(1.0, 1.0, ALG))


def test_pair_grids():
    assert len(PAIRS) == 200
    assert all(-5 <= t <= 5 and -5 <= s <= 5 and t != s for t, s in PAIRS)
    assert PAIRS == sample_pair_grid(-5.0, 5.0, 200, seed=7)
    grid = uniform_pair_grid(0.0, 1.0, 3)
    assert len(grid) == 6 and (1.0, 0.0) in grid and (0.0, 1.0) in grid


@pytest.mark.parametrize("rate_name", ["exponential", "algebraic"])
def test_example_passes_with_unit_constants(rate_name, exp_cache, alg_cache):
    cache = exp_cache if rate_name == "exponential" else alg_cache
    spec = DichotomySpec(const(P_STABLE), K=1.0, alpha=1.0, rate=get_rate(rate_name))
    report = verify_dichotomy(cache, spec, PAIRS, slack=1e-6)
    assert report.passed
    assert report.max_stable_ratio <= 1 + 1e-6
    assert report.max_unstable_ratio <= 1 + 1e-6
    assert report.violations == []


def test_too_large_alpha_is_reported(exp_cache):
    spec = DichotomySpec(const(P_STABLE), K=1.0, alpha=2.0, rate=EXP)
    report = verify_dichotomy(exp_cache, spec, PAIRS, slack=1e-6)
    assert not report.passed
    assert report.violations
    # closed form: ||T P|| / K w = e^{(t - s)}, largest for the widest stable pair
    widest = max(t - s for t, s in PAIRS if t > s)
    assert report.max_stable_ratio == pytest.approx(math.exp(widest), rel=1e-7)
    assert all(abs(t - s) > 0 for t, s in report.violations)


def test_empty_unstable_subspace_passes_vacuously(exp_cache):
    spec = DichotomySpec(const(np.eye(2)), K=1e6, alpha=1.0, rate=EXP)
    report = verify_dichotomy(exp_cache, spec, uniform_pair_grid(-1.0, 1.0, 5), slack=1e-6)
    assert report.max_unstable_ratio == 0.0


def test_spec_rejects_bad_constants():
    with pytest.raises(ValueError):
        DichotomySpec(const(P_STABLE), K=0.0, alpha=1.0, rate=EXP)
    with pytest.raises(ValueError):
        DichotomySpec(const(P_STABLE), K=1.0, alpha=-1.0, rate=EXP)
    spec = DichotomySpec(const(np.array([[1.0, 1.0], [0.0, 0.5]])), K=1.0, alpha=1.0, rate=EXP)
    assert spec.idempotency_defects([0.0, 1.0])


def test_fit_recovers_unit_constants(exp_cache, alg_cache):
    for cache, rate in [(exp_cache, EXP), (alg_cache, ALG)]:
        K, alpha, resid = fit_dichotomy_constants(cache, const(P_STABLE), rate, PAIRS)
        assert alpha == pytest.approx(1.0, abs=1e-3)
        assert K == pytest.approx(1.0, abs=1e-3)
        assert resid < 1e-6


def test_fit_reports_minimum_slope():
    cache = EvolutionCache(diagonal_system(2.0, 1.0, EXP))
    K, alpha, resid = fit_dichotomy_constants(cache, const(P_STABLE), EXP, PAIRS)
    assert alpha == pytest.approx(1.0, abs=1e-3)
    assert K == pytest.approx(1.0, abs=1e-3)


def test_fit_scalar_system():
    cache = EvolutionCache(scalar_system(1.0))
    K, alpha, resid = fit_dichotomy_constants(cache, const(np.eye(1)), EXP, PAIRS)
    assert (K, alpha) == (pytest.approx(1.0, abs=1e-3), pytest.approx(1.0, abs=1e-3))


def test_fit_degenerate_design(exp_cache):
    with pytest.raises(FitError):
        fit_dichotomy_constants(exp_cache, const(P_STABLE), EXP, [(1.0, 0.0), (2.0, 1.0), (0.0, 1.0), (1.0, 2.0)])


def test_hk_dichotomy_scalar_exponential():
    cache = EvolutionCache(scalar_system(1.0))
    one = lambda t: np.ones_like(np.asarray(t, dtype=float))
    report = verify_hk_dichotomy(cache, one, one, 1.0, 1.0, const(np.eye(1)), PAIRS)
    assert report.passed
    with pytest.raises(ValueError):
        verify_hk_dichotomy(cache, one, one, 1.0, 0.0, const(np.eye(1)), PAIRS)


def test_hk_with_rate_powers_reduces_to_algebraic(alg_cache):
    # h = mu^{-alpha}, k = mu^{alpha} reproduce the algebraic weights when the exponential factor vanishes
    h = lambda t: ALG.mu(t) ** -1.0
    k = lambda t: ALG.mu(t)
    hk = verify_hk_dichotomy(alg_cache, h, k, 1.0, 1e-12, const(P_STABLE), PAIRS)
    alg = verify_dichotomy(alg_cache, DichotomySpec(const(P_STABLE), 1.0, 1.0, ALG), PAIRS)
    assert hk.passed and alg.passed
    assert hk.max_stable_ratio == pytest.approx(alg.max_stable_ratio, rel=1e-9)
    assert hk.max_unstable_ratio == pytest.approx(alg.max_unstable_ratio, rel=1e-9)


def test_compensation_law_examples():
    pairs = [(t, s) for t, s in uniform_pair_grid(-2.0, 2.0, 9) if t >= s]
    same = check_compensation_law(np.exp, np.exp, 1.0, pairs)
    assert same.passed and same.empirical_C == pytest.approx(1.0)
    slow_k = check_compensation_law(lambda t: np.exp(2 * t), np.exp, 1.0, pairs)
    assert slow_k.passed
    fast_k = check_compensation_law(np.exp, lambda t: np.exp(2 * t), 1.0, [(1.0, 0.0)])
    assert not fast_k.passed
    assert fast_k.empirical_C == pytest.approx(math.e)
    assert fast_k.worst_pair == (1.0, 0.0)
    with pytest.raises(ValueError):
        check_compensation_law(np.exp, np.exp, 1.0, [(0.0, 1.0)])


@settings(max_examples=25, deadline=None)
@given(dK=st.floats(0, 3), dalpha=st.floats(0, 0.99))
def test_pass_is_monotone_in_constants(exp_cache, dK, dalpha):
    pairs = PAIRS[:40]
    base = verify_dichotomy(exp_cache, DichotomySpec(const(P_STABLE), 1.0, 1.0, EXP), pairs)
    looser = verify_dichotomy(exp_cache, DichotomySpec(const(P_STABLE), 1.0 + dK, 1.0 - dalpha, EXP), pairs)
    assert base.passed and looser.passed


@settings(max_examples=25, deadline=None)
@given(t=st.floats(-5, 5), s=st.floats(-5, 5))
def test_time_reversal_symmetry(exp_cache, t, s):
    if t == s:
        return
    hi, lo = max(t, s), min(t, s)
    spec = DichotomySpec(const(P_STABLE), 1.0, 1.0, EXP)
    stable = verify_dichotomy(exp_cache, spec, [(hi, lo)]).max_stable_ratio
    unstable = verify_dichotomy(exp_cache, spec, [(lo, hi)]).max_unstable_ratio
    assert stable == pytest.approx(unstable, rel=1e-7)
