import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdich.growth_rates import (
    BUILTIN_RATES,
    GrowthRate,
    GrowthRateEvaluationError,
    get_rate,
    validate_growth_rate,
    weight_ratio,
)

GRID = np.linspace(-10.0, 10.0, 201)


@pytest.mark.parametrize("label", ["exponential", "arctan-exponential"])
def test_builtin_rates_pass_validation(label):
    report = validate_growth_rate(get_rate(label), GRID, tol=1e-9)
    assert report.passed, report.violations
    assert report.small_threshold == 1e-3
    assert report.large_threshold == 1e3


def test_algebraic_rate_limit_proxies_need_a_wide_grid():
    # mu(-10) ~ 0.05 and mu(10) ~ 20: only the limit proxies can fail on [-10, 10]
    g = get_rate("algebraic")
    narrow = validate_growth_rate(g, GRID, tol=1e-9)
    assert {v.check for v in narrow.violations} == {"left_limit_proxy", "right_limit_proxy"}
    wide = validate_growth_rate(g, np.linspace(-1e4, 1e4, 2001), tol=1e-9)
    assert wide.passed, wide.violations
    relaxed = validate_growth_rate(g, GRID, tol=1e-9, small_threshold=0.1, large_threshold=10.0)
    assert relaxed.passed


def test_algebraic_rate_is_one_at_origin_exactly():
    assert get_rate("algebraic").mu(0.0) == 1.0


def test_arctan_rate_matches_direct_formula():
    # independent evaluation of (2/pi) e^t (pi/2 + arctan t)
    g = get_rate("arctan-exponential")
    for t in [-7.5, -1.0, 0.0, 0.3, 4.0]:
        direct = (2 / math.pi) * math.exp(t) * (math.pi / 2 + math.atan(t))
        assert g.mu(t) == pytest.approx(direct, rel=1e-12)
        # derivative by the product rule on the same closed form
        dprime = (2 / math.pi) * math.exp(t) * (math.pi / 2 + math.atan(t) + 1 / (1 + t * t))
        assert g.mu_prime(t) == pytest.approx(dprime, rel=1e-12)


def test_algebraic_rate_stable_for_large_negative_times():
    g = get_rate("algebraic")
    # t + sqrt(1 + t^2) = 1 / (sqrt(1 + t^2) - t); the second form has no cancellation
    t = -1e6
    assert g.mu(t) == pytest.approx(1.0 / (math.sqrt(1 + t * t) - t), rel=1e-12)
    assert g.mu(t) > 0


def test_weight_ratio_examples():
    exp_rate = get_rate("exponential")
    assert weight_ratio(exp_rate, 2.0, 2.0, 3.0) == 1.0
    assert weight_ratio(exp_rate, 1.0, 0.0, 2.0) == pytest.approx(math.exp(-2.0), rel=1e-14)
    alg = get_rate("algebraic")
    expected = (-3 + math.sqrt(10)) / 1.0
    # (mu(t)/mu(s))^(-alpha) with t=0, s=-3, alpha=1 equals mu(-3)/mu(0)
    assert weight_ratio(alg, 0.0, -3.0, 1.0) == pytest.approx(expected, rel=1e-12)


def test_weight_ratio_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        weight_ratio(get_rate("exponential"), 1.0, 0.0, 0.0)


def test_weight_ratio_is_finite_where_mu_overflows():
    g = get_rate("exponential")
    value = weight_ratio(g, 800.0, 799.0, 1.0)
    assert value == pytest.approx(math.exp(-1.0))


def test_validation_reports_decreasing_rate():
    bad = GrowthRate(
        mu=lambda t: np.exp(-np.asarray(t, dtype=float)),
        mu_prime=lambda t: -np.exp(-np.asarray(t, dtype=float)),
        log_mu=lambda t: -np.asarray(t, dtype=float),
        label="decreasing",
    )
    report = validate_growth_rate(bad, GRID, tol=1e-9)
    assert not report.passed
    checks = {v.check for v in report.violations}
    assert {"increasing", "positive_derivative", "left_limit_proxy", "right_limit_proxy"} <= checks


def test_validation_reports_unnormalised_rate():
    shifted = GrowthRate(
        mu=lambda t: 2 * np.exp(np.asarray(t, dtype=float)),
        mu_prime=lambda t: 2 * np.exp(np.asarray(t, dtype=float)),
        log_mu=lambda t: np.log(2.0) + np.asarray(t, dtype=float),
        label="shifted",
    )
    report = validate_growth_rate(shifted, GRID, tol=1e-9)
    assert [v.check for v in report.violations] == ["normalised_at_zero"]


def test_validation_flags_inconsistent_log():
    wrong_log = GrowthRate(
        mu=lambda t: np.exp(np.asarray(t, dtype=float)),
        mu_prime=lambda t: np.exp(np.asarray(t, dtype=float)),
        log_mu=lambda t: 1.01 * np.asarray(t, dtype=float),
        label="wrong-log",
    )
    report = validate_growth_rate(wrong_log, GRID, tol=1e-9)
    assert "log_consistency" in {v.check for v in report.violations}


def test_validation_raises_on_non_finite_value():
    broken = GrowthRate(
        mu=lambda t: np.where(np.asarray(t) > 5, np.nan, np.exp(np.asarray(t, dtype=float))),
        mu_prime=lambda t: np.exp(np.asarray(t, dtype=float)),
        log_mu=lambda t: np.asarray(t, dtype=float),
        label="broken",
    )
    with pytest.raises(GrowthRateEvaluationError, match="5.1"):
        validate_growth_rate(broken, GRID, tol=1e-9)


def test_validation_requires_increasing_grid():
    with pytest.raises(ValueError):
        validate_growth_rate(get_rate("exponential"), [0.0], tol=1e-9)
    with pytest.raises(ValueError):
        validate_growth_rate(get_rate("exponential"), [1.0, 0.0], tol=1e-9)


def test_registry_contents():
    assert set(BUILTIN_RATES) == {"exponential", "arctan-exponential", "algebraic"}
    with pytest.raises(KeyError):
        get_rate("nope")


times = st.floats(min_value=-30, max_value=30, allow_nan=False)
alphas = st.floats(min_value=0.05, max_value=5, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(label=st.sampled_from(sorted(BUILTIN_RATES)), t=times, s=times, r=times, alpha=alphas)
def test_weight_ratio_properties(label, t, s, r, alpha):
    g = get_rate(label)
    assert weight_ratio(g, t, t, alpha) == 1.0
    lhs = weight_ratio(g, t, s, alpha) * weight_ratio(g, s, r, alpha)
    assert lhs == pytest.approx(weight_ratio(g, t, r, alpha), rel=1e-9)
    hi, lo = max(t, s), min(t, s)
    w = weight_ratio(g, hi, lo, alpha)
    assert w <= 1.0
    if hi - lo > 1e-6:
        assert w < 1.0


@settings(max_examples=100, deadline=None)
@given(label=st.sampled_from(sorted(BUILTIN_RATES)), t=times)
def test_log_derivative_matches_ratio(label, t):
    g = get_rate(label)
    assert g.log_derivative(t) == pytest.approx(g.mu_prime(t) / g.mu(t), rel=1e-10)
