import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algdich.expression import (
    Binary,
    Call,
    EvaluationError,
    ExpressionSyntaxError,
    Num,
    Unary,
    Var,
    parse_expression,
)


def test_sin_example():
    expr = parse_expression("sin(x1+t)")
    assert expr.tree == Call("sin", Binary("+", Var("x1"), Var("t")))
    assert expr.evaluate(0.0, np.array([[math.pi / 2]]))[0] == pytest.approx(1.0)


def test_rate_expression_at_zero():
    expr = parse_expression("(2/3.14159) * exp(t) * (1.5708 + atan(t))")
    assert float(expr.evaluate(0.0)) == pytest.approx(1.0, abs=1e-5)
    exact = parse_expression("(2/pi) * exp(t) * (pi/2 + atan(t))")
    assert float(exact.evaluate(0.0)) == 1.0


def test_syntax_error_location():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression("1 + * 2")
    assert (info.value.line, info.value.column) == (1, 5)
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression("1 +\n  (2 * ")
    assert info.value.line == 2


@pytest.mark.parametrize("src", ["foo + 1", "x3", "tan(t)", "sin", "(1 + 2", "1 2", "2 $ 3"])
def test_rejections(src):
    with pytest.raises(ExpressionSyntaxError):
        parse_expression(src, dimension=2)


def test_precedence():
    assert parse_expression("2^3^2").evaluate(0.0) == 512.0
    assert parse_expression("-2^2").evaluate(0.0) == -4.0
    assert parse_expression("2^-1").evaluate(0.0) == 0.5
    assert parse_expression("1 - 2 - 3").evaluate(0.0) == -4.0
    assert parse_expression("8 / 4 / 2").evaluate(0.0) == 1.0
    assert parse_expression("1 + 2 * 3").evaluate(0.0) == 7.0
    assert parse_expression("-x1 * 2").tree == Binary("*", Unary("-", Var("x1")), Num(2.0))


def test_vectorised_evaluation():
    expr = parse_expression("x1 * t + x2")
    t = np.array([0.0, 1.0, 2.0])
    x = np.array([[1.0, 1.0], [2.0, 0.0], [3.0, -1.0]])
    np.testing.assert_array_equal(expr.evaluate(t, x), [1.0, 2.0, 5.0])
    np.testing.assert_array_equal(parse_expression("3").evaluate(t), [3.0, 3.0, 3.0])


@pytest.mark.parametrize(
    "src, pos",
    [("ln(t)", (1, 1)), ("1 / (t - t)", (1, 3)), ("sqrt(t - 1)", (1, 1)), ("\n  ln(0 * t)", (2, 3))],
)
def test_domain_errors_located(src, pos):
    with pytest.raises(EvaluationError) as info:
        parse_expression(src).evaluate(np.array([0.0, 0.5]))
    assert (info.value.line, info.value.column) == pos


def test_overflow_is_an_error():
    with pytest.raises(EvaluationError):
        parse_expression("exp(exp(t))").evaluate(10.0)


leaves = st.one_of(
    st.floats(0, 100, allow_nan=False).map(lambda v: Num(float(v))),
    st.sampled_from(["t", "x1", "x2", "pi"]).map(Var),
)


def extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda a: Binary(*a)),
        children.map(lambda c: Unary("-", c)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "ln", "sqrt", "atan"]), children).map(lambda a: Call(*a)),
    )


trees = st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_pretty_print_round_trip(tree):
    from algdich.expression import Expression

    text = Expression(tree, "").pretty()
    assert parse_expression(text).tree == tree
