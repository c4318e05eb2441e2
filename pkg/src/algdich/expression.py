"""A small arithmetic expression language for custom scenarios.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are ``t``, ``x1`` ... ``xn`` and the constant ``pi``; functions are
``sin``, ``cos``, ``exp``, ``ln``, ``sqrt`` and ``atan``.  Evaluation is
vectorised over numpy arrays.  Syntax and evaluation errors carry the line
and column of the offending token.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "EvaluationError",
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Call",
    "parse_expression",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "atan")
CONSTANTS = {"pi": math.pi}
_STATE_NAME = re.compile(r"x([1-9][0-9]*)\Z")


class ExpressionError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class ExpressionSyntaxError(ExpressionError):
    """Malformed source text or an unknown identifier."""


class EvaluationError(ExpressionError):
    """Domain error while evaluating, located at the failing operation."""


Position = tuple[int, int]


@dataclass(frozen=True)
class Num:
    value: float
    pos: Position = field(default=(1, 1), compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: Position = field(default=(1, 1), compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"
    pos: Position = field(default=(1, 1), compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"
    pos: Position = field(default=(1, 1), compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"
    pos: Position = field(default=(1, 1), compare=False)


Node = Num | Var | Unary | Binary | Call

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()])"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    line, line_start, i = 1, 0, 0
    while i < len(source):
        match = _TOKEN.match(source, i)
        if match is None:
            raise ExpressionSyntaxError(f"unexpected character {source[i]!r}", line, i - line_start + 1)
        kind = match.lastgroup
        if kind == "nl":
            line, line_start = line + 1, match.end()
        elif kind != "ws":
            tokens.append(_Token(kind, match.group(), line, i - line_start + 1))
        i = match.end()
    tokens.append(_Token("end", "", line, i - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int | None):
        self.tokens = _tokenize(source)
        self.i = 0
        self.dimension = dimension

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.tok
        return ExpressionSyntaxError(message, tok.line, tok.column)

    def advance(self) -> _Token:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        if self.tok.text != text:
            found = repr(self.tok.text) if self.tok.kind != "end" else "end of input"
            raise self.error(f"expected {text!r}, found {found}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            tok = self.advance()
            node = Binary(tok.text, node, self.term(), (tok.line, tok.column))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            tok = self.advance()
            node = Binary(tok.text, node, self.unary(), (tok.line, tok.column))
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            tok = self.advance()
            return Unary("-", self.unary(), (tok.line, tok.column))
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            tok = self.advance()
            node = Binary("^", node, self.unary(), (tok.line, tok.column))
        return node

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text), (tok.line, tok.column))
        if tok.kind == "name":
            self.advance()
            if self.tok.text == "(" and self.tok.kind == "op":
                if tok.text not in FUNCTIONS:
                    raise self.error(f"unknown function {tok.text!r}", tok)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg, (tok.line, tok.column))
            if tok.text in FUNCTIONS:
                raise self.error(f"function {tok.text!r} needs an argument", self.tok)
            self.check_name(tok)
            return Var(tok.text, (tok.line, tok.column))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = repr(tok.text) if tok.kind != "end" else "end of input"
        raise self.error(f"unexpected token {found}")

    def check_name(self, tok: _Token) -> None:
        if tok.text == "t" or tok.text in CONSTANTS:
            return
        match = _STATE_NAME.match(tok.text)
        if match and (self.dimension is None or int(match.group(1)) <= self.dimension):
            return
        raise self.error(f"unknown identifier {tok.text!r}", tok)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "unary": 3, "^": 4}


def _format(node: Node) -> tuple[str, int]:
    """Source text and precedence of ``node``; atoms have precedence 5."""
    if isinstance(node, Num):
        return repr(node.value), 5
    if isinstance(node, Var):
        return node.name, 5
    if isinstance(node, Call):
        return f"{node.name}({_format(node.arg)[0]})", 5
    if isinstance(node, Unary):
        text, prec = _format(node.operand)
        # a power binds tighter than the minus sign, anything else needs parentheses
        return "-" + (text if prec >= _PRECEDENCE["^"] else f"({text})"), _PRECEDENCE["unary"]
    prec = _PRECEDENCE[node.op]
    left, lp = _format(node.left)
    right, rp = _format(node.right)
    if node.op == "^":
        # left operand must be an atom; the right operand may be a unary or another power
        left = left if lp == 5 else f"({left})"
        right = right if rp >= _PRECEDENCE["unary"] else f"({right})"
    else:
        left = left if lp >= prec else f"({left})"
        right = right if rp > prec else f"({right})"
    return f"{left} {node.op} {right}", prec


def _location(node: Node) -> Position:
    return node.pos


def _evaluate(node: Node, env: Mapping[str, np.ndarray]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        try:
            return env[node.name]
        except KeyError:
            raise EvaluationError(f"no value bound to {node.name!r}", *node.pos) from None
    if isinstance(node, Unary):
        return -_evaluate(node.operand, env)
    if isinstance(node, Call):
        arg = np.asarray(_evaluate(node.arg, env), dtype=float)
        if node.name == "ln" and np.any(arg <= 0):
            raise EvaluationError("ln of a nonpositive value", *node.pos)
        if node.name == "sqrt" and np.any(arg < 0):
            raise EvaluationError("sqrt of a negative value", *node.pos)
        fn = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "ln": np.log, "sqrt": np.sqrt, "atan": np.arctan}[node.name]
        return fn(arg)
    left = np.asarray(_evaluate(node.left, env), dtype=float)
    right = np.asarray(_evaluate(node.right, env), dtype=float)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if np.any(right == 0):
            raise EvaluationError("division by zero", *node.pos)
        return left / right
    if np.any((left < 0) & (right != np.round(right))):
        raise EvaluationError("non-integer power of a negative value", *node.pos)
    if np.any((left == 0) & (right < 0)):
        raise EvaluationError("negative power of zero", *node.pos)
    return np.power(left, right)


@dataclass(frozen=True)
class Expression:
    """Parsed expression with its source text."""

    tree: Node
    source: str = field(compare=False)

    def evaluate(self, t, x=None):
        """Evaluate at times ``t`` (shape ``(m,)`` or scalar) and states ``x`` (shape ``(m, n)``)."""
        t_arr = np.asarray(t, dtype=float)
        env: dict[str, np.ndarray] = {"t": t_arr}
        if x is not None:
            x_arr = np.asarray(x, dtype=float)
            cols = x_arr.T if x_arr.ndim == 2 else x_arr
            for k, col in enumerate(cols, start=1):
                env[f"x{k}"] = col
        with np.errstate(all="ignore"):
            value = np.asarray(_evaluate(self.tree, env), dtype=float)
        if not np.all(np.isfinite(value)):
            raise EvaluationError("result is not finite", *self.tree.pos)
        return np.broadcast_to(value, np.broadcast_shapes(value.shape, t_arr.shape)).copy()

    def pretty(self) -> str:
        return _format(self.tree)[0]

    def __str__(self) -> str:
        return self.pretty()


def parse_expression(source: str, dimension: int | None = None) -> Expression:
    """Parse ``source``; with ``dimension`` given, only ``x1`` ... ``x<dimension>`` are accepted."""
    return Expression(_Parser(source, dimension).parse(), source)
