"""Minimal arithmetic grammar for spatial profiles.

Scenario files describe functions of z with expressions over
+, -, *, /, ^, sin, cos, exp, parentheses, numeric literals, and the
constants pi and e.  A tiny recursive-descent parser compiles them to
numpy-vectorized evaluators; nothing is ever passed to eval().
"""

import math
import re

import numpy as np

from .errors import ParseError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]+)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTANTS = {"pi": math.pi, "e": math.e}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            rest = text[pos:].strip()
            raise ParseError(f"cannot read expression near {rest[:12]!r}")
        if match.group("num") is not None:
            tokens.append(("num", float(match.group("num"))))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    tokens.append(("end", None))
    return tokens


class Expression:
    """Compiled spatial profile; callable on scalars or arrays of z."""

    def __init__(self, source: str):
        self.source = source.strip()
        if not self.source:
            raise ParseError("empty expression")
        self._tokens = _tokenize(self.source)
        self._pos = 0
        self._fn = self._parse_sum()
        if self._peek()[0] != "end":
            raise ParseError(
                f"unexpected trailing input in expression {self.source!r}"
            )

    def __call__(self, z):
        return self._fn(np.asarray(z, dtype=float))

    def __eq__(self, other):
        return isinstance(other, Expression) and self.source == other.source

    def __hash__(self):
        return hash(self.source)

    def __repr__(self):
        return f"Expression({self.source!r})"

    # recursive descent ------------------------------------------------
    def _peek(self):
        return self._tokens[self._pos]

    def _next(self):
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def _parse_sum(self):
        fn = self._parse_product()
        while self._peek() == ("op", "+") or self._peek() == ("op", "-"):
            op = self._next()[1]
            rhs = self._parse_product()
            lhs = fn
            fn = (
                (lambda a, b: lambda z: a(z) + b(z))
                if op == "+"
                else (lambda a, b: lambda z: a(z) - b(z))
            )(lhs, rhs)
        return fn

    def _parse_product(self):
        fn = self._parse_unary()
        while self._peek() == ("op", "*") or self._peek() == ("op", "/"):
            op = self._next()[1]
            rhs = self._parse_unary()
            lhs = fn
            fn = (
                (lambda a, b: lambda z: a(z) * b(z))
                if op == "*"
                else (lambda a, b: lambda z: a(z) / b(z))
            )(lhs, rhs)
        return fn

    def _parse_unary(self):
        sign = 1.0
        while self._peek() in (("op", "-"), ("op", "+")):
            if self._next()[1] == "-":
                sign = -sign
        fn = self._parse_power()
        if sign < 0:
            inner = fn
            fn = lambda z: -inner(z)
        return fn

    def _parse_power(self):
        base = self._parse_atom()
        if self._peek() == ("op", "^"):
            self._next()
            expo = self._parse_unary()  # right associative, allows -z^2 style
            return lambda z: base(z) ** expo(z)
        return base

    def _parse_atom(self):
        kind, value = self._next()
        if kind == "num":
            return lambda z, v=value: np.full_like(z, v, dtype=float)
        if kind == "name":
            if value == "z":
                return lambda z: z
            if value in _CONSTANTS:
                return lambda z, v=_CONSTANTS[value]: np.full_like(z, v, dtype=float)
            if value in _FUNCTIONS:
                if self._next() != ("op", "("):
                    raise ParseError(f"{value} needs parenthesized argument")
                arg = self._parse_sum()
                if self._next() != ("op", ")"):
                    raise ParseError(f"unbalanced parentheses after {value}(")
                return lambda z, f=_FUNCTIONS[value]: f(arg(z))
            raise ParseError(f"unknown name {value!r} in expression")
        if (kind, value) == ("op", "("):
            inner = self._parse_sum()
            if self._next() != ("op", ")"):
                raise ParseError("unbalanced parentheses")
            return inner
        raise ParseError(f"unexpected token {value!r} in expression")
