"""Tiny unit-expression parser for parameter files.

Base units are ``$``, ``MW``, ``year`` and ``hour``. Hours and years are kept
as independent dimensions because production hours are quoted per year.
A unit expression such as ``"MW^2/($*year)"`` or ``"$/(MW*MWh)"`` is parsed
into a scale factor and a dimension vector over the base units.
"""

from __future__ import annotations

import re
from fractions import Fraction

BASE = ("$", "MW", "year", "hour")

# token -> (factor, {base: exponent})
_ATOMS: dict[str, tuple[float, dict[str, int]]] = {
    "$": (1.0, {"$": 1}),
    "k$": (1e3, {"$": 1}),
    "M$": (1e6, {"$": 1}),
    "kW": (1e-3, {"MW": 1}),
    "MW": (1.0, {"MW": 1}),
    "GW": (1e3, {"MW": 1}),
    "kWh": (1e-3, {"MW": 1, "hour": 1}),
    "MWh": (1.0, {"MW": 1, "hour": 1}),
    "GWh": (1e3, {"MW": 1, "hour": 1}),
    "year": (1.0, {"year": 1}),
    "years": (1.0, {"year": 1}),
    "yr": (1.0, {"year": 1}),
    "h": (1.0, {"hour": 1}),
    "hour": (1.0, {"hour": 1}),
    "hours": (1.0, {"hour": 1}),
}

_TOKEN = re.compile(r"\s*(k\$|M\$|\$|[A-Za-z]+|\d+(?:\.\d+)?|[()*/^])")


class UnitSyntaxError(ValueError):
    pass


def _tokenize(expr: str) -> list[str]:
    pos, out = 0, []
    expr = expr.strip()
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if not m:
            raise UnitSyntaxError(f"cannot parse unit {expr!r} at {expr[pos:]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


class _Parser:
    # expr := term (('*'|'/') term)* ; term := atom ('^' number)? ; atom := NAME | '1' | '(' expr ')'
    def __init__(self, tokens: list[str]):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self):
        factor, dims = self.term()
        while self.peek() in ("*", "/"):
            op = self.take()
            f2, d2 = self.term()
            sign = 1 if op == "*" else -1
            factor *= f2 ** sign
            for k, v in d2.items():
                dims[k] = dims.get(k, 0) + sign * v
        return factor, dims

    def term(self):
        factor, dims = self.atom()
        if self.peek() == "^":
            self.take()
            p = self._exponent()
            factor **= float(p)
            dims = {k: v * p for k, v in dims.items()}
        return factor, dims

    def _number(self) -> int:
        tok = self.take()
        if tok is None or not tok.isdigit():
            raise UnitSyntaxError(f"expected an integer exponent, got {tok!r}")
        return int(tok)

    def _expect(self, sym: str) -> None:
        tok = self.take()
        if tok != sym:
            raise UnitSyntaxError(f"expected {sym!r}, got {tok!r}")

    def _exponent(self) -> Fraction:
        if self.peek() == "(":
            # allow ^(1/2)
            self.take()
            num = self._number()
            self._expect("/")
            den = self._number()
            self._expect(")")
            if den == 0:
                raise UnitSyntaxError("zero denominator in exponent")
            return Fraction(num, den)
        return Fraction(self._number())

    def atom(self):
        tok = self.take()
        if tok is None:
            raise UnitSyntaxError("unexpected end of unit expression")
        if tok == "(":
            out = self.expr()
            if self.take() != ")":
                raise UnitSyntaxError("unbalanced parenthesis")
            return out
        if tok == "1":
            return 1.0, {}
        if tok == "sqrt":
            if self.take() != "(":
                raise UnitSyntaxError("sqrt needs parentheses")
            f, d = self.expr()
            self.take()
            return f ** 0.5, {k: Fraction(v) / 2 for k, v in d.items()}
        if tok in _ATOMS:
            f, d = _ATOMS[tok]
            return f, dict(d)
        raise UnitSyntaxError(f"unknown unit token {tok!r}")


def parse_unit(expr: str) -> tuple[float, dict[str, Fraction]]:
    """Return ``(factor, dims)`` so that ``value * factor`` is in base units."""
    if expr.strip() in ("", "1", "-"):
        return 1.0, {}
    p = _Parser(_tokenize(expr))
    factor, dims = p.expr()
    if p.peek() is not None:
        raise UnitSyntaxError(f"trailing input in unit {expr!r}")
    return factor, {k: Fraction(v) for k, v in dims.items() if v != 0}


def dims_of(expr: str) -> dict[str, Fraction]:
    return parse_unit(expr)[1]
