"""Closed expression grammar for coefficient fields and test functions.

Expressions are functions of the macroscopic point x and the cell variables
y1..yn. The grammar is deliberately small — rational constants, coordinates,
sums, products, sin/cos of 2*pi times an affine argument, clamps, and cell-set
indicators — so that every coefficient field is serializable to JSON and
round-trips bit-exactly (rationals are stored as numerator/denominator pairs).

Evaluation is vectorized: the environment maps variable names ("x", "y1", ...)
to float arrays of shape (..., d) and an expression evaluates to an array of
shape (...).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .sets import CellSet, cellset_from_json

__all__ = [
    "Expr", "Const", "Coord", "Add", "Mul", "Sin2pi", "Cos2pi", "Clamp", "Ind",
    "const", "coord", "expr_from_json", "expr_to_json",
]


def _frac(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    if isinstance(value, int):
        return Fraction(value)
    raise ValueError(f"expected a rational as int or [num, den], got {value!r}")


class Expr:
    """Base class; subclasses implement eval() and to_json()."""

    def eval(self, env: dict) -> np.ndarray:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    def __add__(self, other):
        return Add((self, _as_expr(other)))

    def __mul__(self, other):
        return Mul((self, _as_expr(other)))

    __radd__ = __add__
    __rmul__ = __mul__


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(_frac(v) if not isinstance(v, float) else Fraction(v))


@dataclass(frozen=True)
class Const(Expr):
    value: Fraction

    def eval(self, env):
        return np.float64(self.value)

    def to_json(self):
        return {"const": [self.value.numerator, self.value.denominator]}


@dataclass(frozen=True)
class Coord(Expr):
    var: str   # "x" or "y1".."yn"
    axis: int

    def eval(self, env):
        return env[self.var][..., self.axis]

    def to_json(self):
        return {"coord": [self.var, self.axis]}


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple[Expr, ...]

    def eval(self, env):
        out = self.terms[0].eval(env)
        for t in self.terms[1:]:
            out = out + t.eval(env)
        return out

    def to_json(self):
        return {"add": [t.to_json() for t in self.terms]}


@dataclass(frozen=True)
class Mul(Expr):
    factors: tuple[Expr, ...]

    def eval(self, env):
        out = self.factors[0].eval(env)
        for f in self.factors[1:]:
            out = out * f.eval(env)
        return out

    def to_json(self):
        return {"mul": [f.to_json() for f in self.factors]}


def _affine_y_coeffs(e: Expr, scale: Fraction = Fraction(1)) -> dict | None:
    """Linear coefficients of y-coordinates if `e` is affine, else None."""
    if isinstance(e, Const):
        return {}
    if isinstance(e, Coord):
        return {(e.var, e.axis): scale} if e.var != "x" else {}
    if isinstance(e, Add):
        out: dict = {}
        for t in e.terms:
            c = _affine_y_coeffs(t, scale)
            if c is None:
                return None
            for k, v in c.items():
                out[k] = out.get(k, Fraction(0)) + v
        return out
    if isinstance(e, Mul):
        consts = [f for f in e.factors if isinstance(f, Const)]
        others = [f for f in e.factors if not isinstance(f, Const)]
        if len(others) == 0:
            return {}
        if len(others) == 1:
            s = scale
            for c in consts:
                s *= c.value
            return _affine_y_coeffs(others[0], s)
        return None
    return None


def _check_periodic_arg(arg: Expr):
    coeffs = _affine_y_coeffs(arg)
    if coeffs is None:
        raise ValueError("sin2pi/cos2pi argument must be affine in the coordinates")
    for (var, axis), c in coeffs.items():
        if c.denominator != 1:
            raise ValueError(
                f"sin2pi/cos2pi argument has non-integer coefficient {c} on {var}[{axis}]; "
                "the field would not be 1-periodic in the cell variables")


@dataclass(frozen=True)
class Sin2pi(Expr):
    arg: Expr

    def __post_init__(self):
        _check_periodic_arg(self.arg)

    def eval(self, env):
        return np.sin(2.0 * np.pi * self.arg.eval(env))

    def to_json(self):
        return {"sin2pi": self.arg.to_json()}


@dataclass(frozen=True)
class Cos2pi(Expr):
    arg: Expr

    def __post_init__(self):
        _check_periodic_arg(self.arg)

    def eval(self, env):
        return np.cos(2.0 * np.pi * self.arg.eval(env))

    def to_json(self):
        return {"cos2pi": self.arg.to_json()}


@dataclass(frozen=True)
class Clamp(Expr):
    arg: Expr
    lo: Fraction
    hi: Fraction

    def eval(self, env):
        return np.clip(self.arg.eval(env), float(self.lo), float(self.hi))

    def to_json(self):
        return {"clamp": [self.arg.to_json(),
                          [self.lo.numerator, self.lo.denominator],
                          [self.hi.numerator, self.hi.denominator]]}


@dataclass(frozen=True)
class Ind(Expr):
    """Indicator of a cell set, applied to all d components of one variable."""

    var: str
    set: CellSet

    def eval(self, env):
        return self.set.contains(env[self.var]).astype(np.float64)

    def to_json(self):
        return {"ind": {"var": self.var, "set": self.set.to_json()}}


def const(v) -> Const:
    return Const(_frac(v))


def coord(var: str, axis: int = 0) -> Coord:
    return Coord(var, axis)


def expr_to_json(e: Expr):
    return e.to_json()


def expr_from_json(obj) -> Expr:
    if isinstance(obj, (int, list)) and not (isinstance(obj, list) and obj and isinstance(obj[0], dict)):
        return Const(_frac(obj))
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ValueError(f"malformed expression node: {obj!r}")
    (kind, body), = obj.items()
    if kind == "const":
        return Const(_frac(body))
    if kind == "coord":
        return Coord(str(body[0]), int(body[1]))
    if kind == "add":
        return Add(tuple(expr_from_json(t) for t in body))
    if kind == "mul":
        return Mul(tuple(expr_from_json(t) for t in body))
    if kind == "sin2pi":
        return Sin2pi(expr_from_json(body))
    if kind == "cos2pi":
        return Cos2pi(expr_from_json(body))
    if kind == "clamp":
        return Clamp(expr_from_json(body[0]), _frac(body[1]), _frac(body[2]))
    if kind == "ind":
        return Ind(str(body["var"]), cellset_from_json(body["set"]))
    raise ValueError(f"unknown expression node kind {kind!r}")
