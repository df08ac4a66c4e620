"""Canonical integrands with closed-form homogenized values.

These are the workhorses of the test and verification suites: layered
two-material mixtures whose 1D cell problems reduce to generalized harmonic
means, the two-phase checkerboard with its geometric-mean effective
coefficient, and the non-homogenizable diagonal densities.
"""

from __future__ import annotations

from fractions import Fraction

from .expr import Const, Ind
from .integrand import (BorelDiagonal, GrowthBounds, Integrand, PowerIso, Simple,
                        build_composite)
from .sets import CheckerQuadrant, Interval

__all__ = [
    "constant_power", "laminate_1d", "laminate_p3", "two_scale_laminate",
    "checkerboard", "borel", "laminate_value", "FIXTURES", "make_fixture",
]


def constant_power(p: float = 2.0, a: float = 1.0, d: int = 1) -> Integrand:
    """y-independent density a*|z|^p; homogenization is the identity."""
    return Integrand(d=d, n=1, form=Simple(PowerIso(Const(Fraction(a)))),
                     growth=GrowthBounds(c1=a, c2=a, p=p))


def laminate_1d(a1: float = 1.0, a2: float = 4.0, theta=Fraction(1, 2),
                p: float = 2.0) -> Integrand:
    """Single-scale layered mixture: a1 on [0, theta), a2 on [theta, 1)."""
    theta = Fraction(theta)
    return build_composite(
        sets=[Interval.make((0, theta))],
        inside=PowerIso(Const(Fraction(a1))),
        outside=PowerIso(Const(Fraction(a2))),
        growth=GrowthBounds(c1=min(a1, a2), c2=max(a1, a2), p=p))


def laminate_p3() -> Integrand:
    return laminate_1d(a1=1.0, a2=8.0, p=3.0)


def laminate_value(a1: float, a2: float, theta: float, p: float, z: float = 1.0) -> float:
    """Closed-form 1D cell value: |z|^p (theta a1^{-1/(p-1)} + (1-theta) a2^{-1/(p-1)})^{-(p-1)}."""
    q = 1.0 / (p - 1.0)
    return abs(z) ** p * (theta * a1 ** -q + (1.0 - theta) * a2 ** -q) ** (1.0 - p)


def two_scale_laminate() -> Integrand:
    """Two scales, quadratic: coefficient A(y1) in {1,2} on the slow half-cells
    where y2 < 1/2, and 4 elsewhere.

    Iterated homogenization: inner harmonic means 1.6 and 8/3, outer harmonic
    mean exactly 2.
    """
    slow = Ind("y1", Interval.make((0, Fraction(1, 2))))       # 1 on [0,1/2)
    inner_coeff = slow * Const(Fraction(1)) + (Const(Fraction(1)) + Const(Fraction(-1)) * slow) * Const(Fraction(2))
    return build_composite(
        sets=[Interval.make((0, 1)), Interval.make((0, Fraction(1, 2)))],
        inside=PowerIso(inner_coeff),
        outside=PowerIso(Const(Fraction(4))),
        growth=GrowthBounds(c1=1.0, c2=4.0, p=2.0))


def checkerboard(a1: float = 1.0, a2: float = 4.0) -> Integrand:
    """2D two-phase checkerboard; effective coefficient sqrt(a1*a2)."""
    return build_composite(
        sets=[CheckerQuadrant()],
        inside=PowerIso(Const(Fraction(a1))),
        outside=PowerIso(Const(Fraction(a2))),
        growth=GrowthBounds(c1=min(a1, a2), c2=max(a1, a2), p=2.0))


def borel(variant: str, p: float = 2.0, index_cap: int = 64) -> Integrand:
    """Non-admissible diagonal-line densities; rejected by homogenization."""
    n = 2 if variant == "diag_even_yy" else 1
    return Integrand(d=1, n=n, form=BorelDiagonal(variant, index_cap),
                     growth=GrowthBounds(c1=1.0, c2=2.0, p=p))


class NonConvexDemo:
    """Deliberately broken density min(|z|^2, 1): audit-failure fixture.

    Quacks enough like an integrand for the sampling audits; everything else
    refuses it.
    """

    d = 1
    n = 1
    admissible = False
    growth = GrowthBounds(c1=1.0, c2=1.0, p=2.0)
    form = None

    def density(self, x, Y, Z, eta=0.0):
        import numpy as np
        zsq = np.sum(np.asarray(Z, dtype=float) ** 2, axis=-1)
        return np.minimum(zsq, 1.0)

    def require_admissible(self, what: str):
        from .integrand import NonAdmissibleError
        raise NonAdmissibleError(f"{what} rejects the non-convex demo fixture")


FIXTURES = {
    "constant-p2": lambda: constant_power(2.0),
    "constant-p3": lambda: constant_power(3.0),
    "laminate": laminate_1d,
    "laminate-p3": laminate_p3,
    "two-scale-laminate": two_scale_laminate,
    "checkerboard": checkerboard,
    "borel-diag-all": lambda: borel("diag_all"),
    "borel-diag-even-xy": lambda: borel("diag_even_xy"),
    "borel-diag-even-yy": lambda: borel("diag_even_yy"),
    "nonconvex-demo": NonConvexDemo,
}


def make_fixture(name: str) -> Integrand:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
