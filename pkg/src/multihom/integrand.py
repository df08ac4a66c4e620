"""Multiscale energy densities f(x, y1..yn, z) and their audits.

An integrand couples a macroscopic point x in Omega, n cell variables
y1..yn in [0,1)^d and a gradient z in R^d. Three forms are supported:

* ``Simple`` — a single material law,
* ``Composite`` — a two-material mixture selected by the product of
  per-scale cell-set indicators,
* ``BorelDiagonal`` — the pathological diagonal-line densities that admit
  no homogenized limit; they are evaluated exactly (rational arithmetic)
  but flagged non-admissible, and every homogenization entry point
  rejects them.

Growth and convexity are audited by sampling, not assumed; the audits are
report-only and deterministic (unscrambled Halton points).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import qmc

from .expr import Expr, expr_from_json
from .sets import CellSet, cellset_from_json

__all__ = [
    "GrowthBounds", "PowerIso", "QuadAniso", "MaterialLaw",
    "Simple", "Composite", "BorelDiagonal", "Integrand",
    "NonAdmissibleError", "build_composite", "SamplingSpec", "AuditReport",
    "check_growth", "check_convexity", "check_lipschitz",
    "diagonal_membership", "integrand_to_json", "integrand_from_json",
]

BOREL_VARIANTS = ("diag_all", "diag_even_xy", "diag_even_yy")


class NonAdmissibleError(ValueError):
    """Raised when an operation requires an admissible integrand but got a
    Borel counterexample, or when an unsupported evaluation is requested."""


@dataclass(frozen=True)
class GrowthBounds:
    """Coercivity/growth sandwich c1*|z|^p <= f <= c2*(1+|z|^p)."""

    c1: float
    c2: float
    p: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("growth constants must be positive")
        if self.c2 < self.c1:
            raise ValueError("c2 must dominate c1")
        if not (1.0 < self.p < math.inf):
            raise ValueError("exponent p must lie in (1, inf)")

    def lower(self, znorm):
        return self.c1 * znorm ** self.p

    def upper(self, znorm):
        return self.c2 * (1.0 + znorm ** self.p)


# ---------------------------------------------------------------------------
# Material laws


@dataclass(frozen=True)
class PowerIso:
    """Isotropic power law a(x,y) * |z|^p with a from the expression grammar."""

    coeff: Expr

    def density(self, env, z, p, eta=0.0):
        a = self.coeff.eval(env)
        zsq = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
        if eta > 0.0:
            return a * (zsq + eta * eta) ** (0.5 * p)
        return a * zsq ** (0.5 * p)

    def density_grad(self, env, z, p, eta=0.0):
        a = self.coeff.eval(env)
        z = np.asarray(z, dtype=float)
        zsq = np.sum(z ** 2, axis=-1)
        if eta == 0.0 and p < 2.0:
            raise ValueError("p < 2 requires a positive regularization eta")
        base = zsq + eta * eta
        if eta == 0.0:
            # p >= 2: the factor (zsq)^{(p-2)/2} has limit 0 at z=0 for p>2
            # and equals 1 for p=2; avoid 0**negative warnings explicitly.
            with np.errstate(divide="ignore", invalid="ignore"):
                fac = np.where(base > 0.0, base ** (0.5 * p - 1.0), 0.0 if p > 2.0 else 1.0)
        else:
            fac = base ** (0.5 * p - 1.0)
        return (np.asarray(a) * p * fac)[..., None] * z

    def to_json(self):
        return {"kind": "power_iso", "coeff": self.coeff.to_json()}


@dataclass(frozen=True)
class QuadAniso:
    """Anisotropic quadratic law z . A(x,y) z with symmetric 2x2 matrix field."""

    a11: Expr
    a12: Expr
    a22: Expr

    def density(self, env, z, p, eta=0.0):
        if p != 2.0:
            raise ValueError("quadratic anisotropic laws require p = 2")
        z = np.asarray(z, dtype=float)
        a11 = self.a11.eval(env)
        a12 = self.a12.eval(env)
        a22 = self.a22.eval(env)
        z0, z1 = z[..., 0], z[..., 1]
        return a11 * z0 * z0 + 2.0 * a12 * z0 * z1 + a22 * z1 * z1

    def density_grad(self, env, z, p, eta=0.0):
        if p != 2.0:
            raise ValueError("quadratic anisotropic laws require p = 2")
        z = np.asarray(z, dtype=float)
        a11 = self.a11.eval(env)
        a12 = self.a12.eval(env)
        a22 = self.a22.eval(env)
        z0, z1 = z[..., 0], z[..., 1]
        g = np.empty(np.broadcast_shapes(z0.shape, np.shape(a11)) + (2,))
        g[..., 0] = 2.0 * (a11 * z0 + a12 * z1)
        g[..., 1] = 2.0 * (a12 * z0 + a22 * z1)
        return g

    def to_json(self):
        return {"kind": "quad_aniso", "a11": self.a11.to_json(),
                "a12": self.a12.to_json(), "a22": self.a22.to_json()}


MaterialLaw = PowerIso | QuadAniso


def _law_from_json(obj: dict) -> MaterialLaw:
    kind = obj.get("kind")
    if kind == "power_iso":
        return PowerIso(expr_from_json(obj["coeff"]))
    if kind == "quad_aniso":
        return QuadAniso(expr_from_json(obj["a11"]), expr_from_json(obj["a12"]),
                         expr_from_json(obj["a22"]))
    raise ValueError(f"unknown material law kind {kind!r}")


# ---------------------------------------------------------------------------
# Forms


@dataclass(frozen=True)
class Simple:
    law: MaterialLaw


@dataclass(frozen=True)
class Composite:
    sets: tuple[CellSet, ...]
    inside: MaterialLaw
    outside: MaterialLaw


@dataclass(frozen=True)
class BorelDiagonal:
    """Diagonal-line densities built from the family y = i*x - j (integer i, j).

    diag_all      [1 - chi_A(x, y1)] |z|^p   with A the union over all i >= 1
    diag_even_xy  [2 - chi_B(x, y1)] |z|^p   with B the union over even i
    diag_even_yy  [2 - chi_B(y1, y2)] |z|^p  (two scales, x-independent)

    Membership is decided exactly on rational inputs by checking slopes up to
    ``index_cap``; along trajectories y = <h x> only i = h can match, so a cap
    of twice the largest h in play is lossless.
    """

    variant: str
    index_cap: int = 64

    def __post_init__(self):
        if self.variant not in BOREL_VARIANTS:
            raise ValueError(f"variant must be one of {BOREL_VARIANTS}, got {self.variant!r}")
        if self.index_cap < 2:
            raise ValueError("index_cap must be >= 2")


def diagonal_membership(u: Fraction, v: Fraction, even_only: bool, cap: int) -> bool:
    """Exact test for (u, v) in [0,1)^2 lying on some line v = i*u - j.

    Scans slopes i up to ``cap`` (even slopes only when requested). The
    constraint j in {0..i-1} is automatic for points of the unit square.
    """
    start, step = (2, 2) if even_only else (1, 1)
    for i in range(start, cap + 1, step):
        if (i * u - v).denominator == 1:
            return True
    return False


# ---------------------------------------------------------------------------
# Integrand


@dataclass(frozen=True)
class Integrand:
    d: int
    n: int
    form: Simple | Composite | BorelDiagonal
    growth: GrowthBounds

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("spatial dimension must be 1 or 2")
        if self.n < 1:
            raise ValueError("need at least one scale")
        if isinstance(self.form, Composite) and len(self.form.sets) != self.n:
            raise ValueError("composite needs one cell set per scale")
        if isinstance(self.form, BorelDiagonal):
            if self.d != 1:
                raise ValueError("diagonal counterexamples are one-dimensional")
            want = 2 if self.form.variant == "diag_even_yy" else 1
            if self.n != want:
                raise ValueError(f"variant {self.form.variant} requires n = {want}")

    @property
    def admissible(self) -> bool:
        return not isinstance(self.form, BorelDiagonal)

    def require_admissible(self, what: str):
        if not self.admissible:
            raise NonAdmissibleError(
                f"{what} requires an admissible integrand; "
                f"'{self.form.variant}' is a non-admissible counterexample")

    # -- vectorized evaluation ------------------------------------------------

    def _env(self, x, Y) -> dict:
        env = {"x": np.atleast_1d(np.asarray(x, dtype=float))}
        for k in range(self.n):
            env[f"y{k + 1}"] = np.asarray(Y[k], dtype=float)
        return env

    def density(self, x, Y, Z, eta: float = 0.0) -> np.ndarray:
        """Density at broadcastable x (...,d), Y (n entries of (...,d)), Z (...,d)."""
        Z = np.asarray(Z, dtype=float)
        if isinstance(self.form, BorelDiagonal):
            return self._borel_density(x, Y, Z)
        env = self._env(x, Y)
        p = self.growth.p
        if isinstance(self.form, Simple):
            return self.form.law.density(env, Z, p, eta)
        chi = np.ones(Z.shape[:-1])
        for k, s in enumerate(self.form.sets):
            chi = chi * s.contains(env[f"y{k + 1}"])
        fin = self.form.inside.density(env, Z, p, eta)
        fout = self.form.outside.density(env, Z, p, eta)
        return chi * fin + (1.0 - chi) * fout

    def density_grad(self, x, Y, Z, eta: float = 0.0) -> np.ndarray:
        """Gradient of the (possibly eta-regularized) density with respect to z."""
        if isinstance(self.form, BorelDiagonal):
            raise NonAdmissibleError(
                "counterexample densities are evaluated, never differentiated in z")
        Z = np.asarray(Z, dtype=float)
        env = self._env(x, Y)
        p = self.growth.p
        if isinstance(self.form, Simple):
            return self.form.law.density_grad(env, Z, p, eta)
        chi = np.ones(Z.shape[:-1])
        for k, s in enumerate(self.form.sets):
            chi = chi * s.contains(env[f"y{k + 1}"])
        gin = self.form.inside.density_grad(env, Z, p, eta)
        gout = self.form.outside.density_grad(env, Z, p, eta)
        return chi[..., None] * gin + (1.0 - chi[..., None]) * gout

    def _borel_density(self, x, Y, Z):
        form = self.form
        p = self.growth.p
        znorm = np.sqrt(np.sum(np.asarray(Z, dtype=float) ** 2, axis=-1))
        xarr = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), znorm.shape + (1,))
        Yarr = [np.broadcast_to(np.asarray(Y[k], dtype=float), znorm.shape + (1,))
                for k in range(self.n)]
        flat_shape = znorm.shape
        chi = np.zeros(flat_shape)
        it = np.ndindex(*flat_shape) if flat_shape else iter([()])
        for idx in it:
            if form.variant == "diag_even_yy":
                u, v = Fraction(float(Yarr[0][idx][0])), Fraction(float(Yarr[1][idx][0]))
                even = True
            else:
                u, v = Fraction(float(xarr[idx][0])), Fraction(float(Yarr[0][idx][0]))
                even = form.variant == "diag_even_xy"
            chi[idx] = diagonal_membership(u, v, even, form.index_cap)
        base = znorm ** p
        if form.variant == "diag_all":
            return (1.0 - chi) * base
        return (2.0 - chi) * base

    # -- scalar contract ------------------------------------------------------

    def eval(self, x, y, z) -> float:
        """Pointwise value f(x, y1..yn, z); y components must lie in [0,1)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if not np.all(np.isfinite(z)):
            raise ValueError("gradient argument must be finite")
        Y = [np.atleast_1d(np.asarray(yk, dtype=float)) for yk in _as_scale_tuple(y, self.n)]
        for yk in Y:
            if np.any(yk < 0.0) or np.any(yk >= 1.0):
                raise ValueError("cell variables must lie in [0,1); reduce mod 1 first")
        return float(self.density(x, Y, z))

    def grad_z(self, x, y, z, eta: float | None = None) -> np.ndarray:
        if isinstance(self.form, BorelDiagonal):
            raise NonAdmissibleError("grad_z is unsupported for counterexample densities")
        if eta is None:
            eta = default_eta(self.growth.p)
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if not np.all(np.isfinite(z)):
            raise ValueError("gradient argument must be finite")
        Y = [np.atleast_1d(np.asarray(yk, dtype=float)) for yk in _as_scale_tuple(y, self.n)]
        return np.asarray(self.density_grad(x, Y, z, eta), dtype=float)


def _as_scale_tuple(y, n):
    """Accept y as a single point (n==1) or a sequence of n points."""
    if n == 1:
        arr = np.atleast_1d(np.asarray(y, dtype=float))
        if arr.ndim == 1:
            return (arr,)
    return tuple(y)


def power_iso_profile(f: Integrand, x, Y):
    """Scalar coefficient field a(x, y) when every active law is isotropic.

    The y-dependence of a power-law integrand factors out of the gradient
    argument entirely; solvers precompute this once per problem instead of
    re-walking the expression tree every energy evaluation. Returns None when
    the integrand has no such profile (anisotropic laws, counterexamples).
    """
    if isinstance(f.form, BorelDiagonal):
        return None
    env = f._env(x, Y)
    if isinstance(f.form, Simple):
        if not isinstance(f.form.law, PowerIso):
            return None
        return np.asarray(f.form.law.coeff.eval(env), dtype=float)
    if not (isinstance(f.form.inside, PowerIso) and isinstance(f.form.outside, PowerIso)):
        return None
    chi = 1.0
    for k, s in enumerate(f.form.sets):
        chi = chi * s.contains(env[f"y{k + 1}"])
    a_in = f.form.inside.coeff.eval(env)
    a_out = f.form.outside.coeff.eval(env)
    return np.asarray(chi * a_in + (1.0 - chi) * a_out, dtype=float)


def power_density(a, Z, p, eta=0.0):
    zsq = np.sum(np.asarray(Z, dtype=float) ** 2, axis=-1)
    if eta > 0.0:
        return a * (zsq + eta * eta) ** (0.5 * p)
    if p == 2.0:
        return a * zsq
    return a * zsq ** (0.5 * p)


def power_density_grad(a, Z, p, eta=0.0):
    Z = np.asarray(Z, dtype=float)
    if eta == 0.0 and p == 2.0:
        return (2.0 * a)[..., None] * Z if np.ndim(a) else 2.0 * a * Z
    zsq = np.sum(Z ** 2, axis=-1)
    if eta == 0.0 and p < 2.0:
        raise ValueError("p < 2 requires a positive regularization eta")
    base = zsq + eta * eta
    if eta == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(base > 0.0, base ** (0.5 * p - 1.0), 0.0 if p > 2.0 else 1.0)
    else:
        fac = base ** (0.5 * p - 1.0)
    return (np.asarray(a) * p * fac)[..., None] * Z


def default_eta(p: float) -> float:
    """Regularization used by gradient paths: 0 for p >= 2, 1e-8 below."""
    return 0.0 if p >= 2.0 else 1e-8


def build_composite(sets, inside: MaterialLaw, outside: MaterialLaw,
                    growth: GrowthBounds) -> Integrand:
    """Two-material mixture selected by the product of per-scale indicators."""
    sets = tuple(sets)
    if not sets:
        raise ValueError("need at least one cell set")
    d = sets[0].d
    if any(s.d != d for s in sets):
        raise ValueError("all cell sets must share one dimension")
    return Integrand(d=d, n=len(sets), form=Composite(sets, inside, outside), growth=growth)


# ---------------------------------------------------------------------------
# Audits


@dataclass(frozen=True)
class SamplingSpec:
    """Deterministic audit sample: unscrambled Halton points over (x, y, z)."""

    points: int = 4096
    z_max: float = 8.0

    def draw(self, d: int, n: int) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
        dim = d + n * d + d
        sampler = qmc.Halton(d=dim, scramble=False)
        u = sampler.random(self.points)
        x = u[:, :d]
        Y = [u[:, d * (1 + k): d * (2 + k)] for k in range(n)]
        z = (2.0 * u[:, d * (1 + n):] - 1.0) * self.z_max
        return x, Y, z

    def draw_pairs(self, d: int, n: int):
        dim = d + n * d + 2 * d
        sampler = qmc.Halton(d=dim, scramble=False)
        u = sampler.random(self.points)
        x = u[:, :d]
        Y = [u[:, d * (1 + k): d * (2 + k)] for k in range(n)]
        z1 = (2.0 * u[:, d * (1 + n): d * (2 + n)] - 1.0) * self.z_max
        z2 = (2.0 * u[:, d * (2 + n):] - 1.0) * self.z_max
        return x, Y, z1, z2


@dataclass
class AuditReport:
    kind: str
    checked: int
    violations: int
    worst_margin: float
    worst_point: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        state = "ok" if self.passed else "FAIL"
        return (f"[{state}] {self.kind}: {self.violations} violation(s) "
                f"in {self.checked} samples, worst margin {self.worst_margin:.3e}")


def _report(kind, margins, x, Y, z, tol=0.0):
    bad = margins < -tol
    worst = int(np.argmin(margins))
    point = {"x": np.asarray(x)[worst].tolist(),
             "y": [np.asarray(yk)[worst].tolist() for yk in Y],
             "z": np.asarray(z)[worst].tolist()}
    return AuditReport(kind=kind, checked=len(margins), violations=int(bad.sum()),
                       worst_margin=float(margins[worst]), worst_point=point)


def check_growth(f, samples: SamplingSpec = SamplingSpec()) -> AuditReport:
    """Sandwich audit c1|z|^p <= f <= c2(1+|z|^p) on a deterministic sample."""
    if isinstance(f.form, BorelDiagonal):
        raise NonAdmissibleError("growth audits target Simple/Composite integrands")
    x, Y, z = samples.draw(f.d, f.n)
    vals = f.density(x, Y, z)
    znorm = np.sqrt(np.sum(z ** 2, axis=-1))
    scale = 1.0 + np.abs(vals)
    low = (vals - f.growth.lower(znorm)) / scale
    high = (f.growth.upper(znorm) - vals) / scale
    margins = np.minimum(low, high)
    return _report("growth sandwich", margins, x, Y, z, tol=1e-12)


def check_convexity(f, samples: SamplingSpec = SamplingSpec()) -> AuditReport:
    """Midpoint convexity audit in z on sampled triples.

    Accepts any object with ``d``, ``n`` and ``density`` — test fixtures may
    supply deliberately non-convex densities.
    """
    x, Y, z1, z2 = samples.draw_pairs(f.d, f.n)
    mid = 0.5 * (z1 + z2)
    fmid = f.density(x, Y, mid)
    favg = 0.5 * (f.density(x, Y, z1) + f.density(x, Y, z2))
    margins = favg - fmid
    tolvec = 1e-12 * (1.0 + np.abs(favg) + np.abs(fmid))
    bad = margins < -tolvec
    worst = int(np.argmin(margins - (-tolvec)))
    point = {"x": np.asarray(x)[worst].tolist(),
             "y": [np.asarray(yk)[worst].tolist() for yk in Y],
             "z": [z1[worst].tolist(), z2[worst].tolist()]}
    return AuditReport(kind="midpoint convexity", checked=len(margins),
                       violations=int(bad.sum()), worst_margin=float(margins[worst]),
                       worst_point=point)


def check_lipschitz(f, samples: SamplingSpec = SamplingSpec()) -> AuditReport:
    """Local Lipschitz audit |f(z1)-f(z2)| <= c2 d (1+2^p)(1+|z1|+|z2|)^{p-1}|z1-z2|."""
    if isinstance(f.form, BorelDiagonal):
        raise NonAdmissibleError("Lipschitz audits target Simple/Composite integrands")
    x, Y, z1, z2 = samples.draw_pairs(f.d, f.n)
    f1 = f.density(x, Y, z1)
    f2 = f.density(x, Y, z2)
    n1 = np.sqrt(np.sum(z1 ** 2, axis=-1))
    n2 = np.sqrt(np.sum(z2 ** 2, axis=-1))
    dz = np.sqrt(np.sum((z1 - z2) ** 2, axis=-1))
    g = f.growth
    bound = g.c2 * f.d * (1.0 + 2.0 ** g.p) * (1.0 + n1 + n2) ** (g.p - 1.0) * dz
    margins = (bound - np.abs(f1 - f2)) / (1.0 + bound)
    return _report("convex Lipschitz bound", margins, x, Y, 0.5 * (z1 + z2), tol=1e-12)


# ---------------------------------------------------------------------------
# Serialization


def integrand_to_json(f: Integrand) -> dict:
    doc: dict = {"dimension": f.d, "scales": f.n}
    if isinstance(f.form, Simple):
        doc["form"] = "simple"
        doc["sets"] = []
        doc["laws"] = {"law": f.form.law.to_json()}
    elif isinstance(f.form, Composite):
        doc["form"] = "composite"
        doc["sets"] = [s.to_json() for s in f.form.sets]
        doc["laws"] = {"inside": f.form.inside.to_json(),
                       "outside": f.form.outside.to_json()}
    else:
        doc["form"] = "borel"
        doc["sets"] = []
        doc["laws"] = {"variant": f.form.variant, "index_cap": f.form.index_cap}
    g = f.growth
    doc["growth"] = {"c1": list(Fraction(g.c1).as_integer_ratio()),
                     "c2": list(Fraction(g.c2).as_integer_ratio()),
                     "p": list(Fraction(g.p).as_integer_ratio())}
    return doc


def integrand_from_json(doc: dict) -> Integrand:
    d = int(doc["dimension"])
    n = int(doc["scales"])
    gdoc = doc["growth"]

    def num(v):
        return float(Fraction(int(v[0]), int(v[1]))) if isinstance(v, (list, tuple)) else float(v)

    growth = GrowthBounds(c1=num(gdoc["c1"]), c2=num(gdoc["c2"]), p=num(gdoc["p"]))
    kind = doc["form"]
    laws = doc["laws"]
    if kind == "simple":
        form: Simple | Composite | BorelDiagonal = Simple(_law_from_json(laws["law"]))
    elif kind == "composite":
        sets = tuple(cellset_from_json(s) for s in doc["sets"])
        form = Composite(sets, _law_from_json(laws["inside"]), _law_from_json(laws["outside"]))
    elif kind == "borel":
        form = BorelDiagonal(laws["variant"], int(laws.get("index_cap", 64)))
    else:
        raise ValueError(f"unknown integrand form {kind!r}")
    return Integrand(d=d, n=n, form=form, growth=growth)


def dump_integrand(f: Integrand) -> str:
    return json.dumps(integrand_to_json(f), sort_keys=True, separators=(",", ":"))


def load_integrand(text: str) -> Integrand:
    return integrand_from_json(json.loads(text))
