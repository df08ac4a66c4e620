"""Finite-epsilon energies on Omega: direct minimization, convergence of
minima toward the homogenized prediction, and the exact diagonal-line
counterexamples.

Epsilon values are reciprocals of integers so the oscillation pattern tiles
Omega exactly; cell samples sit at rational midpoints (2j+1)/(2M), and the
fractional parts <x / eps^a> are then computed in integer arithmetic. The
counterexample path never touches floating point at all: energies come out
as exact fractions and the 1-vs-2 dichotomy is bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .cell_solver import SolverOptions
from .grid import kahan_sum
from .hom import ZGrid, hom_iterate, hom_query
from .integrand import BorelDiagonal, Integrand, diagonal_membership
from .optim import bb_minimize

__all__ = [
    "ScaleFamily", "DomainSpec", "EpsSolution", "assemble_eps_energy",
    "solve_eps", "solve_eps_batch", "gamma_convergence_run", "GammaReport",
    "counterexample_run", "CounterexampleReport", "homogenized_reference",
]


@dataclass(frozen=True)
class ScaleFamily:
    """Length scales rho_k(eps) = eps^{a_k} with strictly increasing exponents."""

    exponents: tuple[Fraction, ...]

    def __post_init__(self):
        exps = tuple(Fraction(e) for e in self.exponents)
        object.__setattr__(self, "exponents", exps)
        if not exps:
            raise ValueError("need at least one scale")
        if any(e <= 0 for e in exps):
            raise ValueError("scale exponents must be positive")
        if any(b <= a for a, b in zip(exps, exps[1:])):
            raise ValueError("scale exponents must strictly increase")

    @property
    def n(self) -> int:
        return len(self.exponents)

    def rho(self, eps: float) -> list[float]:
        return [float(eps) ** float(a) for a in self.exponents]

    def integer_exponents(self) -> bool:
        return all(a.denominator == 1 for a in self.exponents)


@dataclass(frozen=True)
class DomainSpec:
    """Omega = (0,1)^d, M cells per axis, affine boundary data u(x) = z . x."""

    d: int
    M: int
    z: tuple[float, ...]

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("domain dimension must be 1 or 2")
        if self.M < 2:
            raise ValueError("need at least 2 cells per axis")
        if len(self.z) != self.d:
            raise ValueError("boundary slope must have one component per axis")

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.M + 1,) * self.d

    @property
    def cells(self) -> int:
        return self.M ** self.d

    def node_coords(self) -> np.ndarray:
        axes = [np.arange(self.M + 1) / self.M] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_midpoints(self) -> np.ndarray:
        axes = [(2 * np.arange(self.M) + 1) / (2.0 * self.M)] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def affine_field(self) -> np.ndarray:
        return self.node_coords() @ np.asarray(self.z, dtype=float)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        mask[(slice(1, -1),) * self.d] = True
        return mask.ravel()


@dataclass
class EpsSolution:
    u: np.ndarray          # full node values, boundary pinned to z . x
    energy: float
    converged: bool
    iterations: int


def _as_integer_h(eps: float) -> int | None:
    h = 1.0 / eps
    hr = round(h)
    return int(hr) if hr >= 1 and abs(h - hr) < 1e-9 * max(1.0, h) else None


def trajectory_values(dom: DomainSpec, scales: ScaleFamily, eps: float) -> list[np.ndarray]:
    """Fractional parts <x/rho_k> at all cell midpoints, (cells, d) per scale.

    For eps = 1/h with integer exponents the reduction is integer-exact:
    <h^a (2j+1) / (2M)> = ((h^a (2j+1)) mod 2M) / (2M).
    """
    h = _as_integer_h(eps)
    mids = dom.cell_midpoints()
    out = []
    if h is not None and scales.integer_exponents() and h ** max(
            int(a) for a in scales.exponents) < 2 ** 50:
        idx = np.round(mids * 2 * dom.M).astype(np.int64)  # odd numerators 2j+1
        for a in scales.exponents:
            num = (int(h) ** int(a)) * idx
            out.append(np.mod(num, 2 * dom.M) / (2.0 * dom.M))
        return out
    for a in scales.exponents:
        rho = float(eps) ** float(a)
        out.append(np.mod(mids / rho, 1.0))
    return out


def _cell_gradients(u_full: np.ndarray, dom: DomainSpec) -> np.ndarray:
    """(rows, cells, d) forward-difference gradients of node rows."""
    rows = u_full.shape[0]
    v = u_full.reshape((rows,) + dom.node_shape)
    comps = []
    for ax in range(dom.d):
        sl_lo = [slice(None)] * (dom.d + 1)
        sl_hi = [slice(None)] * (dom.d + 1)
        sl_lo[1 + ax] = slice(0, -1)
        sl_hi[1 + ax] = slice(1, None)
        diff = (v[tuple(sl_hi)] - v[tuple(sl_lo)]) * dom.M
        # restrict the other axes to cell rows (drop the last node slab)
        for other in range(dom.d):
            if other != ax:
                sl = [slice(None)] * (dom.d + 1)
                sl[1 + other] = slice(0, -1)
                diff = diff[tuple(sl)]
        comps.append(diff.reshape(rows, -1))
    return np.stack(comps, axis=-1)


def _borel_chi_exact(form: BorelDiagonal, dom: DomainSpec, scales: ScaleFamily,
                     h: int) -> np.ndarray:
    """Exact 0/1 membership along the sampled trajectory of a Borel variant."""
    two_m = 2 * dom.M
    chi = np.zeros(dom.cells)
    for j in range(dom.M):
        num = 2 * j + 1
        if form.variant == "diag_even_yy":
            u = Fraction((h * num) % two_m, two_m)
            v = Fraction((h * h * num) % two_m, two_m)
            even = True
        else:
            u = Fraction(num, two_m)
            v = Fraction((h * num) % two_m, two_m)
            even = form.variant == "diag_even_xy"
        chi[j] = diagonal_membership(u, v, even, form.index_cap)
    return chi


def assemble_eps_energy(f: Integrand, scales: ScaleFamily, eps: float,
                        dom: DomainSpec, u: np.ndarray) -> float:
    """Cell average of f(x, <x/rho_1>, ..., grad u) at midpoint samples."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scales.n != f.n:
        raise ValueError("scale family arity does not match the integrand")
    u = np.asarray(u, dtype=float).ravel()
    Z = _cell_gradients(u[None, :], dom)[0]
    if isinstance(f.form, BorelDiagonal):
        h = _as_integer_h(eps)
        if h is None:
            raise ValueError("counterexample energies require eps = 1/h with integer h")
        chi = _borel_chi_exact(f.form, dom, scales, h)
        znorm = np.sqrt(np.sum(Z ** 2, axis=-1))
        base = 1.0 if f.form.variant == "diag_all" else 2.0
        dens = (base - chi) * znorm ** f.growth.p
    else:
        Y = trajectory_values(dom, scales, eps)
        dens = f.density(dom.cell_midpoints(), Y, Z)
    e = kahan_sum(dens) / dom.cells
    if not np.isfinite(e):
        raise RuntimeError("epsilon energy is not finite")
    return float(e)


class _EpsProblem:
    """Dirichlet descent problem; rows are independent eps values."""

    def __init__(self, f: Integrand, scales: ScaleFamily, eps_list, dom: DomainSpec,
                 eta: float):
        self.f = f
        self.dom = dom
        self.eta = eta
        self.interior = np.flatnonzero(dom.interior_mask())
        self.K = self.interior.size
        self.weights = np.full(self.K, 1.0 / self.K)
        self.boundary_u = dom.affine_field()
        self.X = dom.cell_midpoints()
        self.Ys = [np.stack([trajectory_values(dom, scales, e)[k] for e in eps_list])
                   for k in range(f.n)]  # per scale: (B, cells, d)
        from .integrand import power_iso_profile
        prof = power_iso_profile(f, self.X, self.Ys)
        self.a = None if prof is None else prof + np.zeros((len(list(eps_list)), dom.cells))
        g = f.growth
        zmax = float(np.max(np.abs(np.asarray(dom.z))))
        lip = g.c2 * dom.d * (1.0 + 2.0 ** g.p) * (1.0 + 2.0 * zmax) ** max(g.p - 2.0, 0.0)
        self.alpha0 = (1.0 / dom.M) ** 2 / (4.0 * dom.d * lip)

    def full_u(self, phi: np.ndarray) -> np.ndarray:
        rows = phi.shape[0]
        u = np.tile(self.boundary_u, (rows, 1))
        u[:, self.interior] = phi
        return u

    def _Y_rows(self, rows):
        if rows is None:
            return self.Ys
        return [y[rows] for y in self.Ys]

    def _a_rows(self, rows):
        return self.a if rows is None else self.a[rows]

    def energy(self, phi, rows):
        from .integrand import power_density
        Z = _cell_gradients(self.full_u(phi), self.dom)
        if self.a is not None:
            dens = power_density(self._a_rows(rows), Z, self.f.growth.p, self.eta)
        else:
            dens = self.f.density(self.X, self._Y_rows(rows), Z, eta=self.eta)
        return kahan_sum(dens, axis=1) / self.dom.cells

    def gradient(self, phi, rows):
        from .integrand import power_density_grad
        Z = _cell_gradients(self.full_u(phi), self.dom)
        if self.a is not None:
            q = power_density_grad(self._a_rows(rows), Z, self.f.growth.p, self.eta)
        else:
            q = self.f.density_grad(self.X, self._Y_rows(rows), Z, eta=self.eta)
        b = phi.shape[0]
        out = np.zeros((b,) + self.dom.node_shape)
        cshape = (self.dom.M,) * self.dom.d
        for ax in range(self.dom.d):
            comp = q[..., ax].reshape((b,) + cshape)
            pad = [(0, 0)] + [(0, 1)] * self.dom.d
            pad[1 + ax] = (1, 1)
            padded = np.pad(comp, pad)
            sl_lo = [slice(None)] * (self.dom.d + 1)
            sl_hi = [slice(None)] * (self.dom.d + 1)
            sl_lo[1 + ax] = slice(0, -1)
            sl_hi[1 + ax] = slice(1, None)
            out += (padded[tuple(sl_lo)] - padded[tuple(sl_hi)]) * self.dom.M
        scale = self.K / self.dom.cells
        return out.reshape(b, -1)[:, self.interior] * scale

    def project(self, phi, rows):
        return phi


def solve_eps_batch(f: Integrand, scales: ScaleFamily, eps_list, dom: DomainSpec,
                    opts: SolverOptions = SolverOptions()) -> list[EpsSolution]:
    """Descent from the affine trial for each eps; monotone energies."""
    f.require_admissible("solve_eps")
    from .integrand import default_eta
    eta = default_eta(f.growth.p) if opts.eta is None else opts.eta
    prob = _EpsProblem(f, scales, list(eps_list), dom, eta)
    phi0 = np.tile(dom.affine_field()[prob.interior], (len(list(eps_list)), 1))
    res = bb_minimize(prob, phi0, opts.descent())
    u_full = prob.full_u(res.phi)
    out = []
    for b in range(u_full.shape[0]):
        Z = _cell_gradients(u_full[b][None, :], dom)
        dens = f.density(prob.X, [y[b] for y in prob.Ys], Z[0])
        energy = float(kahan_sum(dens) / dom.cells)
        out.append(EpsSolution(u=u_full[b], energy=energy,
                               converged=bool(res.converged[b]),
                               iterations=int(res.iterations[b])))
    return out


def solve_eps(f: Integrand, scales: ScaleFamily, eps: float, dom: DomainSpec,
              opts: SolverOptions = SolverOptions()) -> EpsSolution:
    return solve_eps_batch(f, scales, [eps], dom, opts)[0]


def _uses_x(e) -> bool:
    from . import expr as ex
    if isinstance(e, ex.Coord):
        return e.var == "x"
    if isinstance(e, ex.Ind):
        return e.var == "x"
    if isinstance(e, ex.Add):
        return any(_uses_x(t) for t in e.terms)
    if isinstance(e, ex.Mul):
        return any(_uses_x(t) for t in e.factors)
    if isinstance(e, (ex.Sin2pi, ex.Cos2pi)):
        return _uses_x(e.arg)
    if isinstance(e, ex.Clamp):
        return _uses_x(e.arg)
    return False


def integrand_uses_x(f: Integrand) -> bool:
    from .integrand import Composite, PowerIso, QuadAniso, Simple

    def law_uses(law):
        if isinstance(law, PowerIso):
            return _uses_x(law.coeff)
        if isinstance(law, QuadAniso):
            return any(_uses_x(e) for e in (law.a11, law.a12, law.a22))
        return True
    if isinstance(f.form, Simple):
        return law_uses(f.form.law)
    if isinstance(f.form, Composite):
        return law_uses(f.form.inside) or law_uses(f.form.outside)
    return True


def homogenized_reference(f: Integrand, z, grid, opts: SolverOptions = SolverOptions(),
                          kappa: float = 3.0, inner_spacing: float | None = None,
                          x_points: int = 8, workers: int = 1) -> float:
    """Reference energy: the homogenized functional at the affine trial,
    i.e. the integral over Omega of f_hom(x, z).

    For x-independent integrands (all acceptance fixtures) convexity makes the
    affine function the homogenized minimizer, so this equals the limit of the
    minimum energies; with x-dependence it is an upper report reference.
    f_hom is averaged over a midpoint x-grid in that case. z is made an exact
    table node so no interpolation bias enters.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    zmax = float(np.max(np.abs(z)))
    zgrid = ZGrid(zmax=zmax if zmax > 0 else 1.0, m=3, d=f.d)

    def fhom_at(xpt) -> float:
        table = hom_iterate(f, xpt, zgrid, grid, opts, kappa=kappa,
                            inner_spacing=inner_spacing, workers=workers)
        return hom_query(table, [], z)

    if not integrand_uses_x(f):
        return fhom_at(np.zeros(f.d) + 0.5)
    pts = (2 * np.arange(x_points) + 1) / (2.0 * x_points)
    if f.d == 1:
        xs = pts[:, None]
    else:
        g0, g1 = np.meshgrid(pts, pts, indexing="ij")
        xs = np.stack([g0.ravel(), g1.ravel()], axis=-1)
    vals = [fhom_at(xp) for xp in xs]
    return float(kahan_sum(np.asarray(vals)) / len(vals))


@dataclass
class GammaReport:
    z: tuple[float, ...]
    reference: float
    rows: list[dict] = field(default_factory=list)
    monotone_after_first: bool = True
    flagged_eps: list[float] = field(default_factory=list)
    noise_floor: float = 1e-6

    @property
    def converged(self) -> bool:
        return all(r["converged"] for r in self.rows)


def gamma_convergence_run(f: Integrand, scales: ScaleFamily, eps_list, dom: DomainSpec,
                          z=None, opts: SolverOptions = SolverOptions(),
                          reference: float | None = None,
                          cell_grid=None, x_points: int = 8) -> GammaReport:
    """Minimum energies along eps versus the homogenized prediction.

    The gap sequence is checked for non-increase after the first term; gaps
    below the noise floor count as ties, and a single pre-asymptotic violation
    is allowed but flagged. For x-dependent integrands the reference averages
    f_hom(x, z) over an x_points midpoint grid per axis.
    """
    f.require_admissible("gamma_convergence_run")
    z = tuple(dom.z if z is None else np.atleast_1d(z).tolist())
    dom = DomainSpec(d=dom.d, M=dom.M, z=z)
    if reference is None:
        from .grid import PeriodicGrid
        grid = cell_grid if cell_grid is not None else PeriodicGrid(d=f.d, N=128)
        reference = homogenized_reference(f, z, grid, opts, x_points=x_points)
    sols = solve_eps_batch(f, scales, list(eps_list), dom, opts)
    report = GammaReport(z=z, reference=reference, rows=[])
    gaps = []
    for eps, sol in zip(eps_list, sols):
        gap = abs(sol.energy - reference) / max(abs(reference), 1e-300)
        gaps.append(gap)
        report.rows.append({"eps": float(eps), "energy": sol.energy,
                            "reference": reference, "gap": gap,
                            "iterations": sol.iterations, "converged": sol.converged})
    floor = report.noise_floor
    violations = [i for i in range(2, len(gaps))
                  if gaps[i] > max(gaps[i - 1], floor) + floor]
    report.monotone_after_first = len(violations) <= 1
    report.flagged_eps = [float(eps_list[i]) for i in violations]
    return report


@dataclass
class CounterexampleReport:
    variant: str
    M: int
    index_cap: int
    p: float
    rows: list[dict] = field(default_factory=list)


def _valid_sample_count(M: int, h_list, index_cap: int) -> bool:
    for h in h_list:
        if math.gcd(M, h) != 1:
            return False
    for i in range(2, index_cap + 1, 2):
        if math.gcd(M, i) != 1:
            return False
    return True


def default_sample_count(h_list, index_cap: int, at_least: int = 101) -> int:
    m = max(at_least, index_cap + 1)
    while not _valid_sample_count(m, h_list, index_cap):
        m += 1
    return m


def counterexample_run(variant: str, h_list, p: float, M: int | None = None) -> CounterexampleReport:
    """Exact trajectory energies of the diagonal-line densities at u(x) = x.

    For the parity variants the ratio F_h(u) / int |u'|^p is exactly 1 for
    even h and exactly 2 for odd h; for the all-lines indicator the trajectory
    integral is exactly 1 against a product integral of 0.
    """
    h_list = [int(h) for h in h_list]
    if any(h <= 0 for h in h_list):
        raise ValueError("oscillation indices h must be positive integers")
    if variant not in ("diag_all", "diag_even_xy", "diag_even_yy"):
        raise ValueError(f"unknown counterexample variant {variant!r}")
    index_cap = 2 * max(h_list)
    if M is None:
        M = default_sample_count(h_list, index_cap)
    elif not _valid_sample_count(M, h_list, index_cap):
        raise ValueError(
            f"sample count M={M} must be coprime to every h and every even index <= {index_cap}")
    report = CounterexampleReport(variant=variant, M=M, index_cap=index_cap, p=float(p))
    two_m = 2 * M
    for h in h_list:
        hits = 0
        for j in range(M):
            num = 2 * j + 1
            if variant == "diag_even_yy":
                u = Fraction((h * num) % two_m, two_m)
                v = Fraction((h * h * num) % two_m, two_m)
                even = True
            else:
                u = Fraction(num, two_m)
                v = Fraction((h * num) % two_m, two_m)
                even = variant == "diag_even_xy"
            hits += diagonal_membership(u, v, even, index_cap)
        if variant == "diag_all":
            trajectory = Fraction(hits, M)
            report.rows.append({"h": h, "trajectory_integral": trajectory,
                                "product_integral": Fraction(0)})
        else:
            energy = Fraction(2 * M - hits, M)  # mean of (2 - chi) * |u'|^p, u' = 1
            report.rows.append({"h": h, "energy": energy,
                                "reference": Fraction(1), "ratio": energy})
    return report
