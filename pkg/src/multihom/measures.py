"""Empirical multiscale-convergence checks.

Oscillating trajectories v(x) = (<x/rho_1>, ..., <x/rho_n>) are sampled at
rational midpoints; their averages against periodic test functions, product
indicators, and gradient fields are compared with the predicted weak limits.
Histograms keep integer counts (normalization happens at read time) plus
per-bin gradient sums so the center-of-mass identity holds to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .eps import DomainSpec, ScaleFamily, trajectory_values, _cell_gradients
from .expr import Expr
from .grid import kahan_sum

__all__ = [
    "TrajectorySampler", "EmpiricalMeasure", "riemann_lebesgue_check",
    "indicator_weak_limit_check", "empirical_young", "center_of_mass",
    "ErrorRow", "histogram_to_csv", "histogram_from_csv",
]


def resolved_sample_count(samples: int, scales: ScaleFamily, eps: float,
                          per_period: int = 64, cap: int = 2 ** 22) -> int:
    """Sample count that resolves the finest oscillation.

    Averaging checks need several samples per period of the fastest variable,
    or the lattice sampling error swamps the eps-transient they measure;
    64 per period keeps the estimator noise well below it.
    """
    h = round(1.0 / eps)
    if abs(1.0 / eps - h) > 1e-9 * max(1.0, h) or not scales.integer_exponents():
        return samples
    finest = h ** int(max(scales.exponents))
    return min(max(samples, per_period * finest), cap)


def coprime_sample_count(samples: int, scales: ScaleFamily, eps: float) -> int:
    """Smallest odd S >= samples sharing no factor with any 1/rho_k.

    Midpoint trajectories live on the lattice multiples of 1/S; if S shares a
    factor with h^a the fast variable collapses onto a few values and the
    average aliases. An odd coprime S restores equidistribution.
    """
    import math

    h = round(1.0 / eps)
    if abs(1.0 / eps - h) > 1e-9 * max(1.0, h) or not scales.integer_exponents():
        return samples
    denoms = [h ** int(a) for a in scales.exponents]
    s = samples + (samples % 2 == 0)
    while any(math.gcd(s, q) != 1 for q in denoms):
        s += 2
    return s


@dataclass(frozen=True)
class TrajectorySampler:
    """Uniform rational midpoints of Omega paired with their fast variables.

    The requested sample count is bumped to the next odd value coprime to
    every 1/rho_k so the sampled trajectory equidistributes.
    """

    scales: ScaleFamily
    eps: float
    samples: int
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "samples",
                           coprime_sample_count(self.samples, self.scales, self.eps))

    def _dom(self) -> DomainSpec:
        return DomainSpec(d=self.d, M=self.samples, z=(0.0,) * self.d)

    def points(self) -> np.ndarray:
        return self._dom().cell_midpoints()

    def values(self) -> list[np.ndarray]:
        return trajectory_values(self._dom(), self.scales, self.eps)


@dataclass
class ErrorRow:
    eps: float
    value: float
    reference: float

    @property
    def error(self) -> float:
        return abs(self.value - self.reference)


def _env_of(Y: list[np.ndarray]) -> dict:
    return {f"y{k + 1}": Y[k] for k in range(len(Y))}


def _quadrature_reference(phi: Expr, n: int, d: int, q: int) -> float:
    """Dense midpoint quadrature of phi over the n-fold product cell."""
    pts = (2 * np.arange(q) + 1) / (2.0 * q)
    axes = [pts] * (n * d)
    mesh = np.meshgrid(*axes, indexing="ij")
    env = {}
    for k in range(n):
        comps = [mesh[k * d + a] for a in range(d)]
        env[f"y{k + 1}"] = np.stack(comps, axis=-1)
    vals = phi.eval(env)
    vals = np.broadcast_to(vals, mesh[0].shape)
    return float(kahan_sum(vals) / vals.size)


def riemann_lebesgue_check(phi: Expr, scales: ScaleFamily, eps_list, samples: int = 4096,
                           d: int = 1, quad_points: int | None = None) -> list[ErrorRow]:
    """Trajectory averages of phi(v(x)) against its product-cell integral."""
    n = scales.n
    if quad_points is None:
        quad_points = 1024 if n * d <= 2 else 64
    reference = _quadrature_reference(phi, n, d, quad_points)
    rows = []
    for eps in eps_list:
        s_eff = resolved_sample_count(samples, scales, float(eps))
        sampler = TrajectorySampler(scales=scales, eps=float(eps), samples=s_eff, d=d)
        vals = np.broadcast_to(np.asarray(phi.eval(_env_of(sampler.values())), dtype=float),
                               (sampler.points().shape[0],))
        avg = float(kahan_sum(vals) / vals.size)
        rows.append(ErrorRow(eps=float(eps), value=avg, reference=reference))
    return rows


def indicator_weak_limit_check(sets, scales: ScaleFamily, eps_list, g: Expr | None = None,
                               samples: int = 4096, d: int = 1) -> list[ErrorRow]:
    """Weighted trajectory averages of a product-set indicator.

    Compares avg_j chi_A(v(x_j)) g(x_j) with |A| avg_j g(x_j); the product
    measure |A| is exact.
    """
    sets = list(sets)
    if len(sets) != scales.n:
        raise ValueError("need one cell set per scale")
    measure = Fraction(1)
    for s in sets:
        measure *= s.measure()
    rows = []
    for eps in eps_list:
        s_eff = resolved_sample_count(samples, scales, float(eps))
        sampler = TrajectorySampler(scales=scales, eps=float(eps), samples=s_eff, d=d)
        Y = sampler.values()
        chi = np.ones(sampler.points().shape[0], dtype=bool)
        for k, s in enumerate(sets):
            chi &= s.contains(Y[k])
        if g is None:
            gvals = np.ones(chi.size)
        else:
            gvals = np.broadcast_to(np.asarray(g.eval({"x": sampler.points()}), dtype=float),
                                    (chi.size,))
        value = float(kahan_sum(chi * gvals) / chi.size)
        target = float(measure) * float(kahan_sum(gvals) / gvals.size)
        rows.append(ErrorRow(eps=float(eps), value=value, reference=target))
    return rows


@dataclass
class EmpiricalMeasure:
    """Joint histogram of (fast variables, gradient) samples.

    ``counts`` spans (y bins per scale per axis) x (z bins per axis) as exact
    integers; ``z_sums`` accumulates the raw gradient components per y-bin so
    conditional means are free of bin quantization.
    """

    counts: np.ndarray           # int64, shape (B,)*(n*d) + (Bz,)*d
    z_sums: np.ndarray           # float, shape (B,)*(n*d) + (d,)
    total: int
    y_bins: int
    z_bins: int
    z_lo: float
    z_hi: float
    n: int
    d: int
    overflow: int = 0            # samples clipped into edge z-bins
    eps: float = 0.0
    exponents: tuple = ()

    def normalized(self) -> np.ndarray:
        return self.counts / self.total

    def mass(self) -> float:
        return float(kahan_sum(self.normalized()))

    def y_marginal(self) -> np.ndarray:
        z_axes = tuple(range(self.n * self.d, self.n * self.d + self.d))
        return self.counts.sum(axis=z_axes) / self.total

    def y_counts(self) -> np.ndarray:
        z_axes = tuple(range(self.n * self.d, self.n * self.d + self.d))
        return self.counts.sum(axis=z_axes)


def empirical_young(u: np.ndarray, dom: DomainSpec, scales: ScaleFamily, eps: float,
                    y_bins: int = 8, z_bins: int = 64,
                    z_range: tuple[float, float] = (-4.0, 4.0)) -> EmpiricalMeasure:
    """Histogram the pairs (v(x_cell), grad u(x_cell)) over Omega cells."""
    u = np.asarray(u, dtype=float).ravel()
    Z = _cell_gradients(u[None, :], dom)[0]          # (cells, d)
    Y = trajectory_values(dom, scales, eps)
    lo, hi = float(z_range[0]), float(z_range[1])
    if not hi > lo:
        raise ValueError("z_range must be increasing")
    nd = scales.n * dom.d
    shape = (y_bins,) * nd + (z_bins,) * dom.d
    counts = np.zeros(shape, dtype=np.int64)
    idx = []
    for k in range(scales.n):
        for a in range(dom.d):
            idx.append(np.minimum((Y[k][:, a] * y_bins).astype(int), y_bins - 1))
    overflow = 0
    for a in range(dom.d):
        t = (Z[:, a] - lo) / (hi - lo) * z_bins
        clipped = np.clip(np.floor(t).astype(int), 0, z_bins - 1)
        overflow += int(np.sum((t < 0) | (t >= z_bins)))
        idx.append(clipped)
    np.add.at(counts, tuple(idx), 1)
    z_sums = np.zeros((y_bins,) * nd + (dom.d,))
    for a in range(dom.d):
        np.add.at(z_sums[..., a], tuple(idx[:nd]), Z[:, a])
    return EmpiricalMeasure(counts=counts, z_sums=z_sums, total=Z.shape[0],
                            y_bins=y_bins, z_bins=z_bins, z_lo=lo, z_hi=hi,
                            n=scales.n, d=dom.d, overflow=overflow,
                            eps=float(eps),
                            exponents=tuple(str(a) for a in scales.exponents))


def center_of_mass(m: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean gradient per y-bin.

    Returns (means, occupied): means has shape (B,)*(n*d) + (d,) with NaN in
    empty bins, and occupied marks bins holding at least one sample. The
    mass-weighted mean over occupied bins equals the plain gradient average
    by construction.
    """
    yc = m.y_counts()
    occupied = yc > 0
    means = np.full(m.z_sums.shape, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        means[occupied] = m.z_sums[occupied] / yc[occupied][..., None]
    return means, occupied


def histogram_to_csv(m: EmpiricalMeasure, path):
    scales_tag = ";".join(m.exponents) if m.exponents else "-"
    header = (f"# young n={m.n} d={m.d} y_bins={m.y_bins} z_bins={m.z_bins} "
              f"z_lo={m.z_lo!r} z_hi={m.z_hi!r} total={m.total} overflow={m.overflow} "
              f"eps={m.eps!r} scales={scales_tag}")
    nd = m.n * m.d
    cols = [f"y{k}" for k in range(nd)] + [f"z{a}" for a in range(m.d)] + ["count"]
    lines = [header, ",".join(cols)]
    for idx in np.ndindex(*m.counts.shape):
        c = int(m.counts[idx])
        if c:
            lines.append(",".join(str(i) for i in idx) + f",{c}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def histogram_from_csv(path) -> EmpiricalMeasure:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        meta = dict(tok.split("=") for tok in header.removeprefix("# young ").split())
        n, d = int(meta["n"]), int(meta["d"])
        y_bins, z_bins = int(meta["y_bins"]), int(meta["z_bins"])
        counts = np.zeros((y_bins,) * (n * d) + (z_bins,) * d, dtype=np.int64)
        fh.readline()
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 2:
                continue
            counts[tuple(int(p) for p in parts[:-1])] = int(parts[-1])
    scales_tag = meta.get("scales", "-")
    return EmpiricalMeasure(counts=counts, z_sums=np.zeros((y_bins,) * (n * d) + (d,)),
                            total=int(meta["total"]), y_bins=y_bins, z_bins=z_bins,
                            z_lo=float(meta["z_lo"]), z_hi=float(meta["z_hi"]),
                            n=n, d=d, overflow=int(meta["overflow"]),
                            eps=float(meta.get("eps", 0.0)),
                            exponents=() if scales_tag == "-" else tuple(scales_tag.split(";")))
