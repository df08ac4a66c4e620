"""Homogenized densities: scale-by-scale iteration and the joint cell problem.

The iteration peels off the fastest cell variable first: a cell solve over
y^n at frozen (y1..y^{n-1}, z) produces a tabulated intermediate density,
which becomes the energy for the next-slower variable, down to the final
table f_hom(x, .) over a z-grid. The joint route minimizes over the whole
stack of correctors phi_1(y1)...phi_n(y1..y^n) at once. The two agree in the
continuum; the lab cross-checks them at desk scale.

Tables are queried by multilinear interpolation, exact at nodes, and never
extrapolated: a query outside the tabulated box is a hard error asking for a
larger source z-grid.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell_solver import IntegrandSlice, SolverOptions, solve_cell_batch
from .grid import PeriodicGrid, kahan_sum
from .integrand import GrowthBounds, Integrand
from .optim import bb_minimize

__all__ = [
    "ZGrid", "HomTable", "CorrectorStack", "TableBoxError", "TableSlice",
    "hom_step", "hom_iterate", "hom_joint", "hom_query",
    "growth_margins", "convexity_margins",
    "save_table", "load_table", "JointResult",
]


class TableBoxError(RuntimeError):
    """A z-query left the tabulated box; enlarge the source ZGrid (kappa)."""


@dataclass(frozen=True)
class ZGrid:
    """Symmetric tabulation grid [-zmax, zmax] with m nodes per z axis."""

    zmax: float
    m: int
    d: int = 1

    def __post_init__(self):
        if self.zmax <= 0:
            raise ValueError("zmax must be positive")
        if self.m < 3 or self.m % 2 == 0:
            raise ValueError("node count must be odd and >= 3 so that z=0 is a node")

    @property
    def spacing(self) -> float:
        return 2.0 * self.zmax / (self.m - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.zmax, self.zmax, self.m)

    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.axis(),) * self.d

    def nodes(self) -> np.ndarray:
        """(m^d, d) array of z nodes, row-major."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass
class HomTable:
    level: int
    y_axes: tuple[np.ndarray, ...]   # (level-1)*d axes, variable-major
    z_axes: tuple[np.ndarray, ...]   # d axes
    values: np.ndarray
    growth: GrowthBounds
    d: int
    converged: bool = True
    solves: int = 0

    def __post_init__(self):
        want = tuple(len(ax) for ax in self.y_axes + self.z_axes)
        if self.values.shape != want:
            raise ValueError(f"table shape {self.values.shape} does not match axes {want}")

    @property
    def y_shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.y_axes)

    @property
    def z_shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.z_axes)

    def z_nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.z_axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


def _multilinear(axes, values, pt):
    """Multilinear interpolation at one point; exact at nodes, no extrapolation."""
    pt = np.asarray(pt, dtype=float)
    idx = []
    frac = []
    for ax_no, (ax, x) in enumerate(zip(axes, pt)):
        if x < ax[0] or x > ax[-1]:
            raise TableBoxError(
                f"query coordinate {x} outside tabulated range [{ax[0]}, {ax[-1]}] "
                f"on axis {ax_no}; rebuild the table with a larger ZGrid")
        i = min(max(int(np.searchsorted(ax, x, side="right")) - 1, 0), len(ax) - 2)
        idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    out = 0.0
    for corner in range(1 << len(axes)):
        weight = 1.0
        sel = []
        for a in range(len(axes)):
            hi = (corner >> a) & 1
            weight *= frac[a] if hi else (1.0 - frac[a])
            sel.append(idx[a] + hi)
        if weight != 0.0:
            out += weight * values[tuple(sel)]
    return float(out)


def hom_query(table: HomTable, y, z) -> float:
    """Interpolated table value at slow coordinates y and gradient z."""
    coords = []
    for pt in y:
        coords.extend(np.atleast_1d(np.asarray(pt, dtype=float)).tolist())
    coords.extend(np.atleast_1d(np.asarray(z, dtype=float)).tolist())
    if len(coords) != len(table.y_axes) + len(table.z_axes):
        raise ValueError("query arity does not match the table axes")
    return _multilinear(table.y_axes + table.z_axes, table.values, coords)


class TableSlice:
    """Cell density backed by rows of a tabulated intermediate density.

    ``rows`` holds, per problem and per cell of the fast variable, the source
    values over the z grid. Reported values interpolate multilinearly; the
    descent solver instead sees the one-spacing box filter of that
    interpolant - a convex C1 surrogate whose offset is O(spacing^2), the
    same order as the chord bias of the table itself. Without it a
    first-order method creeps to a halt on the interpolation kinks (for a 2D
    gradient axis the plain bilinear view is used). A trial outside the box
    evaluates to +inf so the line search retreats, and the accepted solution
    is re-checked against a one-spacing safety margin.
    """

    def __init__(self, rows: np.ndarray, z_axes, growth: GrowthBounds):
        self.rows = np.asarray(rows, dtype=float)
        self.z_axes = tuple(np.asarray(ax, dtype=float) for ax in z_axes)
        self.growth = growth
        self.d = len(self.z_axes)
        if self.d not in (1, 2):
            raise ValueError("tables support 1 or 2 gradient axes")
        self.z0 = np.array([ax[0] for ax in self.z_axes])
        self.dz = np.array([ax[1] - ax[0] for ax in self.z_axes])
        for ax in self.z_axes:
            steps = np.diff(ax)
            if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
                raise ValueError("table z axes must be uniform")
        if self.d == 1:
            self.slopes = np.diff(self.rows, axis=-1) / self.dz[0]

    def _locate(self, W, rows):
        data = self.rows if rows is None else self.rows[rows]
        t = (W - self.z0) / self.dz
        sizes = np.array([len(ax) for ax in self.z_axes])
        inside = np.all((t >= 0.0) & (t <= sizes - 1.0), axis=-1)
        i = np.clip(np.floor(t).astype(int), 0, sizes - 2)
        frac = t - i
        return data, i, frac, inside

    def values_raw(self, W, rows=None):
        """Multilinear table value; +inf outside the box."""
        data, i, frac, inside = self._locate(W, rows)
        if self.d == 1:
            v0 = np.take_along_axis(data, i[..., 0][..., None], axis=-1)[..., 0]
            v1 = np.take_along_axis(data, (i[..., 0] + 1)[..., None], axis=-1)[..., 0]
            out = v0 * (1.0 - frac[..., 0]) + v1 * frac[..., 0]
        else:
            out = self._bilinear(data, i, frac)[0]
        return np.where(inside, out, np.inf)

    def _smooth_locate(self, W, rows):
        """Half-shifted window index and local offset for the box filter.

        Window j covers [z_j - dz/2, z_j + dz/2]; inside it the filtered value
        is quadratic, matching the chords at the window edges.
        """
        data = self.rows if rows is None else self.rows[rows]
        slopes = self.slopes if rows is None else self.slopes[rows]
        w = W[..., 0]
        m = data.shape[-1]
        t = (w - self.z0[0]) / self.dz[0]
        inside = (t >= 0.0) & (t <= m - 1.0)
        j = np.clip(np.floor(t + 0.5).astype(int), 0, m - 1)
        s = w - (self.z0[0] + j * self.dz[0])        # in [-dz/2, dz/2]
        m_left = np.take_along_axis(slopes, np.maximum(j - 1, 0)[..., None], axis=-1)[..., 0]
        m_right = np.take_along_axis(slopes, np.minimum(j, m - 2)[..., None], axis=-1)[..., 0]
        # boundary half-windows carry a single slope, hence no curvature
        m_left = np.where(j == 0, m_right, m_left)
        m_right = np.where(j == m - 1, m_left, m_right)
        vj = np.take_along_axis(data, j[..., None], axis=-1)[..., 0]
        return vj, m_left, m_right, s, inside

    def values(self, W, rows=None):
        if self.d == 2:
            return self.values_raw(W, rows)
        vj, ml, mr, s, inside = self._smooth_locate(W, rows)
        dz = self.dz[0]
        out = vj + ml * s + (mr - ml) / (2.0 * dz) * (s + 0.5 * dz) ** 2
        return np.where(inside, out, np.inf)

    def grads(self, W, rows=None):
        if self.d == 2:
            data, i, frac, inside = self._locate(W, rows)
            if not np.all(inside):
                raise TableBoxError("gradient requested outside the tabulated box")
            return self._bilinear(data, i, frac)[1]
        vj, ml, mr, s, inside = self._smooth_locate(W, rows)
        if not np.all(inside):
            raise TableBoxError("gradient requested outside the tabulated box")
        dz = self.dz[0]
        slope = ml + (mr - ml) * (s + 0.5 * dz) / dz
        return slope[..., None]

    def _bilinear(self, data, i, frac):
        i0, i1 = i[..., 0], i[..., 1]
        f0, f1 = frac[..., 0], frac[..., 1]
        m1 = data.shape[-1]
        flat = data.reshape(data.shape[:-2] + (-1,))

        def corner(a, b):
            return np.take_along_axis(flat, ((i0 + a) * m1 + (i1 + b))[..., None], axis=-1)[..., 0]

        v00, v01, v10, v11 = corner(0, 0), corner(0, 1), corner(1, 0), corner(1, 1)
        val = (v00 * (1 - f0) * (1 - f1) + v01 * (1 - f0) * f1
               + v10 * f0 * (1 - f1) + v11 * f0 * f1)
        g = np.empty(val.shape + (2,))
        g[..., 0] = ((v10 - v00) * (1 - f1) + (v11 - v01) * f1) / self.dz[0]
        g[..., 1] = ((v01 - v00) * (1 - f0) + (v11 - v10) * f0) / self.dz[1]
        return val, g

    def final_check(self, W):
        lo = self.z0 + self.dz
        hi = self.z0 + self.dz * (np.array([len(ax) for ax in self.z_axes]) - 2)
        if np.any(W < lo) or np.any(W > hi):
            raise TableBoxError(
                "a cell solve reached the edge of the tabulated z box; "
                "rebuild with a larger source ZGrid (raise kappa or the range)")


# ---------------------------------------------------------------------------
# Iterated route


def _grid_axes(grid: PeriodicGrid) -> tuple[np.ndarray, ...]:
    ax = np.arange(grid.N) / grid.N
    return (ax,) * grid.d


def _chunked_batch(slc, Z, grid, opts, chunk, workers):
    B = Z.shape[0]
    bounds = [(s, min(s + chunk, B)) for s in range(0, B, chunk)]

    def run(se):
        s, e = se
        res, values = solve_cell_batch(_SubsetSlice(slc, s), Z[s:e], grid, opts)
        return values, res.converged, int(res.iterations.max(initial=0))

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(se) for se in bounds]
    values = np.concatenate([p[0] for p in parts])
    converged = np.concatenate([p[1] for p in parts])
    iters = max(p[2] for p in parts)
    return values, converged, iters


class _SubsetSlice:
    """View of a slice with problem rows shifted by a chunk offset."""

    def __init__(self, base, offset: int):
        self.base = base
        self.offset = offset
        self.growth = base.growth
        self.d = base.d

    def _shift(self, rows):
        return None if rows is None else rows + self.offset

    def values(self, W, rows=None):
        r = self._shift(rows)
        if r is None:
            r = np.arange(self.offset, self.offset + W.shape[0])
        return self.base.values(W, r)

    def values_raw(self, W, rows=None):
        r = self._shift(rows)
        if r is None:
            r = np.arange(self.offset, self.offset + W.shape[0])
        return self.base.values_raw(W, r)

    def grads(self, W, rows=None):
        r = self._shift(rows)
        if r is None:
            r = np.arange(self.offset, self.offset + W.shape[0])
        return self.base.grads(W, r)

    def final_check(self, W):
        check = getattr(self.base, "final_check", None)
        if check is not None:
            check(W)


def hom_step(source, x, slow_axes, zgrid: ZGrid, grid: PeriodicGrid,
             opts: SolverOptions = SolverOptions(), workers: int = 1,
             chunk: int = 4096) -> HomTable:
    """One homogenization level: cell-solve over the fastest remaining variable
    at every (slow y, z) node of the requested tabulation.

    ``slow_axes`` lists, per remaining slow variable, the d per-dimension node
    arrays of its tabulation (normally the corners of the grid that will be
    used when that variable is solved later).
    """
    if isinstance(source, Integrand):
        source.require_admissible("hom_step")
        d = source.d
        if len(slow_axes) != source.n - 1:
            raise ValueError(f"integrand with n={source.n} needs {source.n - 1} slow variables")
        growth = source.growth
    elif isinstance(source, HomTable):
        d = source.d
        if len(slow_axes) != (len(source.y_axes) // d) - 1:
            raise ValueError("slow_axes must drop exactly one variable from the source table")
        growth = source.growth
    else:
        raise TypeError("source must be an Integrand or a HomTable")
    if zgrid.d != d:
        raise ValueError("zgrid dimension must match the integrand dimension")

    flat_y_axes: tuple[np.ndarray, ...] = tuple(np.asarray(a, dtype=float)
                                                for var in slow_axes for a in var)
    y_shape = tuple(len(a) for a in flat_y_axes)
    z_axes = zgrid.axes()
    z_nodes = zgrid.nodes()                     # (Mz, d)
    n_slow = int(np.prod(y_shape)) if y_shape else 1
    n_z = z_nodes.shape[0]
    B = n_slow * n_z

    # per-problem slow coordinates (variable-major C order) and z targets
    slow_mesh = np.meshgrid(*flat_y_axes, indexing="ij") if y_shape else []
    slow_flat = [m.ravel() for m in slow_mesh]
    Z = np.tile(z_nodes, (n_slow, 1))
    slow_Y = []
    for v in range(len(slow_axes)):
        comps = [np.repeat(slow_flat[v * d + a], n_z) for a in range(d)]
        slow_Y.append(np.stack(comps, axis=-1))

    if isinstance(source, Integrand):
        slc = _SliceSource(IntegrandSlice(source, x, slow_Y, grid, opts.eta))
    else:
        corners = _grid_axes(grid)
        k = len(slow_axes)  # source table's last variable index is k (0-based)
        for a in range(d):
            src_ax = source.y_axes[k * d + a]
            if len(src_ax) != len(corners[a]) or not np.allclose(src_ax, corners[a], atol=1e-15):
                raise ValueError("the source table's fast y axis must equal the solver grid corners")
        for j in range(k * d):
            if len(source.y_axes[j]) != len(flat_y_axes[j]) or \
               not np.allclose(source.y_axes[j], flat_y_axes[j], atol=1e-15):
                raise ValueError("slow axes must match the source table's slow axes")
        margin = max(float(np.max(np.abs(Z))) + 2.0 * (source.z_axes[0][1] - source.z_axes[0][0]), 0.0)
        if margin > float(source.z_axes[0][-1]):
            raise TableBoxError(
                f"requested z range {np.max(np.abs(Z)):g} leaves no corrector headroom in the "
                f"source box [{source.z_axes[0][0]:g}, {source.z_axes[0][-1]:g}]; "
                "enlarge the source ZGrid")
        vals = source.values.reshape((n_slow, grid.size) + source.z_shape)
        rows = vals[np.repeat(np.arange(n_slow), n_z)]
        slc = TableSlice(rows, source.z_axes, growth)

    values, converged, iters = _chunked_batch(slc, Z, grid, opts, chunk, workers)
    table_vals = values.reshape(y_shape + zgrid.d * (zgrid.m,))
    return HomTable(level=len(slow_axes) + 1, y_axes=flat_y_axes, z_axes=z_axes,
                    values=table_vals, growth=growth, d=d,
                    converged=bool(np.all(converged)), solves=B)


class _SliceSource:
    """IntegrandSlice wrapper that tolerates chunk row offsets."""

    def __init__(self, slc: IntegrandSlice):
        self.slc = slc
        self.growth = slc.growth
        self.d = slc.d

    def values(self, W, rows=None):
        return self.slc.values(W, rows)

    def values_raw(self, W, rows=None):
        return self.slc.values_raw(W, rows)

    def grads(self, W, rows=None):
        return self.slc.grads(W, rows)

    def final_check(self, W):
        return None


def hom_iterate(f: Integrand, x, zgrid: ZGrid, grids, opts: SolverOptions = SolverOptions(),
                kappa: float = 3.0, inner_spacing: float | None = None,
                workers: int = 1, keep_intermediate: bool = False):
    """Chain hom_step from the fastest scale down to f_hom(x, .).

    Intermediate tables live on z ranges inflated by ``kappa`` per level so
    that inner solves stay inside the tabulated boxes; their spacing defaults
    to the final grid's spacing unless ``inner_spacing`` refines it.
    """
    f.require_admissible("hom_iterate")
    if isinstance(grids, PeriodicGrid):
        grids = [grids] * f.n
    grids = list(grids)
    if len(grids) != f.n:
        raise ValueError(f"need one grid per scale ({f.n}), got {len(grids)}")
    if kappa <= 1.0:
        raise ValueError("kappa must exceed 1")

    spacing = inner_spacing if inner_spacing is not None else zgrid.spacing
    ladders = [zgrid]
    for _ in range(f.n - 1):
        zmax = ladders[-1].zmax * kappa
        m = int(np.ceil(2.0 * zmax / spacing)) + 1
        if m % 2 == 0:
            m += 1
        ladders.append(ZGrid(zmax=zmax, m=max(m, 3), d=zgrid.d))

    table: HomTable | None = None
    intermediates = []
    for level in range(f.n, 0, -1):
        slow_axes = [_grid_axes(grids[j]) for j in range(level - 1)]
        source = f if table is None else table
        table = hom_step(source, x, slow_axes, ladders[level - 1], grids[level - 1],
                         opts, workers=workers)
        if keep_intermediate and level > 1:
            intermediates.append(table)
    if keep_intermediate:
        return table, intermediates
    return table


# ---------------------------------------------------------------------------
# Joint route


@dataclass
class CorrectorStack:
    fields: list[np.ndarray]  # phi_k over (N_1,)*d + ... + (N_k,)*d

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(f))) for f in self.fields)


@dataclass
class JointResult:
    value: float
    stack: CorrectorStack
    grad_norm: float
    iterations: int
    converged: bool


class _JointProblem:
    """All correctors minimized at once over the product cell grid."""

    def __init__(self, f: Integrand, x, z, grids: list[PeriodicGrid], eta: float):
        self.f = f
        self.eta = eta
        self.d = f.d
        self.n = f.n
        self.grids = grids
        self.z = np.asarray(z, dtype=float)
        self.block_shapes = []
        for k in range(1, f.n + 1):
            shape = ()
            for j in range(k):
                shape = shape + (grids[j].N,) * f.d
            self.block_shapes.append(shape)
        self.sizes = [int(np.prod(s)) for s in self.block_shapes]
        self.K = int(np.sum(self.sizes))
        w = np.concatenate([np.full(sz, 1.0 / sz) for sz in self.sizes])
        self.weights = w
        self.cell_shape = self.block_shapes[-1]
        self.total_cells = self.sizes[-1]
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.Y = []
        for j in range(f.n):
            axes = [np.arange(grids[j].N) / grids[j].N] * f.d
            mesh = np.meshgrid(*axes, indexing="ij")
            coords = np.stack(mesh, axis=-1)  # (N,)*d + (d,)
            lead = (1,) * (j * f.d)
            trail = (1,) * ((f.n - 1 - j) * f.d)
            self.Y.append(coords.reshape(lead + coords.shape[:-1] + trail + (f.d,)))
        from .integrand import power_iso_profile
        prof = power_iso_profile(f, self.x, self.Y)
        self.a = None if prof is None else np.broadcast_to(prof, self.cell_shape)
        g = f.growth
        zmax = float(np.max(np.abs(self.z)))
        lip = g.c2 * f.d * (1.0 + 2.0 ** g.p) * (1.0 + 2.0 * zmax) ** max(g.p - 2.0, 0.0)
        hmin = min(gr.h for gr in grids)
        self.alpha0 = hmin ** 2 / (4.0 * f.d * lip * f.n)

    def _blocks(self, flat: np.ndarray) -> list[np.ndarray]:
        out = []
        at = 0
        for shape, sz in zip(self.block_shapes, self.sizes):
            out.append(flat[at:at + sz].reshape(shape))
            at += sz
        return out

    def _w_field(self, flat: np.ndarray) -> np.ndarray:
        W = np.zeros(self.cell_shape + (self.d,))
        W += self.z
        for k, phi in enumerate(self._blocks(flat), start=1):
            own_axes = range((k - 1) * self.d, k * self.d)
            for a, ax in enumerate(own_axes):
                gcomp = (np.roll(phi, -1, axis=ax) - phi) * self.grids[k - 1].N
                expand = gcomp.reshape(gcomp.shape + (1,) * ((self.n - k) * self.d))
                W[..., a] += expand
        return W

    def energy(self, phi, rows, eta=None):
        from .integrand import power_density
        W = self._w_field(phi[0])
        use_eta = self.eta if eta is None else eta
        if self.a is not None:
            dens = power_density(self.a, W, self.f.growth.p, use_eta)
        else:
            dens = self.f.density(self.x, self.Y, W, eta=use_eta)
        return np.array([kahan_sum(dens) / self.total_cells])

    def gradient(self, phi, rows):
        from .integrand import power_density_grad
        W = self._w_field(phi[0])
        if self.a is not None:
            dgrad = power_density_grad(self.a, W, self.f.growth.p, self.eta)
        else:
            dgrad = self.f.density_grad(self.x, self.Y, W, eta=self.eta)
        parts = []
        for k in range(1, self.n + 1):
            trail = tuple(range(k * self.d, self.n * self.d))
            q = dgrad.mean(axis=trail) if trail else dgrad  # (block shape, d)
            out = np.zeros(self.block_shapes[k - 1])
            own_axes = range((k - 1) * self.d, k * self.d)
            for a, ax in enumerate(own_axes):
                comp = q[..., a]
                out += (np.roll(comp, 1, axis=ax) - comp) * self.grids[k - 1].N
            parts.append(out.ravel())
        return np.concatenate(parts)[None, :]

    def project(self, phi, rows):
        blocks = self._blocks(phi[0])
        out = []
        for k, b in enumerate(blocks, start=1):
            own_axes = tuple(range((k - 1) * self.d, k * self.d))
            out.append((b - b.mean(axis=own_axes, keepdims=True)).ravel())
        return np.concatenate(out)[None, :]


def hom_joint(f: Integrand, x, z, grids, opts: SolverOptions = SolverOptions()) -> JointResult:
    """Joint n-scale cell problem at one (x, z): inf over the corrector stack."""
    f.require_admissible("hom_joint")
    if isinstance(grids, PeriodicGrid):
        grids = [grids] * f.n
    grids = list(grids)
    if len(grids) != f.n:
        raise ValueError(f"need one grid per scale ({f.n}), got {len(grids)}")
    from .integrand import default_eta
    eta = default_eta(f.growth.p) if opts.eta is None else opts.eta
    prob = _JointProblem(f, x, np.atleast_1d(np.asarray(z, dtype=float)), grids, eta)
    res = bb_minimize(prob, np.zeros((1, prob.K)), opts.descent())
    value = float(prob.energy(res.phi, None, eta=0.0)[0])
    blocks = prob._blocks(prob.project(res.phi, None)[0])
    return JointResult(value=value, stack=CorrectorStack(fields=blocks),
                       grad_norm=float(res.grad_norm[0]),
                       iterations=int(res.iterations[0]),
                       converged=bool(res.converged[0]))


# ---------------------------------------------------------------------------
# Node-level property helpers


def growth_margins(table: HomTable) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) sandwich slack at every node; negatives are violations."""
    zn = table.z_nodes()
    znorm = np.sqrt(np.sum(zn ** 2, axis=-1)).reshape(table.z_shape)
    v = table.values
    g = table.growth
    lower = v - g.c1 * znorm ** g.p
    upper = g.c2 * (1.0 + znorm ** g.p) - v
    return lower, upper


def convexity_margins(table: HomTable) -> list[np.ndarray]:
    """Second differences along each z axis; below -1e-6*(1+value) violates."""
    out = []
    nz = len(table.z_axes)
    for a in range(nz):
        ax = len(table.y_axes) + a
        v = np.moveaxis(table.values, ax, -1)
        second = v[..., :-2] + v[..., 2:] - 2.0 * v[..., 1:-1]
        out.append(second + 1e-6 * (1.0 + v[..., 1:-1]))
    return out


# ---------------------------------------------------------------------------
# Persistence


def save_table(table: HomTable, path):
    g = table.growth
    lines = [
        f"# homtable level={table.level} d={table.d} converged={table.converged} solves={table.solves}",
        f"# growth c1={float(g.c1)!r} c2={float(g.c2)!r} p={float(g.p)!r}",
    ]
    for i, ax in enumerate(table.y_axes):
        lines.append("# yaxis " + " ".join(repr(float(v)) for v in ax))
    for ax in table.z_axes:
        lines.append("# zaxis " + " ".join(repr(float(v)) for v in ax))
    naxes = len(table.y_axes) + len(table.z_axes)
    lines.append(",".join(f"i{k}" for k in range(naxes)) + ",value")
    for idx in np.ndindex(*table.values.shape):
        lines.append(",".join(str(i) for i in idx) + f",{float(table.values[idx])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_table(path) -> HomTable:
    y_axes: list[np.ndarray] = []
    z_axes: list[np.ndarray] = []
    meta = {}
    growth = {}
    body = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# homtable"):
                meta = dict(tok.split("=") for tok in line[len("# homtable "):].split())
            elif line.startswith("# growth"):
                growth = dict(tok.split("=") for tok in line[len("# growth "):].split())
            elif line.startswith("# yaxis"):
                y_axes.append(np.array([float(v) for v in line[len("# yaxis "):].split()]))
            elif line.startswith("# zaxis"):
                z_axes.append(np.array([float(v) for v in line[len("# zaxis "):].split()]))
            elif line.startswith("i0,") or line.startswith("i0,value"):
                continue
            elif line[0].isdigit() or line[0] == "-":
                body.append(line)
    shape = tuple(len(a) for a in y_axes + z_axes)
    values = np.empty(shape)
    for line in body:
        parts = line.split(",")
        values[tuple(int(p) for p in parts[:-1])] = float(parts[-1])
    gb = GrowthBounds(c1=float(growth["c1"]), c2=float(growth["c2"]), p=float(growth["p"]))
    return HomTable(level=int(meta["level"]), y_axes=tuple(y_axes), z_axes=tuple(z_axes),
                    values=values, growth=gb, d=int(meta["d"]),
                    converged=meta.get("converged", "True") == "True",
                    solves=int(meta.get("solves", 0)))
