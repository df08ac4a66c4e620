"""Single-cell energy minimization over mean-zero periodic fields.

``solve_cell`` minimizes phi -> avg_y rho(y, z + grad phi(y)) by monotone
first-order descent from phi = 0. The density rho ("slice") is anything with
``values``/``grads`` over cell-indexed gradient samples: a frozen view of an
integrand over its fastest cell variable, or an interpolated table row from a
previous homogenization level.

Many independent cell problems (different z, different slow variables) run
in one lockstep batch; per-problem trajectories are batch-invariant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import Field, PeriodicGrid, adjoint_gradient, cell_average, kahan_sum
from .integrand import (Integrand, default_eta, power_density, power_density_grad,
                        power_iso_profile)
from .optim import DescentOptions, bb_minimize

__all__ = ["SolverOptions", "CellSolution", "IntegrandSlice",
           "cell_energy", "cell_energy_gradient", "solve_cell", "solve_cell_batch"]


@dataclass(frozen=True)
class SolverOptions:
    tol_grad: float = 1e-8
    tol_energy: float = 1e-12
    max_iter: int = 20000
    eta: float | None = None          # None -> 0 for p >= 2, 1e-8 below
    step_rule: str = "bb"
    stall_window: int = 20
    trace_path: str | None = None

    def descent(self) -> DescentOptions:
        return DescentOptions(tol_grad=self.tol_grad, tol_energy=self.tol_energy,
                              max_iter=self.max_iter, step_rule=self.step_rule,
                              stall_window=self.stall_window)


@dataclass
class CellSolution:
    value: float
    corrector: Field
    grad_norm: float
    iterations: int
    converged: bool


class IntegrandSlice:
    """Integrand restricted to its fastest cell variable.

    x and the slower variables y1..y^{n-1} are frozen (one row of slow values
    per batched problem); the last variable runs over the cell corners of
    ``grid``. ``values``/``grads`` consume gradient samples of shape
    (B, cells, d).
    """

    def __init__(self, f: Integrand, x, slow_y, grid: PeriodicGrid,
                 eta: float | None = None):
        if len(slow_y) != f.n - 1:
            raise ValueError(f"expected {f.n - 1} slow variables, got {len(slow_y)}")
        self.f = f
        self.growth = f.growth
        self.d = f.d
        self.eta = default_eta(f.growth.p) if eta is None else eta
        self.x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, 1, -1)
        self.slow = [np.asarray(s, dtype=float).reshape(-1, 1, f.d) for s in slow_y]
        self.corners = grid.cell_corners().reshape(1, grid.size, f.d)
        # isotropic power laws: the coefficient field is gradient-independent,
        # so evaluate the expression tree once instead of every energy call
        prof = power_iso_profile(f, self.x, self._env_Y(None))
        self.a = None if prof is None else prof + np.zeros((max(len(s) for s in self.slow)
                                                            if self.slow else 1, grid.size))

    def _env_Y(self, rows):
        Y = [s if rows is None else s[rows] for s in self.slow]
        Y.append(self.corners)
        return Y

    def _a_rows(self, rows):
        if rows is None or self.a.shape[0] == 1:
            return self.a
        return self.a[rows]

    def values(self, W, rows=None):
        if self.a is not None:
            return power_density(self._a_rows(rows), W, self.growth.p, self.eta)
        return self.f.density(self.x, self._env_Y(rows), W, eta=self.eta)

    def values_raw(self, W, rows=None):
        """Unregularized density, used for the reported cell value."""
        if self.a is not None:
            return power_density(self._a_rows(rows), W, self.growth.p, 0.0)
        return self.f.density(self.x, self._env_Y(rows), W, eta=0.0)

    def grads(self, W, rows=None):
        if self.a is not None:
            return power_density_grad(self._a_rows(rows), W, self.growth.p, self.eta)
        return self.f.density_grad(self.x, self._env_Y(rows), W, eta=self.eta)

    def final_check(self, W):
        return None


class _CellDescentProblem:
    """Adapter between a density slice and the batched descent core."""

    def __init__(self, slc, Z: np.ndarray, grid: PeriodicGrid):
        self.slc = slc
        self.Z = np.asarray(Z, dtype=float)
        self.grid = grid
        self.shape = grid.shape
        self.weights = np.full(grid.size, 1.0 / grid.size)
        g = slc.growth
        zmax = float(np.max(np.abs(self.Z))) if self.Z.size else 1.0
        lip = g.c2 * grid.d * (1.0 + 2.0 ** g.p) * (1.0 + 2.0 * zmax) ** max(g.p - 2.0, 0.0)
        self.alpha0 = grid.h ** 2 / (4.0 * grid.d * lip)

    def gradients_of(self, phi: np.ndarray) -> np.ndarray:
        """(b, cells, d) forward differences of nodal rows (b, nodes)."""
        b = phi.shape[0]
        v = phi.reshape((b,) + self.shape)
        comps = [(np.roll(v, -1, axis=1 + ax) - v) * self.grid.N
                 for ax in range(self.grid.d)]
        return np.stack([c.reshape(b, -1) for c in comps], axis=-1)

    def field_of_cells(self, q: np.ndarray) -> np.ndarray:
        """(b, nodes) adjoint of cell vectors (b, cells, d)."""
        b = q.shape[0]
        out = np.zeros((b,) + self.shape)
        for ax in range(self.grid.d):
            comp = q[..., ax].reshape((b,) + self.shape)
            out += (np.roll(comp, 1, axis=1 + ax) - comp) * self.grid.N
        return out.reshape(b, -1)

    def _W(self, phi, rows):
        Z = self.Z if rows is None else self.Z[rows]
        return Z[:, None, :] + self.gradients_of(phi)

    def energy(self, phi, rows):
        dens = self.slc.values(self._W(phi, rows), rows)
        return kahan_sum(dens, axis=1) / dens.shape[1]

    def gradient(self, phi, rows):
        return self.field_of_cells(self.slc.grads(self._W(phi, rows), rows))

    def project(self, phi, rows):
        return phi - kahan_sum(phi, axis=1)[:, None] / phi.shape[1]


def cell_energy(slc, z, phi: Field, grid: PeriodicGrid) -> float:
    """avg over cells of the slice density at z + grad(phi)."""
    prob = _CellDescentProblem(slc, np.atleast_1d(np.asarray(z, dtype=float))[None, :], grid)
    dens = slc.values_raw(prob._W(phi.values[None, :], None), None)
    e = float(kahan_sum(dens, axis=1)[0] / dens.shape[1])
    if not np.isfinite(e):
        raise RuntimeError("cell energy is not finite")
    return e


def cell_energy_gradient(slc, z, phi: Field, grid: PeriodicGrid,
                         eta: float | None = None) -> Field:
    """Gradient of the discrete cell energy in the node-mean inner product.

    The returned field g satisfies E(phi + t*delta) = E(phi) + t*<g, delta> +
    o(t) with <a, b> the node average of a*b; the raw partial derivative with
    respect to one nodal value is g_i / N^d. ``eta`` overrides the slice's
    regularization when given.
    """
    if eta is not None and hasattr(slc, "eta"):
        import copy
        slc = copy.copy(slc)
        slc.eta = eta
    prob = _CellDescentProblem(slc, np.atleast_1d(np.asarray(z, dtype=float))[None, :], grid)
    return Field(prob.gradient(phi.values[None, :], None)[0])


def solve_cell_batch(slc, Z: np.ndarray, grid: PeriodicGrid,
                     opts: SolverOptions = SolverOptions()):
    """Solve one cell problem per row of Z; returns the raw descent result
    plus per-problem unregularized values."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError("Z must have shape (B, d)")
    prob = _CellDescentProblem(slc, Z, grid)
    res = bb_minimize(prob, np.zeros((Z.shape[0], grid.size)), opts.descent(),
                      collect_trace=opts.trace_path is not None and Z.shape[0] == 1)
    W = prob._W(res.phi, None)
    values = kahan_sum(slc.values_raw(W, None), axis=1) / grid.size
    check = getattr(slc, "final_check", None)
    if check is not None:
        check(W)
    if opts.trace_path and res.trace:
        with open(opts.trace_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "energy", "grad_norm", "step"])
            for row in res.trace:
                wr.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    return res, np.atleast_1d(values)


def solve_cell(slc, z, grid: PeriodicGrid,
               opts: SolverOptions = SolverOptions()) -> CellSolution:
    """Minimize the single-cell energy from phi = 0; monotone in energy."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    res, values = solve_cell_batch(slc, z[None, :], grid, opts)
    corrector = Field(res.phi[0] - cell_average(res.phi[0]))
    return CellSolution(value=float(values[0]), corrector=corrector,
                        grad_norm=float(res.grad_norm[0]),
                        iterations=int(res.iterations[0]),
                        converged=bool(res.converged[0]))
