"""Uniform periodic grids on the unit cell and the discrete calculus on them.

Nodes live at k/N per axis, cells are indexed by their lower corner node.
The gradient is the forward difference with periodic wraparound; its exact
algebraic transpose (a negative discrete divergence) is provided so that the
discrete chain rule has no quadrature slack. All reductions go through a
fixed-order compensated summation, which makes every average bit-reproducible
run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PeriodicGrid", "Field", "GradField", "kahan_sum", "cell_average",
    "discrete_gradient", "adjoint_gradient", "project_mean_zero",
    "field_to_csv", "field_from_csv",
]


@dataclass(frozen=True)
class PeriodicGrid:
    d: int
    N: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if self.N < 2:
            raise ValueError("need at least 2 cells per axis")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def size(self) -> int:
        return self.N ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def node_coords(self) -> np.ndarray:
        """(size, d) array of node positions k/N, row-major."""
        axes = [np.arange(self.N) / self.N] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_corners(self) -> np.ndarray:
        """Cell lower corners coincide with the nodes."""
        return self.node_coords()


@dataclass
class Field:
    """Node-indexed periodic scalar field, stored flat row-major."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field entries must be finite")

    @staticmethod
    def zeros(grid: PeriodicGrid) -> "Field":
        return Field(np.zeros(grid.size))

    def mean(self) -> float:
        return cell_average(self.values)

    def copy(self) -> "Field":
        return Field(self.values.copy())


@dataclass
class GradField:
    """Cell-indexed gradient samples, one d-vector per cell, flat row-major."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim == 1:
            self.vectors = self.vectors[:, None]
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("gradient entries must be finite")


_KAHAN_CHUNK = 4096


def kahan_sum(a: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Compensated summation in a fixed element order.

    Elements are grouped into fixed chunks summed pairwise, and the chunk
    totals are combined with Kahan compensation. The grouping depends only on
    the array shape, so results are bit-identical run to run and independent
    of any thread count.
    """
    arr = np.asarray(a, dtype=float)
    if axis is None:
        arr = arr.ravel()
        axis = 0
    arr = np.moveaxis(arr, axis, -1)
    n = arr.shape[-1]
    if n <= _KAHAN_CHUNK:
        out = arr.sum(axis=-1)
        return float(out) if out.ndim == 0 else out
    full = (n // _KAHAN_CHUNK) * _KAHAN_CHUNK
    parts = arr[..., :full].reshape(arr.shape[:-1] + (-1, _KAHAN_CHUNK)).sum(axis=-1)
    chunks = [parts[..., i] for i in range(parts.shape[-1])]
    if full < n:
        chunks.append(arr[..., full:].sum(axis=-1))
    total = np.zeros(arr.shape[:-1])
    comp = np.zeros(arr.shape[:-1])
    for part in chunks:
        y = part - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return float(total) if total.ndim == 0 else total


def cell_average(values: np.ndarray, axis: int | None = None):
    """Compensated mean; deterministic for a fixed iteration order."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot average an empty array")
    count = arr.size if axis is None else arr.shape[axis]
    return kahan_sum(arr, axis=axis) / count


def _grids_match(phi: Field, grid: PeriodicGrid):
    if phi.values.size != grid.size:
        raise ValueError(f"field has {phi.values.size} nodes, grid expects {grid.size}")


def discrete_gradient(phi: Field, grid: PeriodicGrid) -> GradField:
    """Forward differences per axis with periodic wraparound."""
    _grids_match(phi, grid)
    v = phi.values.reshape(grid.shape)
    comps = [(np.roll(v, -1, axis=ax) - v) * grid.N for ax in range(grid.d)]
    return GradField(np.stack([c.ravel() for c in comps], axis=-1))


def adjoint_gradient(q: GradField, grid: PeriodicGrid) -> Field:
    """Exact transpose of discrete_gradient under the mean inner products.

    <discrete_gradient(u), q>_cells == <u, adjoint_gradient(q)>_nodes for
    every u and q, where <.,.> averages over cells/nodes.
    """
    vec = q.vectors
    if vec.shape != (grid.size, grid.d):
        raise ValueError(f"gradient field shape {vec.shape} does not match grid "
                         f"({grid.size}, {grid.d})")
    out = np.zeros(grid.shape)
    for ax in range(grid.d):
        comp = vec[:, ax].reshape(grid.shape)
        out += (np.roll(comp, 1, axis=ax) - comp) * grid.N
    return Field(out.ravel())


def project_mean_zero(phi: Field) -> Field:
    """Subtract the mean; correctors are defined only up to constants."""
    return Field(phi.values - cell_average(phi.values))


def field_to_csv(phi: Field, grid: PeriodicGrid, path):
    lines = [f"# d={grid.d} N={grid.N}", "index,value"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(phi.values)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def field_from_csv(path) -> tuple[Field, PeriodicGrid]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        meta = dict(tok.split("=") for tok in header.removeprefix("# ").split())
        grid = PeriodicGrid(d=int(meta["d"]), N=int(meta["N"]))
        fh.readline()  # column names
        values = np.array([float(line.split(",")[1]) for line in fh if line.strip()])
    return Field(values), grid
