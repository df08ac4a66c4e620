"""Measurable subsets of the unit cell with exact measure and fast membership.

Three shapes are supported: axis-aligned boxes with rational bounds, bit
rasters at a fixed resolution, and the two-quadrant checkerboard cell.
Measures are exact rationals; membership tests are vectorized over numpy
arrays of points in [0,1)^d.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = ["Interval", "Raster", "CheckerQuadrant", "CellSet", "cellset_from_json"]


def _frac(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    if isinstance(value, int):
        return Fraction(value)
    raise ValueError(f"expected a rational as int or [num, den], got {value!r}")


def _frac_json(q: Fraction) -> list[int]:
    return [q.numerator, q.denominator]


@dataclass(frozen=True)
class Interval:
    """Product of per-axis half-open intervals [lo, hi) inside [0, 1]."""

    bounds: tuple[tuple[Fraction, Fraction], ...]

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not (0 <= lo <= hi <= 1):
                raise ValueError(f"interval bounds must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi})")

    @staticmethod
    def make(*bounds) -> "Interval":
        return Interval(tuple((_frac(lo), _frac(hi)) for lo, hi in bounds))

    @property
    def d(self) -> int:
        return len(self.bounds)

    def measure(self) -> Fraction:
        m = Fraction(1)
        for lo, hi in self.bounds:
            m *= hi - lo
        return m

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.ones(y.shape[:-1], dtype=bool)
        for ax, (lo, hi) in enumerate(self.bounds):
            out &= (y[..., ax] >= float(lo)) & (y[..., ax] < float(hi))
        return out

    def to_json(self) -> dict:
        return {"kind": "interval", "bounds": [[_frac_json(lo), _frac_json(hi)] for lo, hi in self.bounds]}


@dataclass(frozen=True)
class Raster:
    """Bit mask over an R^d grid of congruent subcells of the unit cell."""

    resolution: int
    mask: tuple  # nested tuples of 0/1, shape (R,)*d

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("raster resolution must be >= 1")
        arr = np.asarray(self.mask)
        if arr.shape != (self.resolution,) * arr.ndim:
            raise ValueError("raster mask shape must be (R,)*d")

    @staticmethod
    def from_array(mask: np.ndarray) -> "Raster":
        arr = np.asarray(mask).astype(int)
        r = arr.shape[0]
        nested = arr.tolist()

        def tup(x):
            return tuple(tup(v) for v in x) if isinstance(x, list) else int(x)

        return Raster(r, tup(nested))

    @property
    def _array(self) -> np.ndarray:
        return np.asarray(self.mask, dtype=bool)

    @property
    def d(self) -> int:
        return self._array.ndim

    def measure(self) -> Fraction:
        arr = self._array
        return Fraction(int(arr.sum()), self.resolution ** arr.ndim)

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        arr = self._array
        idx = np.floor(y * self.resolution).astype(int)
        idx = np.clip(idx, 0, self.resolution - 1)
        return arr[tuple(idx[..., ax] for ax in range(arr.ndim))]

    def to_json(self) -> dict:
        return {"kind": "raster", "resolution": self.resolution,
                "mask": np.asarray(self.mask, dtype=int).tolist()}


@dataclass(frozen=True)
class CheckerQuadrant:
    """The two diagonal quadrants [0,1/2)^2 and [1/2,1)^2 of the 2D cell."""

    def __post_init__(self):
        pass

    @property
    def d(self) -> int:
        return 2

    def measure(self) -> Fraction:
        return Fraction(1, 2)

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        low0 = y[..., 0] < 0.5
        low1 = y[..., 1] < 0.5
        return low0 == low1

    def to_json(self) -> dict:
        return {"kind": "checker_quadrant"}


CellSet = Interval | Raster | CheckerQuadrant


def cellset_from_json(obj: dict) -> CellSet:
    kind = obj.get("kind")
    if kind == "interval":
        return Interval(tuple((_frac(lo), _frac(hi)) for lo, hi in obj["bounds"]))
    if kind == "raster":
        return Raster.from_array(np.asarray(obj["mask"]))
    if kind == "checker_quadrant":
        return CheckerQuadrant()
    raise ValueError(f"unknown cell set kind {kind!r}")
