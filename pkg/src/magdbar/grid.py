"""Truncated uniform lattices, sampled fields and quadrature.

The box [-R, R]^(2n) is discretised with spacing h. Interior nodes sit at
integer multiples k*h with |k*h| < R, so each axis carries 2R/h - 1 nodes.
Fields vanish outside the box (Dirichlet convention); the quadrature weight
is h^(2n) at every interior node.

Axis order for n complex variables is (x_1, y_1, x_2, y_2, ...), flattened
row-major.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GridError, GridMismatchError, NodeBudgetError

DEFAULT_NODE_BUDGET = 4_000_000


@dataclass(frozen=True)
class TensorGrid:
    R: float
    h: float
    n: int = 1
    node_budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        if not (self.R > 0 and self.h > 0):
            raise GridError("R and h must be positive")
        if self.n < 1:
            raise GridError("n must be >= 1")
        ratio = self.R / self.h
        steps = int(round(ratio))
        if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise GridError(f"R/h must be a positive integer, got {ratio!r}")
        per_axis = 2 * steps - 1
        if per_axis < 1:
            raise GridError("grid has no interior nodes")
        total = per_axis ** (2 * self.n)
        if total > self.node_budget:
            raise NodeBudgetError(f"{total} nodes exceeds budget {self.node_budget}")

    @property
    def steps(self) -> int:
        return int(round(self.R / self.h))

    @property
    def per_axis(self) -> int:
        return 2 * self.steps - 1

    @property
    def real_dims(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.per_axis,) * self.real_dims

    @property
    def size(self) -> int:
        return self.per_axis**self.real_dims

    @property
    def cell_volume(self) -> float:
        return self.h**self.real_dims

    @cached_property
    def axis(self) -> np.ndarray:
        k = np.arange(-(self.steps - 1), self.steps)
        return k * self.h

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Flattened real coordinate arrays, one per axis."""
        mesh = np.meshgrid(*([self.axis] * self.real_dims), indexing="ij")
        return tuple(m.ravel() for m in mesh)

    @cached_property
    def points(self) -> np.ndarray:
        """Complex node coordinates: shape (size,) for n = 1, (size, n) otherwise."""
        c = self.coords
        z = np.stack([c[2 * j] + 1j * c[2 * j + 1] for j in range(self.n)], axis=-1)
        return z[:, 0] if self.n == 1 else z

    def flat_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def node_of(self, p) -> int:
        """Flat index of the node at complex coordinate(s) ``p`` (must be on-lattice)."""
        z = np.atleast_1d(np.asarray(p, dtype=complex))
        if z.size != self.n:
            raise GridError(f"expected {self.n} complex coordinates")
        off = self.steps - 1
        multi = []
        for zj in z:
            for c in (zj.real, zj.imag):
                k = c / self.h
                if abs(k - round(k)) > 1e-9:
                    raise GridError(f"coordinate {c} is not a lattice node")
                multi.append(int(round(k)) + off)
        if any(not (0 <= m < self.per_axis) for m in multi):
            raise GridError("point outside the truncated box")
        return self.flat_index(multi)

    def describe(self) -> dict:
        return {"R": self.R, "h": self.h, "n": self.n, "per_axis": self.per_axis, "nodes": self.size}


def build_grid(R: float, h: float, n: int = 1, node_budget: int = DEFAULT_NODE_BUDGET) -> TensorGrid:
    return TensorGrid(float(R), float(h), int(n), int(node_budget))


def same_grid(a: TensorGrid, b: TensorGrid) -> bool:
    return a.n == b.n and a.per_axis == b.per_axis and np.isclose(a.h, b.h, rtol=1e-12, atol=0)


@dataclass(frozen=True, eq=False)
class GridField:
    grid: TensorGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).ravel()
        if v.size != self.grid.size:
            raise GridMismatchError(f"field has {v.size} values, grid has {self.grid.size} nodes")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self).real))

    def at(self, p) -> complex:
        return complex(self.values[self.grid.node_of(p)])

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __add__(self, other: "GridField") -> "GridField":
        _check(self.grid, other.grid)
        return GridField(self.grid, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        _check(self.grid, other.grid)
        return GridField(self.grid, self.values - other.values)

    def __mul__(self, c) -> "GridField":
        return GridField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class FormField:
    """(0,1)-form sum_k g_k dzbar_k; component k-1 holds g_k."""

    grid: TensorGrid
    components: tuple[GridField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.grid.n:
            raise GridMismatchError(f"form needs {self.grid.n} components, got {len(comps)}")
        for c in comps:
            _check(self.grid, c.grid)
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, grid: TensorGrid, arrays: Sequence[np.ndarray]) -> "FormField":
        return cls(grid, tuple(GridField(grid, a) for a in arrays))


def _check(a: TensorGrid, b: TensorGrid) -> None:
    if not same_grid(a, b):
        raise GridMismatchError("fields live on different grids")


def inner_product(f: GridField, g: GridField) -> complex:
    """h^d * sum f * conj(g)."""
    _check(f.grid, g.grid)
    return complex(f.grid.cell_volume * np.vdot(g.values, f.values))


def sample(fn: Callable[[np.ndarray], np.ndarray], grid: TensorGrid) -> GridField:
    """Evaluate ``fn`` on the complex node coordinates (see :attr:`TensorGrid.points`)."""
    vals = np.asarray(fn(grid.points), dtype=complex)
    return GridField(grid, np.broadcast_to(vals, (grid.size,)).copy())


def write_field_csv(field: GridField, path: str | Path, header: dict | None = None) -> None:
    """One ``re,im`` line per node in flat order, after ``#`` header lines."""
    g = field.grid
    meta = {"R": g.R, "h": g.h, "n": g.n}
    meta.update(header or {})
    with open(path, "w", newline="") as fh:
        fh.write("# " + ",".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        fh.write("re,im\n")
        for z in field.values:
            fh.write(f"{float(z.real)!r},{float(z.imag)!r}\n")


def read_field_csv(path: str | Path, grid: TensorGrid | None = None) -> GridField:
    meta: dict[str, str] = {}
    rows: list[complex] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if row[0].startswith("#"):
                for item in ",".join(row).lstrip("# ").split(","):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k.strip()] = v.strip()
                continue
            if row[0] == "re":
                continue
            rows.append(complex(float(row[0]), float(row[1])))
    if grid is None:
        try:
            grid = build_grid(float(meta["R"]), float(meta["h"]), int(meta.get("n", 1)))
        except KeyError as exc:
            raise GridError(f"{path}: header lacks R/h and no grid was given") from exc
    return GridField(grid, np.array(rows))
