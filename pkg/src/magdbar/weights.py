"""Weight functions and their derivative oracles.

A weight ``phi`` on C is described through its real partial derivatives; the
complex ones follow from

    phi_z    = (phi_x - i phi_y) / 2
    phi_zbar = (phi_x + i phi_y) / 2
    phi_zzbar = (phi_xx + phi_yy) / 4

and the vector potential of the associated magnetic operator is
``A = (-phi_y, phi_x)``.

Every evaluation routine is vectorised: points may be a complex scalar or an
array of complex numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, OutOfDomainError


@dataclass(frozen=True)
class DerivativeBundle:
    """Values of phi and its first/second derivatives at a set of points.

    For a one-variable weight every field has the shape of the query points.
    For a :class:`DecoupledWeight` ``phi`` is the total weight and all other
    fields carry a trailing axis of length n (one entry per variable).
    """

    phi: np.ndarray
    phi_x: np.ndarray
    phi_y: np.ndarray
    phi_z: np.ndarray
    phi_zbar: np.ndarray
    phi_zzbar: np.ndarray
    laplacian: np.ndarray

    @property
    def A(self) -> tuple[np.ndarray, np.ndarray]:
        return -self.phi_y, self.phi_x


def _bundle(phi, px, py, pxx, pyy) -> DerivativeBundle:
    lap = pxx + pyy
    return DerivativeBundle(
        phi=phi,
        phi_x=px,
        phi_y=py,
        phi_z=0.5 * (px - 1j * py),
        phi_zbar=0.5 * (px + 1j * py),
        phi_zzbar=0.25 * lap,
        laplacian=lap,
    )


class WeightModel:
    """Base class for one-variable weights.

    Subclasses implement :meth:`_partials` returning
    ``(phi, phi_x, phi_y, phi_xx, phi_yy)`` on real coordinate arrays.
    Instances are immutable.
    """

    kind: str = "abstract"
    dimension: int = 1

    def _partials(self, x: np.ndarray, y: np.ndarray):
        raise NotImplementedError

    def eval_derivatives(self, p) -> DerivativeBundle:
        z = np.asarray(p, dtype=complex)
        return _bundle(*self._partials(z.real, z.imag))

    def __call__(self, p) -> np.ndarray:
        return self.eval_derivatives(p).phi

    def vector_potential(self, p) -> tuple[np.ndarray, np.ndarray]:
        return self.eval_derivatives(p).A

    def laplacian(self, p) -> np.ndarray:
        return self.eval_derivatives(p).laplacian

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class ZeroWeight(WeightModel):
    kind = "zero"

    def _partials(self, x, y):
        zero = np.zeros(np.broadcast(x, y).shape)
        return zero, zero, zero, zero, zero


@dataclass(frozen=True, eq=False)
class RadialPowerWeight(WeightModel):
    """phi(z) = |z|^m with m >= 2 (not necessarily an integer)."""

    m: float = 2.0
    kind = "radial_power"

    def __post_init__(self):
        if not np.isfinite(self.m) or self.m < 2:
            raise ConfigError(f"radial_power requires m >= 2, got {self.m}")

    def _partials(self, x, y):
        m = float(self.m)
        r2 = x * x + y * y
        r = np.sqrt(r2)
        phi = r**m
        # r^(m-2) is finite at the origin because m >= 2
        rm2 = np.where(r2 > 0, r ** (m - 2.0), 1.0 if m == 2.0 else 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            cx = np.where(r2 > 0, x * x / r2, 0.0)
            cy = np.where(r2 > 0, y * y / r2, 0.0)
        px = m * rm2 * x
        py = m * rm2 * y
        pxx = m * rm2 * (1.0 + (m - 2.0) * cx)
        pyy = m * rm2 * (1.0 + (m - 2.0) * cy)
        return phi, px, py, pxx, pyy

    def describe(self) -> dict:
        return {"kind": self.kind, "m": self.m}


@dataclass(frozen=True, eq=False)
class PolynomialWeight(WeightModel):
    """phi(x, y) = sum_ij C[i, j] x^i y^j with real coefficients."""

    coefficients: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    kind = "polynomial"

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim != 2:
            raise ConfigError("polynomial coefficients must be a 2-D array C[i][j] for x^i y^j")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def _partials(self, x, y):
        c = self.coefficients
        cx = npoly.polyder(c, axis=0)
        cy = npoly.polyder(c, axis=1)
        cxx = npoly.polyder(c, 2, axis=0)
        cyy = npoly.polyder(c, 2, axis=1)
        ev = lambda k: np.asarray(npoly.polyval2d(x, y, k), dtype=float)  # noqa: E731
        return ev(c), ev(cx), ev(cy), ev(cxx), ev(cyy)

    def describe(self) -> dict:
        return {"kind": self.kind, "coefficients": self.coefficients.tolist()}


def _second_difference(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered 3-point second derivative with 4-point one-sided edges (2nd order)."""
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h**2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h**2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True, eq=False)
class GridSampledWeight(WeightModel):
    """phi given by samples on the square lattice {k h : |k| <= K}^2.

    ``values[i, j]`` is phi at (x_i, y_j) = ((i - K) h, (j - K) h).
    Derivatives are centered second-order differences with one-sided
    second-order stencils at the edges; off-lattice queries interpolate
    the derivative tables bilinearly.
    """

    values: np.ndarray = field(default_factory=lambda: np.zeros((5, 5)))
    h: float = 1.0
    kind = "grid_sampled"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] % 2 == 0 or v.shape[0] < 5:
            raise ConfigError("grid_sampled values must be a square array of odd side >= 5")
        if not self.h > 0:
            raise ConfigError("grid_sampled spacing h must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        K = v.shape[0] // 2
        axis = np.arange(-K, K + 1) * self.h
        tables = (
            v,
            np.gradient(v, self.h, axis=0, edge_order=2),
            np.gradient(v, self.h, axis=1, edge_order=2),
            _second_difference(v, self.h, 0),
            _second_difference(v, self.h, 1),
        )
        interp = tuple(RegularGridInterpolator((axis, axis), t, method="linear") for t in tables)
        object.__setattr__(self, "_interp", interp)
        object.__setattr__(self, "half_width", K * self.h)

    def _partials(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1).reshape(-1, 2)
        slack = 1e-9 * self.h
        if pts.size and np.max(np.abs(pts)) > self.half_width + slack:
            raise OutOfDomainError(
                f"point outside grid_sampled support [-{self.half_width}, {self.half_width}]^2"
            )
        pts = np.clip(pts, -self.half_width, self.half_width)
        return tuple(f(pts).reshape(shape) for f in self._interp)

    @classmethod
    def from_csv(cls, path: str | Path, h: float) -> "GridSampledWeight":
        with open(path, newline="") as fh:
            rows = [[float(c) for c in row] for row in csv.reader(fh) if row and not row[0].startswith("#")]
        return cls(values=np.array(rows), h=h)

    def describe(self) -> dict:
        return {"kind": self.kind, "h": self.h, "shape": list(self.values.shape)}


@dataclass(frozen=True, eq=False)
class DecoupledWeight:
    """phi(z_1, ..., z_n) = phi_1(z_1) + ... + phi_n(z_n)."""

    factors: tuple[WeightModel, ...]
    kind = "decoupled"

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise ConfigError("decoupled weight needs at least one factor")
        object.__setattr__(self, "factors", factors)

    @property
    def dimension(self) -> int:
        return len(self.factors)

    def eval_derivatives(self, p) -> DerivativeBundle:
        """``p`` has shape (..., n); returns per-variable fields with trailing axis n."""
        z = np.asarray(p, dtype=complex)
        if z.shape[-1:] != (self.dimension,):
            raise ValueError(f"points must have trailing axis of length {self.dimension}")
        parts = [f.eval_derivatives(z[..., j]) for j, f in enumerate(self.factors)]
        stack = lambda name: np.stack([getattr(b, name) for b in parts], axis=-1)  # noqa: E731
        return DerivativeBundle(
            phi=np.sum(stack("phi"), axis=-1),
            phi_x=stack("phi_x"),
            phi_y=stack("phi_y"),
            phi_z=stack("phi_z"),
            phi_zbar=stack("phi_zbar"),
            phi_zzbar=stack("phi_zzbar"),
            laplacian=stack("laplacian"),
        )

    def __call__(self, p) -> np.ndarray:
        return self.eval_derivatives(p).phi

    def complex_hessian(self, p) -> np.ndarray:
        """Matrix phi_{z_j zbar_k}, shape (..., n, n); diagonal for decoupled weights."""
        d = self.eval_derivatives(p).phi_zzbar
        out = np.zeros(d.shape + (self.dimension,), dtype=float)
        idx = np.arange(self.dimension)
        out[..., idx, idx] = d
        return out

    def vector_potential(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Per-variable (a_j, b_j) = (-phi_{y_j}, phi_{x_j})."""
        return self.eval_derivatives(p).A

    def describe(self) -> dict:
        return {"kind": self.kind, "factors": [f.describe() for f in self.factors]}


def eval_derivatives(w, p) -> DerivativeBundle:
    return w.eval_derivatives(p)


def vector_potential(w, p) -> tuple[np.ndarray, np.ndarray]:
    return w.vector_potential(p)


def as_decoupled(w) -> DecoupledWeight:
    if isinstance(w, DecoupledWeight):
        return w
    return DecoupledWeight((w,))


def weight_from_config(cfg: dict, base_dir: str | Path | None = None):
    """Build a weight from its JSON description.

    Accepted forms::

        {"kind": "zero"}
        {"kind": "radial_power", "m": 2}
        {"kind": "polynomial", "coefficients": [[...], ...]}
        {"kind": "grid_sampled", "path": "phi.csv", "h": 0.1}
        {"kind": "decoupled", "factors": [<one-variable weight>, ...]}
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("weight config must be an object with a 'kind'")
    kind = cfg["kind"]
    if kind == "zero":
        return ZeroWeight()
    if kind == "radial_power":
        return RadialPowerWeight(m=float(cfg.get("m", 2)))
    if kind == "polynomial":
        return PolynomialWeight(coefficients=np.asarray(cfg["coefficients"], dtype=float))
    if kind == "grid_sampled":
        path = Path(cfg["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"grid_sampled file not found: {path}")
        return GridSampledWeight.from_csv(path, float(cfg["h"]))
    if kind == "decoupled":
        factors: Sequence[dict] = cfg.get("factors", [])
        if any(f.get("kind") == "decoupled" for f in factors):
            raise ConfigError("decoupled factors must be one-variable weights")
        return DecoupledWeight(tuple(weight_from_config(f, base_dir) for f in factors))
    raise ConfigError(f"unknown weight kind {kind!r}")
