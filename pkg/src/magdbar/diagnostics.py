"""Compactness-related quantities evaluated from the weight oracle.

Two normalisations of the magnetic field appear:

* one variable, B = dA = Laplacian(phi) dx ^ dy (used by the Iwatsuka
  integral and by :func:`field_strength`);
* n variables, B_jl = 1/4 (d a~_l / d x~_j - d a~_j / d x~_l), which carries
  the 1/4 of the operators S_k. At n = 1 this is Laplacian(phi) / 4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolationError, NotSubharmonicError, UndefinedPotentialError
from .weights import DecoupledWeight, WeightModel, as_decoupled

DEFAULT_QUAD_H = 0.01
UNIT_MASS_FLOOR = 1e-3


def _disc_offsets(radius: float, quad_h: float) -> np.ndarray:
    """Centres of the quad_h-cells whose centre lies in the closed disc."""
    m = int(np.ceil(radius / quad_h))
    c = (np.arange(-m, m) + 0.5) * quad_h
    X, Y = np.meshgrid(c, c, indexing="ij")
    inside = X * X + Y * Y <= radius * radius
    return (X[inside] + 1j * Y[inside]).ravel()


def _as_points(centers) -> np.ndarray:
    arr = np.asarray(centers)
    if np.iscomplexobj(arr):
        return arr.ravel()
    arr = np.asarray(arr, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def field_strength(w: WeightModel, p) -> np.ndarray:
    """|B| for B = dA in one variable, i.e. Laplacian(phi)."""
    return np.abs(w.eval_derivatives(p).laplacian)


def iwatsuka_integral(w: WeightModel, centers, quad_h: float = DEFAULT_QUAD_H) -> list[float]:
    """Midpoint rule for the integral of |B|^2 + Laplacian(phi) over unit discs."""
    if isinstance(w, DecoupledWeight):
        if w.dimension != 1:
            raise ContractViolationError("iwatsuka_integral is defined for n = 1")
        w = w.factors[0]
    if quad_h > 0.05:
        raise ContractViolationError("quad_h must be <= 0.05")
    offs = _disc_offsets(1.0, quad_h)
    cell = quad_h * quad_h
    out = []
    for c in _as_points(centers):
        lap = w.eval_derivatives(c + offs).laplacian
        out.append(float(np.sum(lap * lap + lap) * cell))
    return out


@dataclass
class DoublingReport:
    max_ratio: float
    min_unit_mass: float
    in_class_W: bool
    ratios: dict  # (center, r) -> nu(B(c, 2r)) / nu(B(c, r))

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "min_unit_mass": self.min_unit_mass, "in_class_W": self.in_class_W}


def ball_mass(w: WeightModel, center: complex, r: float, quad_h: float = DEFAULT_QUAD_H) -> float:
    """nu(B(center, r)) for nu = Laplacian(phi) d(lambda); raises on negative density."""
    offs = _disc_offsets(r, quad_h)
    lap = w.eval_derivatives(center + offs).laplacian
    if np.min(lap) < -1e-9:
        raise NotSubharmonicError(f"Laplacian(phi) = {np.min(lap):.3g} < 0 near {center}")
    return float(np.sum(lap) * quad_h * quad_h)


def doubling_check(
    w: WeightModel,
    centers,
    radii: Sequence[float] = (0.5, 1.0, 2.0),
    quad_h: float = DEFAULT_QUAD_H,
    unit_mass_floor: float = UNIT_MASS_FLOOR,
) -> DoublingReport:
    """Sampled doubling ratios and unit-ball masses of Laplacian(phi) d(lambda).

    Only certifies consistency with the doubling condition on the sampled
    lattice, never membership.
    """
    ratios = {}
    unit = []
    for c in _as_points(centers):
        unit.append(ball_mass(w, c, 1.0, quad_h))
        for r in radii:
            small = ball_mass(w, c, r, quad_h)
            big = ball_mass(w, c, 2 * r, quad_h)
            if small > 0:
                ratios[(complex(c), float(r))] = big / small
            elif big > 0:
                ratios[(complex(c), float(r))] = float("inf")
    max_ratio = max(ratios.values()) if ratios else float("nan")
    min_unit = float(min(unit)) if unit else float("nan")
    ok = bool(np.isfinite(max_ratio) and min_unit >= unit_mass_floor)
    return DoublingReport(float(max_ratio), min_unit, ok, ratios)


@dataclass(frozen=True)
class MagneticFieldSample:
    components: dict  # (j, l) with j < l, 1-based real-axis indices -> B_jl
    magnitude: float


@dataclass(frozen=True)
class EffectivePotentialSample:
    k: int
    V_k: float
    delta: float
    V_eff: float


def magnetic_field(w: DecoupledWeight, p) -> MagneticFieldSample:
    """B_jl over the real axes (x_1, y_1, ..., x_n, y_n) at a single point.

    For a decoupled weight only the (x_j, y_j) pairs are non-zero and equal
    Laplacian_j(phi) / 4.
    """
    w = as_decoupled(w)
    z = np.asarray(p, dtype=complex).reshape(w.dimension)
    lap = w.eval_derivatives(z).laplacian
    n = w.dimension
    comps = {}
    for a in range(2 * n):
        for b in range(a + 1, 2 * n):
            same = a // 2 == b // 2
            comps[(a + 1, b + 1)] = 0.25 * float(lap[a // 2]) if same else 0.0
    mag = float(np.sqrt(sum(v * v for v in comps.values())))
    return MagneticFieldSample(comps, mag)


def field_and_potentials(
    w: DecoupledWeight, delta: float, points: Iterable
) -> list[list[tuple[MagneticFieldSample, EffectivePotentialSample]]]:
    """Per point, per k: (|B| sample, V_k and V_eff = V_k + delta/(n-1) |B|)."""
    w = as_decoupled(w)
    n = w.dimension
    if n < 2:
        raise UndefinedPotentialError("effective potentials need n >= 2 (division by n - 1)")
    if not 0.0 <= delta < 1.0:
        raise ContractViolationError("delta must lie in [0, 1)")
    out = []
    for p in points:
        z = np.asarray(p, dtype=complex).reshape(n)
        B = magnetic_field(w, z)
        lap = w.eval_derivatives(z).laplacian
        row = []
        for k in range(1, n + 1):
            Vk = float(0.5 * lap[k - 1] - 0.25 * np.sum(lap))
            row.append((B, EffectivePotentialSample(k, Vk, float(delta), Vk + delta / (n - 1) * B.magnitude)))
        out.append(row)
    return out


def write_integrals_csv(path: str | Path, centers, values: Sequence[float], header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        wr = csv.writer(fh)
        wr.writerow(["center_x", "center_y", "value"])
        for c, v in zip(_as_points(centers), values):
            wr.writerow([repr(float(c.real)), repr(float(c.imag)), repr(float(v))])


def write_potentials_csv(path: str | Path, points, samples, header: str = "") -> None:
    pts = [np.asarray(p, dtype=complex).ravel() for p in points]
    n = pts[0].size if pts else 0
    cols = [f"{a}{j + 1}" for j in range(n) for a in ("x", "y")]
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        wr = csv.writer(fh)
        wr.writerow(cols + ["k", "Bmag", "Vk", "Veff"])
        for z, row in zip(pts, samples):
            coords = [repr(float(c)) for zj in z for c in (zj.real, zj.imag)]
            for B, V in row:
                wr.writerow(coords + [V.k, repr(float(B.magnitude)), repr(float(V.V_k)), repr(float(V.V_eff))])
