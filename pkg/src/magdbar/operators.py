"""Sparse discretisations of the conjugated dbar operators.

Conventions on a :class:`~magdbar.grid.TensorGrid` with spacing h:

* first derivatives are the antisymmetric centered stencil
  (f(x+h) - f(x-h)) / 2h,
* second derivatives along one axis are the 3-point stencil,
* neighbours outside the box contribute zero (Dirichlet closure).

``M_dbar`` realises Dbar = d/dzbar + phi_zbar. Its exact conjugate transpose
realises D = -d/dz + phi_z, so S = M_dbar M_dbar^H is Hermitian positive
semidefinite by construction (the *composition* route). The *stencil* route
assembles 1/4 [-(d_x - i A_1)^2 - (d_y - i A_2)^2 + Laplacian(phi)] directly,
with Peierls link phases for the magnetic part.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolationError, GridMismatchError, MagneticResolutionWarning
from .grid import FormField, GridField, TensorGrid, build_grid
from .weights import DecoupledWeight, WeightModel, as_decoupled

PROVENANCES = ("dbar", "d_adjoint", "composition", "stencil", "multivar_k", "dd_bar", "external")


@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sp.csr_matrix
    hermitian: bool
    provenance: str
    grid: TensorGrid | None = None
    lower_bound: float | None = None  # proven lower bound on the spectrum, if any
    meta: dict = field(default_factory=dict)
    # planar operators F_1..F_n with matrix = sum_j I x .. x F_j x .. x I, when known
    kron_factors: tuple = ()

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        m = sp.csr_matrix(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise ContractViolationError("operators must be square")
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def __matmul__(self, x):
        if isinstance(x, GridField):
            return GridField(x.grid, self.matrix @ x.values)
        return self.matrix @ x

    def hermitian_defect(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    @classmethod
    def from_matrix(cls, matrix, hermitian: bool | None = None, **kw) -> "SparseOperator":
        m = sp.csr_matrix(matrix)
        if hermitian is None:
            diff = m - m.conj().T
            hermitian = diff.nnz == 0 or abs(diff).max() == 0
        return cls(m, bool(hermitian), kw.pop("provenance", "external"), **kw)


def _hermitize(m: sp.spmatrix) -> sp.csr_matrix:
    """Average with the conjugate transpose; the result is Hermitian bit for bit."""
    m = sp.csr_matrix(m)
    out = (0.5 * (m + m.conj().T)).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


# --------------------------------------------------------------------------
# stencil matrices


@lru_cache(maxsize=64)
def _stencil_1d(N: int, h: float, kind: str) -> sp.csr_matrix:
    if kind == "d1":
        e = np.ones(N - 1) / (2.0 * h)
        return sp.diags([e, -e], [1, -1], shape=(N, N), format="csr")
    if kind == "d2":
        e = np.ones(N - 1) / h**2
        return sp.diags([e, -2.0 * np.ones(N) / h**2, e], [1, 0, -1], shape=(N, N), format="csr")
    if kind == "shift":
        return sp.diags([np.ones(N - 1)], [1], shape=(N, N), format="csr")
    raise ValueError(kind)


@lru_cache(maxsize=64)
def _axis_matrix(N: int, h: float, dims: int, axis: int, kind: str) -> sp.csr_matrix:
    out = None
    for a in range(dims):
        m = _stencil_1d(N, h, kind) if a == axis else sp.identity(N, format="csr")
        out = m if out is None else sp.kron(out, m, format="csr")
    return out


def axis_matrix(grid: TensorGrid, axis: int, kind: str = "d1") -> sp.csr_matrix:
    """Sparse first ("d1") or second ("d2") difference, or forward "shift", along one real axis."""
    return _axis_matrix(grid.per_axis, grid.h, grid.real_dims, axis, kind)


def _one_variable(w, grid: TensorGrid) -> WeightModel:
    if grid.n != 1:
        raise ContractViolationError("this assembly requires an n = 1 grid")
    if isinstance(w, DecoupledWeight):
        if w.dimension != 1:
            raise ContractViolationError("weight dimension does not match grid")
        return w.factors[0]
    return w


def _meta(w, grid: TensorGrid, **extra) -> dict:
    out = {"R": grid.R, "h": grid.h, "n": grid.n, "weight": w.describe()}
    out.update(extra)
    return out


def assemble_dbar(w, grid: TensorGrid) -> SparseOperator:
    """M_dbar = 1/2 (D_x + i D_y) + diag(phi_zbar)."""
    w1 = _one_variable(w, grid)
    b = w1.eval_derivatives(grid.points)
    Dx = axis_matrix(grid, 0)
    Dy = axis_matrix(grid, 1)
    M = 0.5 * (Dx + 1j * Dy) + sp.diags(b.phi_zbar)
    return SparseOperator(M.tocsr(), False, "dbar", grid, meta=_meta(w1, grid))


def adjoint(op: SparseOperator) -> SparseOperator:
    """Exact conjugate transpose."""
    swap = {"dbar": "d_adjoint", "d_adjoint": "dbar"}
    return SparseOperator(
        op.matrix.conj().T.tocsr(),
        op.hermitian,
        swap.get(op.provenance, op.provenance),
        op.grid,
        op.lower_bound,
        dict(op.meta),
    )


def assemble_S_composition(w, grid: TensorGrid) -> SparseOperator:
    """S = M_dbar M_dbar^H, Hermitian PSD exactly."""
    M = assemble_dbar(w, grid).matrix
    S = _hermitize(M @ M.conj().T)
    return SparseOperator(S, True, "composition", grid, 0.0, _meta(_one_variable(w, grid), grid))


def assemble_DDbar_onevar(w, grid: TensorGrid) -> SparseOperator:
    """M_dbar^H M_dbar, the discrete D Dbar."""
    M = assemble_dbar(w, grid).matrix
    S = _hermitize(M.conj().T @ M)
    return SparseOperator(S, True, "dd_bar", grid, 0.0, _meta(_one_variable(w, grid), grid))


_GL_T, _GL_W = np.polynomial.legendre.leggauss(3)
_GL_T, _GL_W = 0.5 * (_GL_T + 1.0), 0.5 * _GL_W  # nodes and weights on [0, 1]


def _shift_along(points: np.ndarray, axis: int, step: float) -> np.ndarray:
    """Move complex grid points by ``step`` along real axis ``axis`` (x1, y1, x2, ...)."""
    unit = 1.0 if axis % 2 == 0 else 1j
    if points.ndim == 1:
        return points + unit * step
    out = points.copy()
    out[:, axis // 2] += unit * step
    return out


def _magnetic_stencil(grid: TensorGrid, potential, scalar: np.ndarray, field_max: float) -> sp.csr_matrix:
    """Gauge-covariant lattice form of 1/4 sum_a (-i d_a - A_a)^2 + diag(scalar).

    Each nearest-neighbour hop x -> x + h e_a carries the Peierls phase
    exp(-i theta), theta = integral of A_a along the link (3-point Gauss).
    ``potential(points)`` returns the list of A_a sampled at ``points``. The
    magnetic part is positive semidefinite, so min(scalar) bounds the spectrum
    from below.
    """
    h = grid.h
    if field_max * h * h > 1.0:
        warnings.warn(
            f"max|B| h^2 = {field_max * h * h:.3g} > 1; magnetic flux per cell is under-resolved",
            MagneticResolutionWarning,
            stacklevel=3,
        )
    pts = grid.points
    size = grid.size
    total = sp.diags(np.asarray(scalar, dtype=complex))
    for axis in range(grid.real_dims):
        theta = np.zeros(size)
        for t, wq in zip(_GL_T, _GL_W):
            theta += wq * h * np.asarray(potential(_shift_along(pts, axis, t * h))[axis], dtype=float)
        hop = sp.diags(np.exp(-1j * theta)) @ axis_matrix(grid, axis, "shift")
        lap = 2.0 * sp.identity(size, format="csr") - hop - hop.conj().T
        total = total + (0.25 / h**2) * lap
    return _hermitize(total)


def assemble_S_stencil(w, grid: TensorGrid) -> SparseOperator:
    """Direct minimal-coupling discretisation of S = -1/4((d - iA)^2 - Laplacian(phi))."""
    w1 = _one_variable(w, grid)
    b = w1.eval_derivatives(grid.points)
    V = 0.25 * b.laplacian
    S = _magnetic_stencil(grid, lambda p: w1.eval_derivatives(p).A, V, float(np.max(np.abs(b.laplacian))))
    return SparseOperator(S, True, "stencil", grid, float(np.min(V)), _meta(w1, grid))


def potential_Vk(w: DecoupledWeight, points: np.ndarray, k: int) -> np.ndarray:
    """V_k = 2 phi_{z_k zbar_k} - sum_j phi_{z_j zbar_j}  (k is 1-based)."""
    d = w.eval_derivatives(points).phi_zzbar
    return 2.0 * d[..., k - 1] - np.sum(d, axis=-1)


def assemble_Sk(w: DecoupledWeight, grid: TensorGrid, k: int) -> SparseOperator:
    """S_k = 1/4[-sum (d_{x_j} - i a_j)^2 - sum (d_{y_j} - i b_j)^2] + V_k."""
    w = as_decoupled(w)
    if grid.n < 2 or w.dimension != grid.n:
        raise ContractViolationError("assemble_Sk needs a decoupled weight with n = grid.n >= 2")
    if not 1 <= k <= grid.n:
        raise ContractViolationError(f"k must lie in 1..{grid.n}")
    pts = grid.points
    lap = w.eval_derivatives(pts).laplacian

    def potential(p):
        a, bb = w.eval_derivatives(p).A  # a_j = -phi_{y_j}, b_j = phi_{x_j}
        return [c[:, j] for j in range(grid.n) for c in (a, bb)]

    V = potential_Vk(w, pts, k)
    S = _magnetic_stencil(grid, potential, V, float(np.max(np.abs(lap))))
    return SparseOperator(S, True, "multivar_k", grid, float(np.min(V)), _meta(w, grid, k=k), _Sk_factors(w, grid, k))


def _Sk_factors(w: DecoupledWeight, grid: TensorGrid, k: int) -> tuple:
    # V_k splits as lap_k/4 for plane k and -lap_j/4 for the others
    plane = build_grid(grid.R, grid.h, 1, node_budget=grid.node_budget)
    out = []
    for j, wj in enumerate(w.factors):
        op = assemble_S_stencil(wj, plane)
        if j != k - 1:
            half = 0.5 * wj.eval_derivatives(plane.points).laplacian
            op = SparseOperator((op.matrix - sp.diags(half)).tocsr(), True, "stencil", plane,
                                op.lower_bound - float(np.max(half)), op.meta)
        out.append(op)
    return tuple(out)


def export_operator(op: SparseOperator, path: str | Path) -> Path:
    """Write ``i j re im`` per nonzero plus a ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {float(v.real)!r} {float(v.imag)!r}\n")
    sidecar = path.with_name(path.name + ".meta.json")
    meta = {"dimension": op.dimension, "hermitian": op.hermitian, "provenance": op.provenance}
    meta.update(op.meta)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return sidecar


def import_operator(path: str | Path) -> SparseOperator:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
    data = np.loadtxt(path, ndmin=2)
    n = meta["dimension"]
    m = sp.csr_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))
    extra = {k: v for k, v in meta.items() if k not in ("dimension", "hermitian", "provenance")}
    return SparseOperator(m, meta["hermitian"], meta["provenance"], meta=extra)


# --------------------------------------------------------------------------
# pointwise operators on fields and (0,1)-forms, n >= 1


def _d1(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(f)
    src = np.moveaxis(f, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    if src.shape[0] < 2:
        return out
    dst[1:-1] = src[2:] - src[:-2]
    dst[0] = src[1]
    dst[-1] = -src[-2]
    return out / (2.0 * h)


def _d2(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = -2.0 * f
    src = np.moveaxis(f, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[1:] += src[:-1]
    dst[:-1] += src[1:]
    return out / h**2


class _Calculus:
    """Centered-difference Wirtinger derivatives on a grid's array view."""

    def __init__(self, grid: TensorGrid):
        self.grid = grid
        self.h = grid.h

    def arr(self, f: GridField | np.ndarray) -> np.ndarray:
        v = f.values if isinstance(f, GridField) else np.asarray(f, dtype=complex)
        return v.reshape(self.grid.shape)

    def dzbar(self, f: np.ndarray, j: int) -> np.ndarray:
        return 0.5 * (_d1(f, 2 * j, self.h) + 1j * _d1(f, 2 * j + 1, self.h))

    def dz(self, f: np.ndarray, j: int) -> np.ndarray:
        return 0.5 * (_d1(f, 2 * j, self.h) - 1j * _d1(f, 2 * j + 1, self.h))

    def dz_dzbar(self, f: np.ndarray, j: int, k: int) -> np.ndarray:
        """d^2 f / dz_j dzbar_k; the j == k case uses the 3-point Laplacian."""
        if j == k:
            return 0.25 * (_d2(f, 2 * j, self.h) + _d2(f, 2 * j + 1, self.h))
        return self.dz(self.dzbar(f, k), j)


def _weight_fields(w, grid: TensorGrid):
    wd = as_decoupled(w) if isinstance(w, WeightModel) else w
    if wd.dimension != grid.n:
        raise GridMismatchError("weight dimension does not match grid")
    pts = grid.points.reshape(grid.size, grid.n)
    b = wd.eval_derivatives(pts)
    shape = grid.shape
    pz = [b.phi_z[:, j].reshape(shape) for j in range(grid.n)]
    pzb = [b.phi_zbar[:, j].reshape(shape) for j in range(grid.n)]
    hess = wd.complex_hessian(pts)
    H = [[hess[:, j, k].reshape(shape) for k in range(grid.n)] for j in range(grid.n)]
    return pz, pzb, H


def _form_arrays(g: FormField, calc: _Calculus) -> list[np.ndarray]:
    return [calc.arr(c) for c in g.components]


def _to_form(grid: TensorGrid, arrays: list[np.ndarray]) -> FormField:
    return FormField.from_arrays(grid, [a.ravel() for a in arrays])


def apply_Dbar_function(w, v: GridField) -> FormField:
    """Dbar v = sum_k (dv/dzbar_k + phi_{zbar_k} v) dzbar_k."""
    grid = v.grid
    calc = _Calculus(grid)
    _, pzb, _ = _weight_fields(w, grid)
    f = calc.arr(v)
    return _to_form(grid, [calc.dzbar(f, k) + pzb[k] * f for k in range(grid.n)])


def apply_Dbar_adjoint(w, g: FormField) -> GridField:
    """Dbar^* g = sum_j (phi_{z_j} g_j - dg_j/dz_j)."""
    grid = g.grid
    calc = _Calculus(grid)
    pz, _, _ = _weight_fields(w, grid)
    gs = _form_arrays(g, calc)
    out = sum(pz[j] * gs[j] - calc.dz(gs[j], j) for j in range(grid.n))
    return GridField(grid, np.asarray(out).ravel())


def apply_Dbar_form(w, g: FormField) -> dict[tuple[int, int], GridField]:
    """Coefficients of Dbar g on dzbar_j ^ dzbar_k for j < k (1-based keys).

    From Dbar g = sum_{j,k} (dg_j/dzbar_k + phi_{zbar_k} g_j) dzbar_k ^ dzbar_j the
    dzbar_j ^ dzbar_k coefficient is
    (dg_k/dzbar_j + phi_{zbar_j} g_k) - (dg_j/dzbar_k + phi_{zbar_k} g_j).
    """
    grid = g.grid
    calc = _Calculus(grid)
    _, pzb, _ = _weight_fields(w, grid)
    gs = _form_arrays(g, calc)
    out = {}
    for j in range(grid.n):
        for k in range(j + 1, grid.n):
            c = (calc.dzbar(gs[k], j) + pzb[j] * gs[k]) - (calc.dzbar(gs[j], k) + pzb[k] * gs[j])
            out[(j + 1, k + 1)] = GridField(grid, c.ravel())
    return out


def apply_DDstar_general(w, g: FormField) -> FormField:
    """Dbar Dbar^* g expanded term by term (valid for every g)."""
    grid = g.grid
    n = grid.n
    calc = _Calculus(grid)
    pz, pzb, H = _weight_fields(w, grid)
    gs = _form_arrays(g, calc)
    dzg = [calc.dz(gs[j], j) for j in range(n)]
    comps = []
    for k in range(n):
        acc = np.zeros(grid.shape, dtype=complex)
        for j in range(n):
            acc += (
                H[j][k] * gs[j]
                - calc.dz_dzbar(gs[j], j, k)
                + pz[j] * calc.dzbar(gs[j], k)
                - pzb[k] * dzg[j]
                + pz[j] * pzb[k] * gs[j]
            )
        comps.append(acc)
    return _to_form(grid, comps)


def apply_DDstar_ker(w, g: FormField) -> FormField:
    """Dbar Dbar^* g rewritten using Dbar g = 0 (agrees with the general form on ker Dbar)."""
    grid = g.grid
    n = grid.n
    calc = _Calculus(grid)
    pz, pzb, H = _weight_fields(w, grid)
    gs = _form_arrays(g, calc)
    comps = []
    for k in range(n):
        gk = gs[k]
        acc = np.zeros(grid.shape, dtype=complex)
        for j in range(n):
            acc += (
                2.0 * H[j][k] * gs[j]
                - H[j][j] * gk
                - calc.dz_dzbar(gk, j, j)
                + pz[j] * calc.dzbar(gk, j)
                - pzb[j] * calc.dz(gk, j)
                + pz[j] * pzb[j] * gk
            )
        comps.append(acc)
    return _to_form(grid, comps)
