"""Lowest eigenpairs, singular values of T, and the compactness probe."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import ContractViolationError, ConvergenceError, DefinitenessError, MagDbarError
from .grid import build_grid
from .operators import SparseOperator, assemble_S_composition, assemble_S_stencil
from .solver import conjugate_gradient, shifted

VERDICTS = ("noncompact-consistent", "compact-consistent", "inconclusive")
GROWTH_EXPONENT = 1.5


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    residual_norms: np.ndarray
    iterations: int
    converged: np.ndarray
    eigenvectors: np.ndarray | None = field(default=None, repr=False)
    method: str = ""


def _gershgorin_lower(m: sp.csr_matrix) -> float:
    d = m.diagonal().real
    off = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(m.diagonal())
    return float(np.min(d - off))


def _residuals(m, vals, vecs) -> np.ndarray:
    R = m @ vecs - vecs * vals[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)


def _pack(m, vals, vecs, tol, iterations, method, keep, k=None) -> SpectralResult:
    order = np.argsort(vals)[:k]
    vals = np.asarray(vals, dtype=float)[order]
    vecs = vecs[:, order]
    res = _residuals(m, vals, vecs)
    return SpectralResult(vals, res, iterations, res <= tol, vecs if keep else None, method)


def lowest_eigenpairs(
    op: SparseOperator,
    k: int,
    tol: float = 1e-8,
    *,
    method: str = "auto",
    seed: int = 0,
    shift: float | None = None,
    maxiter: int | None = None,
    ncv: int | None = None,
    keep_vectors: bool = False,
    k_cap: int | None = None,
) -> SpectralResult:
    """k smallest eigenvalues of a Hermitian operator.

    Implicitly restarted Lanczos (ARPACK) in shift-invert mode around a shift
    just below a lower bound of the spectrum. ``method`` selects the inner
    solver: ``"direct"`` (sparse LU), ``"cg"`` (the package's Jacobi CG with
    tolerance 0.01 * tol), or ``"lanczos"`` (no shift-invert). ``"auto"``
    picks LU for planar grids and CG otherwise; operators that carry planar
    Kronecker factors are solved factor by factor (``"kron"``). The start vector is drawn from
    ``seed`` so runs are reproducible. Residuals ||A v - lambda v|| / ||v|| are
    recomputed on the original operator and every pair must meet ``tol``.
    Near-degenerate clusters are handled by computing more pairs than asked
    for (at most ``k_cap``, default max(8k, 128)) and keeping the lowest k.
    """
    if not op.hermitian:
        raise ContractViolationError("lowest_eigenpairs needs a Hermitian operator")
    if k < 1 or tol <= 0:
        raise ContractViolationError("need k >= 1 and tol > 0")
    m = op.matrix
    n = op.dimension
    if k > n:
        raise ContractViolationError(f"k = {k} exceeds dimension {n}")
    if k >= n - 1:
        vals, vecs = sla.eigh(m.toarray())
        result = _pack(m, vals[:k], vecs[:, :k], tol, 1, "dense", keep_vectors)
        _require(result, tol)
        return result

    if op.kron_factors and method in ("auto", "kron"):
        return _kron_eigenpairs(op, k, tol, seed, keep_vectors)
    if method == "auto":
        method = "direct" if op.grid is None or op.grid.real_dims <= 2 else "cg"
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    calls = [0]

    if method == "lanczos":
        A = LinearOperator(m.shape, matvec=lambda x: (calls.__setitem__(0, calls[0] + 1), m @ x)[1], dtype=complex)
        base = dict(which="SA", v0=v0, tol=tol * 0.1, ncv=ncv)
        return _run(A, m, k, base, tol, calls, method, keep_vectors, maxiter, k_cap)

    if shift is None:
        lb = op.lower_bound if op.lower_bound is not None else _gershgorin_lower(m)
        shift = lb - max(1e-3, 1e-3 * abs(lb))
    Ashift = shifted(m, shift)
    if method == "direct":
        lu = splu(Ashift.tocsc(), permc_spec="MMD_AT_PLUS_A")

        def solve(x):
            calls[0] += 1
            return lu.solve(np.asarray(x, dtype=complex))

    elif method == "cg":
        diag = Ashift.diagonal().real
        inner = 0.01 * tol

        def solve(x):
            calls[0] += 1
            return conjugate_gradient(Ashift, x, tol=inner, diag=diag).x

    else:
        raise ValueError(f"unknown method {method!r}")
    OPinv = LinearOperator(m.shape, matvec=solve, dtype=complex)
    # a zero ARPACK tolerance can stall indefinitely on exactly degenerate clusters
    base = dict(sigma=shift, which="LM", OPinv=OPinv, v0=v0, tol=tol * 0.1, ncv=ncv)
    return _run(m, m, k, base, tol, calls, method, keep_vectors, maxiter, k_cap)


def _kron_eigenpairs(op: SparseOperator, k: int, tol: float, seed: int, keep: bool) -> SpectralResult:
    """Eigenpairs of a Kronecker sum from those of its planar factors.

    The k smallest sums only involve the k lowest pairs of each factor.
    Vectors are Kronecker products, and residuals are recomputed on the full
    matrix.
    """
    facs = op.kron_factors
    parts = [lowest_eigenpairs(f, min(k, f.dimension), tol / len(facs), seed=seed, keep_vectors=True) for f in facs]
    combos = sorted(itertools.product(*[range(len(p.eigenvalues)) for p in parts]),
                    key=lambda idx: (sum(p.eigenvalues[i] for p, i in zip(parts, idx)), idx))[:k]
    vals = np.array([sum(p.eigenvalues[i] for p, i in zip(parts, idx)) for idx in combos])
    vecs = np.empty((op.dimension, len(combos)), dtype=complex)
    for c, idx in enumerate(combos):
        v = np.ones(1, dtype=complex)
        for p, i in zip(parts, idx):
            v = np.kron(v, p.eigenvectors[:, i])
        vecs[:, c] = v
    result = _pack(op.matrix, vals, vecs, tol, sum(p.iterations for p in parts), "kron", keep)
    _require(result, tol)
    return result


def _run(A, m, k, base, tol, calls, method, keep, maxiter, k_cap) -> SpectralResult:
    """ARPACK with a growing working set.

    A Krylov space started from one vector sees a near-degenerate cluster
    through a single direction, so when the k wanted pairs sit inside a
    larger cluster the iteration stalls. Each failed attempt doubles the
    number of computed pairs, up to ``k_cap``, and keeps the lowest k.
    """
    n = m.shape[0]
    cap = max(k, min(n - 2, k_cap if k_cap is not None else max(8 * k, 128)))
    k_eff = k
    arpack_tol = base.pop("tol")
    while True:
        last = k_eff >= cap
        iters = maxiter or (2000 if last else 40)
        try:
            vals, vecs = eigsh(A, k=k_eff, maxiter=iters, tol=arpack_tol, **base)
            result = _pack(m, vals.real, vecs, tol, calls[0], method, keep, k)
            if np.all(result.converged):
                return result
            err = ConvergenceError(
                f"eigen-residual {float(np.max(result.residual_norms)):.3g} exceeds tol {tol:g}", partial=result
            )
            # ARPACK measures residuals of the transformed operator; tighten it
            arpack_tol *= 0.1
        except ArpackNoConvergence as exc:
            partial = None
            if exc.eigenvalues is not None and len(exc.eigenvalues):
                partial = _pack(m, exc.eigenvalues.real, exc.eigenvectors, tol, calls[0], method, keep, k)
            err = ConvergenceError(f"eigensolver did not converge with {k_eff} pairs: {exc}", partial=partial)
        if last:
            raise err
        k_eff = min(2 * k_eff, cap)


def _require(result: SpectralResult, tol: float) -> None:
    if not np.all(result.converged):
        worst = float(np.max(result.residual_norms))
        raise ConvergenceError(f"eigen-residual {worst:.3g} exceeds tol {tol:g}", partial=result)


def singular_values_T(S_op: SparseOperator, k: int, tol: float = 1e-8, **kw) -> np.ndarray:
    """sigma_i = lambda_i^{-1/2} for the k smallest eigenvalues of S, descending."""
    res = lowest_eigenpairs(S_op, k, tol, **kw)
    lam = res.eigenvalues
    if np.any(lam <= tol):
        raise DefinitenessError(f"S has eigenvalue {lam.min():.3g} <= 0 (to tol {tol:g}); T is unbounded here")
    return np.sort(1.0 / np.sqrt(lam))[::-1]


def eigenvalues_up_to(
    op: SparseOperator,
    upper: float,
    *,
    k_start: int = 16,
    k_max: int = 400,
    tol: float = 1e-8,
    seed: int = 0,
    method: str = "auto",
) -> tuple[SpectralResult, bool]:
    """Grow k until the largest computed eigenvalue exceeds ``upper``.

    Returns the last result and whether the search saturated at ``k_max``
    without passing ``upper`` (then counts are lower bounds only).
    """
    cap = min(k_max, op.dimension)
    k = min(k_start, cap)
    while True:
        res = lowest_eigenpairs(op, k, tol, seed=seed, method=method)
        if res.eigenvalues[-1] > upper:
            return res, False
        if k >= cap:
            return res, cap < op.dimension
        k = min(2 * k, cap)


@dataclass
class CompactnessReport:
    radii: list[float]
    counts: list[int]
    band_counts: list[int]
    verdict: str
    verdict_rule_trace: str
    growth_exponent: float | None = None
    Lambda: float = 0.0
    band: tuple[float, float] | None = None
    h: float = 0.0
    saturated: list[bool] = field(default_factory=list)
    failed: list[float] = field(default_factory=list)
    dirichlet_monotone: bool | None = None
    spectra: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "h": self.h,
            "Lambda": self.Lambda,
            "band": list(self.band) if self.band else None,
            "counts": self.counts,
            "band_counts": self.band_counts,
            "saturated": self.saturated,
            "failed_radii": self.failed,
            "growth_exponent": self.growth_exponent,
            "dirichlet_monotone": self.dirichlet_monotone,
            "verdict": self.verdict,
            "verdict_rule_trace": self.verdict_rule_trace,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def growth_exponent(radii: Sequence[float], counts: Sequence[int]) -> float | None:
    """Least-squares slope of log(count) against log(R); None if any count is 0."""
    c = np.asarray(counts, dtype=float)
    if len(c) < 2 or np.any(c <= 0):
        return None
    return float(np.polyfit(np.log(np.asarray(radii, dtype=float)), np.log(c), 1)[0])


def classify(
    radii: Sequence[float],
    counts: Sequence[int],
    band_counts: Sequence[int] | None,
    saturated: Sequence[bool] = (),
    failed: Sequence[float] = (),
) -> tuple[str, str, float | None]:
    """Mechanical verdict.

    1. any failed or saturated radius -> inconclusive;
    2. growth series (band counts when a band is given, else N(Lambda, R))
       with log-log slope >= 1.5 -> noncompact-consistent;
    3. N(Lambda, R) positive and equal at the two largest radii -> compact-consistent;
    4. otherwise inconclusive.
    """
    lines = []
    if failed:
        return "inconclusive", f"eigensolver failed at R = {list(failed)}", None
    if any(saturated):
        bad = [r for r, s in zip(radii, saturated) if s]
        return "inconclusive", f"eigenvalue search saturated at R = {bad}; counts are lower bounds", None
    series = list(band_counts) if band_counts is not None else list(counts)
    label = "band counts" if band_counts is not None else "N(Lambda, R)"
    slope = growth_exponent(radii, series)
    area = (radii[-1] / radii[0]) ** 2
    ratio = series[-1] / series[0] if series[0] else float("inf")
    lines.append(f"{label} = {series} at R = {list(radii)}")
    lines.append(f"ratio last/first = {ratio:.4g}, area ratio = {area:.4g}")
    if slope is not None:
        lines.append(f"log-log growth exponent = {slope:.4g} (threshold {GROWTH_EXPONENT})")
        if slope >= GROWTH_EXPONENT:
            lines.append("rule 2: superlinear growth -> noncompact-consistent")
            return "noncompact-consistent", "; ".join(lines), slope
    else:
        lines.append("growth exponent undefined (zero counts)")
    if len(counts) >= 2 and counts[-1] == counts[-2] and counts[-1] > 0:
        lines.append(f"rule 3: N(Lambda, R) = {counts[-1]} at both R = {radii[-2]}, {radii[-1]} -> compact-consistent")
        return "compact-consistent", "; ".join(lines), slope
    lines.append("rule 4: neither rule applies -> inconclusive")
    return "inconclusive", "; ".join(lines), slope


def compactness_probe(
    w,
    h: float,
    radii: Sequence[float],
    Lambda: float,
    band: tuple[float, float] | None = None,
    k_max: int = 400,
    *,
    tol: float = 1e-8,
    route: str = "stencil",
    seed: int = 0,
    progress: Callable[[float], None] | None = None,
) -> CompactnessReport:
    """Eigenvalue counts of the truncated S over growing boxes, plus a verdict.

    ``band = (center, width)`` counts eigenvalues in [center - width, center + width].
    """
    radii = [float(r) for r in radii]
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ContractViolationError("radii must be increasing with at least two entries")
    assemble = {"stencil": assemble_S_stencil, "composition": assemble_S_composition}[route]
    upper = Lambda if band is None else max(Lambda, band[0] + band[1])
    counts, band_counts, saturated, failed = [], [], [], []
    spectra = {}
    for i, R in enumerate(radii):
        try:
            op = assemble(w, build_grid(R, h))
            res, sat = eigenvalues_up_to(op, upper, k_max=k_max, tol=tol, seed=seed)
        except MagDbarError:
            failed.append(R)
            counts.append(-1)
            band_counts.append(-1)
            saturated.append(False)
            continue
        lam = res.eigenvalues
        spectra[R] = res
        counts.append(int(np.sum(lam <= Lambda)))
        if band is not None:
            band_counts.append(int(np.sum(np.abs(lam - band[0]) <= band[1])))
        saturated.append(sat)
        if progress:
            progress((i + 1) / len(radii))
    verdict, trace, slope = classify(radii, counts, band_counts if band is not None else None, saturated, failed)
    report = CompactnessReport(
        radii=radii,
        counts=counts,
        band_counts=band_counts,
        verdict=verdict,
        verdict_rule_trace=trace,
        growth_exponent=slope,
        Lambda=Lambda,
        band=tuple(band) if band is not None else None,
        h=h,
        saturated=saturated,
        failed=failed,
        spectra=spectra,
    )
    if route == "stencil" and not failed:
        report.dirichlet_monotone = dirichlet_monotone([spectra[R].eigenvalues for R in radii], tol)
    return report


def dirichlet_monotone(spectra: Sequence[np.ndarray], tol: float = 1e-8) -> bool:
    """lambda_k(R) >= lambda_k(R') for nested boxes R < R', over common indices."""
    for small, big in zip(spectra, spectra[1:]):
        m = min(len(small), len(big))
        if np.any(small[:m] < big[:m] - 10 * tol):
            return False
    return True
