"""Closed forms for the Gaussian weight phi = |z|^2.

Monomial norms in L^2(e^{-2|z|^2}):

    c_n = ||z^n||^2 = pi n! / 2^(n+1).

The canonical solution of dbar u = z^n is u_n = zbar z^n - (n/2) z^(n-1),
with ||u_n||^2 = c_(n+1) - (n/2) c_n = c_n / 2, hence ||u_n|| / ||z^n|| = 1/sqrt(2)
for every n. Each closed form has a radial-quadrature twin that does not
use the factorial formula.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

NORM_CAP = 150  # c_n overflows a double a little beyond n = 170
LOG_SPACE_FROM = 20


def log_monomial_norm(n: int) -> float:
    if n < 0:
        raise ValueError("n must be >= 0")
    return math.log(math.pi) + math.lgamma(n + 1) - (n + 1) * math.log(2.0)


def monomial_norm(n: int) -> float:
    """c_n = pi n! / 2^(n+1)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > NORM_CAP:
        raise OverflowError(f"c_n for n = {n} exceeds the cap {NORM_CAP}; use log_monomial_norm")
    if n > LOG_SPACE_FROM:
        return math.exp(log_monomial_norm(n))
    return math.pi * math.factorial(n) / 2.0 ** (n + 1)


@dataclass(frozen=True)
class MonomialSolution:
    n: int
    coefficients: dict  # monomial label -> coefficient
    norm_sq_u: float
    sigma: float


def canonical_solution_monomial(n: int) -> MonomialSolution:
    if n < 0:
        raise ValueError("n must be >= 0")
    coeffs = {f"zbar*z^{n}": 1.0}
    if n > 0:
        coeffs[f"z^{n - 1}"] = -n / 2.0
    cn = monomial_norm(n)
    norm_sq = monomial_norm(n + 1) - (n / 2.0) * cn
    # c_(n+1) / c_n = (n + 1) / 2 exactly, so the ratio avoids cancellation
    return MonomialSolution(n, coeffs, norm_sq, math.sqrt((n + 1) / 2.0 - n / 2.0))


def _radial(f, n_peak: float) -> float:
    # integrand ~ r^(2 n_peak + 1) e^{-2 r^2}, peaked at r ~ sqrt(n_peak / 2)
    peak = math.sqrt(max(n_peak, 0.5) / 2.0)
    upper = peak + 12.0
    val, _ = integrate.quad(f, 0.0, upper, points=[peak], limit=400, epsabs=0.0, epsrel=1e-13)
    return 2.0 * math.pi * val


def monomial_norm_quadrature(n: int) -> float:
    """Integral of |z|^(2n) e^{-2|z|^2} by radial adaptive quadrature."""
    return _radial(lambda r: r ** (2 * n + 1) * math.exp(-2.0 * r * r), n + 0.5)


def solution_norm_quadrature(n: int) -> float:
    """||u_n||^2 with |u_n|^2 = r^(2n-2) (r^2 - n/2)^2 (n >= 1), r^2 (n = 0)."""
    if n == 0:
        return _radial(lambda r: r**3 * math.exp(-2.0 * r * r), 1.0)
    return _radial(lambda r: r ** (2 * n - 1) * (r * r - n / 2.0) ** 2 * math.exp(-2.0 * r * r), n + 0.5)


def sigma_quadrature(n: int) -> float:
    return math.sqrt(solution_norm_quadrature(n) / monomial_norm_quadrature(n))


def landau_levels(b: float, count: int) -> np.ndarray:
    """Levels of S for constant Laplacian(phi) = b: b (k + 1) / 2, k = 0..count-1."""
    if b <= 0:
        raise ValueError("b must be positive")
    return b * (np.arange(count) + 1.0) / 2.0


def tensor_sum_spectrum(
    dbarD_spectra: Sequence[Sequence[float]],
    dDbar_spectra: Sequence[Sequence[float]],
    k: int,
    count: int,
) -> np.ndarray:
    """Smallest ``count`` values of mu_k + sum_{j != k} nu_j.

    mu_k runs over the Dbar D spectrum of factor k, nu_j over the D Dbar
    spectrum of factor j (k is 1-based).
    """
    n = len(dbarD_spectra)
    if n == 0 or len(dDbar_spectra) != n:
        raise ValueError("need one Dbar D and one D Dbar spectrum per factor")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    lists = [np.sort(np.asarray(dDbar_spectra[j] if j != k - 1 else dbarD_spectra[j], dtype=float)) for j in range(n)]
    if any(len(l) == 0 for l in lists):
        raise ValueError("empty factor spectrum")
    # only the first `count` entries of each list can enter the `count` smallest sums
    heads = [l[:count] for l in lists]
    sums = np.fromiter((sum(t) for t in itertools.product(*heads)), dtype=float)
    return np.sort(sums)[:count]


def oracle_table(nmax: int) -> list[tuple[int, float, float, float]]:
    rows = []
    for n in range(nmax + 1):
        s = canonical_solution_monomial(n)
        rows.append((n, monomial_norm(n), s.norm_sq_u, s.sigma))
    return rows


def write_oracle_csv(path: str | Path, nmax: int, header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        wr = csv.writer(fh)
        wr.writerow(["n", "c_n", "norm_u_sq", "sigma"])
        for n, c, u, s in oracle_table(nmax):
            wr.writerow([n, repr(float(c)), repr(float(u)), repr(float(s))])
