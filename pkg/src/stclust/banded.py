"""Symmetric banded matrices and Cholesky-based solvers.

Storage follows the LAPACK lower band convention: a matrix with
half-bandwidth ``b`` is kept as a ``(b + 1, n)`` array ``bands`` with
``bands[d, j] = A[j + d, j]`` for ``0 <= d <= b`` and ``j + d < n``.
Entries outside the band are implicitly zero.  The same layout carries
lower-triangular Cholesky factors (``is_factor=True``), in which case the
stored diagonals describe the factor L rather than a symmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, solve_banded


@dataclass
class BandedSPD:
    """Symmetric positive-definite matrix (or its Cholesky factor) in band storage.

    Instances are treated as immutable after creation; methods never modify
    ``bands`` in place, so values can be shared freely across threads.
    """

    n: int
    bandwidth: int
    bands: np.ndarray
    is_factor: bool = False
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)
    _rows: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=float)
        if self.bands.shape != (self.bandwidth + 1, self.n):
            raise ValueError(
                f"band storage must be ({self.bandwidth + 1}, {self.n}), "
                f"got {self.bands.shape}"
            )
        if self.is_factor and np.any(self.bands[0] <= 0):
            raise ValueError("Cholesky factor must have a strictly positive diagonal")

    @classmethod
    def from_dense(cls, a: np.ndarray, bandwidth: int | None = None) -> "BandedSPD":
        """Pack a dense symmetric matrix into band storage.

        When ``bandwidth`` is None it is detected from the nonzero pattern.
        """
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("matrix must be square")
        if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ValueError("matrix must be symmetric")
        if bandwidth is None:
            bandwidth = 0
            nz = np.nonzero(a)
            if nz[0].size:
                bandwidth = int(np.max(np.abs(nz[0] - nz[1])))
        bands = np.zeros((bandwidth + 1, n))
        for d in range(bandwidth + 1):
            bands[d, : n - d] = np.diagonal(a, -d)
        return cls(n=n, bandwidth=bandwidth, bands=bands)

    def to_dense(self) -> np.ndarray:
        """Expand to a dense ndarray (symmetric matrix or lower factor)."""
        if self._dense is None:
            a = np.zeros((self.n, self.n))
            for d in range(self.bandwidth + 1):
                idx = np.arange(self.n - d)
                a[idx + d, idx] = self.bands[d, : self.n - d]
                if not self.is_factor and d > 0:
                    a[idx, idx + d] = self.bands[d, : self.n - d]
            self._dense = a
        return self._dense

    def diagonal(self) -> np.ndarray:
        return self.bands[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Multiply by a vector or, column-wise, by a matrix.

        Only valid for symmetric matrices (not factors).
        """
        if self.is_factor:
            raise ValueError("matvec is defined for symmetric matrices, not factors")
        v = np.asarray(v, dtype=float)
        out = self.bands[0].reshape(-1, *([1] * (v.ndim - 1))) * v
        for d in range(1, self.bandwidth + 1):
            m = self.n - d
            if m <= 0:
                break
            band = self.bands[d, :m].reshape(-1, *([1] * (v.ndim - 1)))
            out[d:] += band * v[:m]
            out[:m] += band * v[d:]
        return out

    def quad_form(self, v: np.ndarray) -> float:
        """Evaluate ``v' A v`` (summed over columns when v is a matrix)."""
        return float(np.sum(v * self.matvec(v)))

    def offdiag_row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of the off-diagonal entries of row ``i``."""
        if self.is_factor:
            raise ValueError("offdiag_row is defined for symmetric matrices")
        idx, vals = [], []
        for d in range(1, self.bandwidth + 1):
            if i - d >= 0:
                idx.append(i - d)
                vals.append(self.bands[d, i - d])
            if i + d < self.n:
                idx.append(i + d)
                vals.append(self.bands[d, i])
        return np.asarray(idx, dtype=int), np.asarray(vals)

    def offdiag_rows(self) -> list:
        """All rows' off-diagonal (indices, values), cached on the instance."""
        if self._rows is None:
            self._rows = [self.offdiag_row(i) for i in range(self.n)]
        return self._rows


def band_cholesky(m: BandedSPD) -> BandedSPD:
    """Lower Cholesky factor of a banded SPD matrix, in band storage.

    Raises ValueError when the matrix is not positive definite.
    """
    if m.is_factor:
        raise ValueError("matrix is already a factor")
    try:
        cb = cholesky_banded(m.bands, lower=True)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"not positive definite: {e}") from e
    return BandedSPD(n=m.n, bandwidth=m.bandwidth, bands=cb, is_factor=True)


def factor_logdet(factor: BandedSPD) -> float:
    """log|A| from the Cholesky factor of A."""
    if not factor.is_factor:
        raise ValueError("expected a Cholesky factor")
    return 2.0 * float(np.sum(np.log(factor.bands[0])))


def band_forward_solve(factor: BandedSPD, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L y = rhs`` for a banded lower factor L."""
    if not factor.is_factor:
        raise ValueError("expected a Cholesky factor")
    return solve_banded((factor.bandwidth, 0), factor.bands, rhs)


def band_back_solve(factor: BandedSPD, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L' x = rhs`` for a banded lower factor L."""
    if not factor.is_factor:
        raise ValueError("expected a Cholesky factor")
    b, n = factor.bandwidth, factor.n
    upper = np.zeros_like(factor.bands)
    for d in range(b + 1):
        upper[b - d, d:] = factor.bands[d, : n - d]
    return solve_banded((0, b), upper, rhs)


def band_solve(factor: BandedSPD, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` given the Cholesky factor of A."""
    return band_back_solve(factor, band_forward_solve(factor, rhs))
