"""Dense complex linear algebra used throughout the package.

Factorizations are thin immutable wrappers over LAPACK (through scipy) that
add the dimension and pivot checks the rest of the code relies on.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

__all__ = [
    "SingularMatrixError",
    "NotPositiveDefiniteError",
    "LuFactorization",
    "HermitianFactorization",
    "solve_linear",
    "extremal_generalized_eig",
    "min_singular_in_norms",
    "max_singular_in_norms",
    "hermitian_part",
]

PIVOT_TOL = 1e-14


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a pivot is negligible with respect to its row."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be HPD is not."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


def _as_square(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def hermitian_part(a):
    """Return ``(a + a^H) / 2``."""
    a = np.asarray(a)
    return 0.5 * (a + a.conj().T)


class LuFactorization:
    """Partial-pivoting LU of a square complex matrix.

    Raises :class:`SingularMatrixError` if some pivot satisfies
    ``|u_kk| < 1e-14 * max|row k of source|``.
    """

    def __init__(self, source):
        source = _as_square(source, "LU source")
        self.source = source
        self.n = source.shape[0]
        if self.n == 0:
            self._lu, self._piv = source.astype(complex), np.zeros(0, dtype=np.int32)
            return
        with warnings.catch_warnings():
            # exact zero pivots are reported below with our own error
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(source, check_finite=False)
        # rows of U correspond to permuted source rows
        perm = np.arange(self.n)
        for k, p in enumerate(piv):
            perm[k], perm[p] = perm[p], perm[k]
        row_scale = np.abs(source[perm]).max(axis=1)
        pivots = np.abs(np.diag(lu))
        bad = np.flatnonzero(pivots < PIVOT_TOL * np.maximum(row_scale, np.finfo(float).tiny))
        if bad.size:
            raise SingularMatrixError(f"singular to working precision (pivot {bad[0]})")
        self._lu, self._piv = lu, piv

    def solve(self, b):
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factorization is {self.n}, rhs has {b.shape[0]}")
        if self.n == 0:
            return np.zeros(b.shape, dtype=complex)
        return sla.lu_solve((self._lu, self._piv), b, check_finite=False)

    def solve_adjoint(self, b):
        """Solve ``source^H x = b``."""
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factorization is {self.n}, rhs has {b.shape[0]}")
        if self.n == 0:
            return np.zeros(b.shape, dtype=complex)
        return sla.lu_solve((self._lu, self._piv), b, trans=2, check_finite=False)


class HermitianFactorization:
    """Cholesky factorization ``source = L L^H`` of an HPD matrix."""

    def __init__(self, source, check_hermitian=True):
        source = _as_square(source, "Cholesky source")
        scale = np.abs(source).max() if source.size else 0.0
        if check_hermitian and source.size:
            skew = np.abs(source - source.conj().T).max()
            if skew > 1e-12 * scale:
                raise ValueError(f"matrix is not Hermitian (skew {skew:.3e})")
        self.source = source
        self.n = source.shape[0]
        herm = hermitian_part(source)
        try:
            self.lower_factor = sla.cholesky(herm, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            pivot = _failing_pivot(herm)
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite (pivot {pivot})", pivot=pivot
            ) from exc

    def solve(self, b):
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factorization is {self.n}, rhs has {b.shape[0]}")
        return sla.cho_solve((self.lower_factor, True), b, check_finite=False)

    def solve_lower(self, b):
        """Return ``L^{-1} b``."""
        return sla.solve_triangular(self.lower_factor, b, lower=True, check_finite=False)

    def solve_lower_adjoint(self, b):
        """Return ``L^{-H} b``."""
        return sla.solve_triangular(
            self.lower_factor, b, lower=True, trans=2, check_finite=False
        )

    def norm(self, x):
        """Return ``sqrt(x^H source x)``."""
        return float(np.linalg.norm(self.lower_factor.conj().T @ x))

    def dual_norm(self, p):
        """Return ``sqrt(p^H source^{-1} p)``."""
        return float(np.linalg.norm(self.solve_lower(p)))


def _failing_pivot(a):
    # index of the first leading minor that is not positive definite
    for k in range(1, a.shape[0] + 1):
        try:
            sla.cholesky(a[:k, :k], lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return k - 1
    return a.shape[0] - 1


def solve_linear(fact, b):
    """Solve ``fact.source @ x = b`` with a prebuilt factorization."""
    return fact.solve(b)


def extremal_generalized_eig(m, n):
    """Smallest and largest eigenvalue of the Hermitian pencil ``M x = lam N x``.

    ``N`` must be Hermitian positive definite.
    """
    m = _as_square(m, "M")
    n = _as_square(n, "N")
    if m.shape != n.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {n.shape}")
    scale = max(np.abs(m).max(), 1e-300)
    if np.abs(m - m.conj().T).max() > 1e-12 * scale:
        raise ValueError("M is not Hermitian")
    fact = HermitianFactorization(n, check_hermitian=True)
    # L^{-1} M L^{-H}
    c = fact.solve_lower(fact.solve_lower(hermitian_part(m)).conj().T).conj().T
    w = sla.eigvalsh(hermitian_part(c), check_finite=False)
    return float(w[0]), float(w[-1])


def _weighted_singular_values(k, g_out, g_in):
    k = np.asarray(k)
    g_out = _as_square(g_out, "G_out")
    g_in = _as_square(g_in, "G_in")
    if k.shape != (g_out.shape[0], g_in.shape[0]):
        raise ValueError(f"K of shape {k.shape} incompatible with Grams {g_out.shape}, {g_in.shape}")
    out = HermitianFactorization(g_out)
    inn = HermitianFactorization(g_in)
    # L_out^H K L_in^{-H}
    m = out.lower_factor.conj().T @ k
    m = inn.solve_lower(m.conj().T).conj().T
    return sla.svdvals(m, check_finite=False)


def min_singular_in_norms(k, g_out, g_in):
    """``min_x sqrt(x^H K^H G_out K x / x^H G_in x)``."""
    s = _weighted_singular_values(k, g_out, g_in)
    k = np.asarray(k)
    if k.shape[0] < k.shape[1]:
        return 0.0
    return float(s[-1])


def max_singular_in_norms(k, g_out, g_in):
    """``max_x sqrt(x^H K^H G_out K x / x^H G_in x)``."""
    return float(_weighted_singular_values(k, g_out, g_in)[0])
