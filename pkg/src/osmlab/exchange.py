"""Exchange operator, local swap, Robin solves and the scattering operator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import LuFactorization

__all__ = [
    "DENSE_LIMIT",
    "ExchangeOperator",
    "RobinFactorization",
    "ScatteringOperator",
    "LocalityReport",
    "apply_local_swap",
    "local_swap_matrix",
    "check_locality_criterion",
    "factorize_robin",
    "check_transmission_characterization",
    "check_cauchy_characterization",
    "densify",
    "write_matrix_text",
]

DENSE_LIMIT = 1500
CHARACTERIZATION_TOL = 1e-9
LOCALITY_TOL = 1e-11


def densify(apply, n, limit=DENSE_LIMIT):
    """Columns of a linear map given by ``apply``; refuses ``n > limit``."""
    if n > limit:
        raise ValueError(f"refusing to densify a {n}x{n} operator (limit {limit})")
    return np.asarray(apply(np.eye(n, dtype=complex)))


class ExchangeOperator:
    """``Pi = (T + T^*) R (R^* T^* R)^{-1} R^* - Id`` applied matrix-free.

    Both skeleton factorizations live on the impedance operator and are reused.
    """

    def __init__(self, impedance):
        self.impedance = impedance
        self.spaces = impedance.spaces

    @property
    def n(self):
        return self.spaces.n_trace

    def _apply(self, p, lu):
        sp_ = self.spaces
        w = lu.solve(sp_.apply_restriction_adjoint(p))
        return 2.0 * self.impedance.apply_sym(sp_.apply_restriction(w)) - p

    def apply(self, p):
        return self._apply(p, self.impedance.skeleton_adjoint_lu)

    def apply_inverse(self, p):
        return self._apply(p, self.impedance.skeleton_lu)

    __call__ = apply

    def matrix(self, limit=DENSE_LIMIT):
        return densify(self.apply, self.n, limit)


def apply_local_swap(p, spaces):
    """``(Pi_loc p)_j(x) = -p_j(x) + (2 / m(x)) sum_k p_k(x)``."""
    p = np.asarray(p)
    total = spaces.apply_restriction_adjoint(p)
    m = np.bincount(spaces.skeleton_index, minlength=spaces.n_skeleton).astype(float)
    m = m.reshape((-1,) + (1,) * (p.ndim - 1))
    return -p + 2.0 * spaces.apply_restriction(total / m)


def local_swap_matrix(spaces):
    return apply_local_swap(np.eye(spaces.n_trace), spaces)


@dataclass
class LocalityReport:
    trace_identity: bool
    commutation: bool
    trace_residual: float
    commutation_residual: float
    matches_local: bool | None = None
    local_residual: float | None = None


def check_locality_criterion(impedance, limit=DENSE_LIMIT):
    """Test whether ``Pi`` reduces to the local swap for this impedance."""
    spaces = impedance.spaces
    if spaces.n_trace > limit:
        raise ValueError(f"refusing dense locality check on {spaces.n_trace} dofs (limit {limit})")
    t = impedance.matrix
    th = impedance.adjoint_matrix
    ploc = local_swap_matrix(spaces)
    r = spaces.restriction_matrix().toarray()
    tr = t @ r
    trace_res = np.abs(ploc @ (th @ r) - tr).max() / max(np.abs(tr).max(), 1e-300)
    comm_res = np.abs(ploc @ t - th @ ploc.conj().T).max() / max(np.abs(t).max(), 1e-300)
    report = LocalityReport(
        trace_identity=bool(trace_res <= LOCALITY_TOL),
        commutation=bool(comm_res <= LOCALITY_TOL),
        trace_residual=float(trace_res),
        commutation_residual=float(comm_res),
    )
    if report.trace_identity:
        pi = ExchangeOperator(impedance).matrix(limit)
        res = float(np.abs(pi - ploc).max())
        report.local_residual = res
        report.matches_local = bool(res <= LOCALITY_TOL * max(np.abs(ploc).max(), 1.0))
    return report


class RobinFactorization:
    """Per-subdomain LU of ``A_j - i B_j^* T_j B_j``."""

    def __init__(self, A_blocks, impedance):
        spaces = impedance.spaces
        if len(A_blocks) != spaces.J:
            raise ValueError(f"{len(A_blocks)} volume blocks for {spaces.J} subdomains")
        self.spaces = spaces
        self.impedance = impedance
        self.A_blocks = [np.asarray(a, dtype=complex) for a in A_blocks]
        self.lus = []
        for j, (a, tj) in enumerate(zip(self.A_blocks, impedance.blocks)):
            idx = spaces.boundary_local_index[j]
            m = a.copy()
            m[np.ix_(idx, idx)] -= 1j * tj
            self.lus.append(LuFactorization(m))

    def solve(self, rhs):
        """Solve the broken Robin system for a broken right-hand side."""
        rhs = np.asarray(rhs)
        return np.concatenate([lu.solve(rhs[s]) for lu, s in zip(self.lus, self.spaces.broken_slices)])

    def apply_A(self, u):
        u = np.asarray(u)
        return np.concatenate([a @ u[s] for a, s in zip(self.A_blocks, self.spaces.broken_slices)])


def factorize_robin(A_blocks, impedance):
    return RobinFactorization(A_blocks, impedance)


class ScatteringOperator:
    """``S = Id + 2i Ts B (A - i B^* T B)^{-1} B^*``."""

    def __init__(self, robin):
        self.robin = robin
        self.impedance = robin.impedance
        self.spaces = robin.spaces

    @property
    def n(self):
        return self.spaces.n_trace

    def apply(self, p, return_volume=False):
        u = self.robin.solve(self.spaces.apply_trace_adjoint(p))
        out = p + 2j * self.impedance.apply_sym(self.spaces.apply_trace(u))
        return (out, u) if return_volume else out

    __call__ = apply

    def matrix(self, limit=DENSE_LIMIT):
        return densify(self.apply, self.n, limit)

    def energy_defect(self, p):
        """Relative residual of ``|Sp|^2 + 4|Im <Au, conj u>| = |p|^2`` in the dual norm."""
        sp_, u = self.apply(p, return_volume=True)
        imp = self.impedance
        lhs = imp.norm_ts_dual(sp_) ** 2 + 4 * abs(np.vdot(u, self.robin.apply_A(u)).imag)
        rhs = imp.norm_ts_dual(p) ** 2
        return abs(lhs - rhs) / max(rhs, 1e-300)


def check_transmission_characterization(u, p, exchange, tol=CHARACTERIZATION_TOL):
    """``-p + iT u = Pi(p + i T^* u)``, i.e. ``u`` single-trace and ``p`` polar."""
    imp = exchange.impedance
    r = -p + 1j * imp.apply(u) - exchange.apply(p + 1j * imp.apply_adjoint(u))
    scale = imp.norm_ts_dual(p) + imp.norm_ts(u)
    return bool(imp.norm_ts_dual(r) <= tol * scale)


def check_cauchy_characterization(v, p, scattering, tol=CHARACTERIZATION_TOL):
    """``p + i T^* v = S(p - i T v)``, i.e. ``(v, p)`` is discrete Cauchy data."""
    imp = scattering.impedance
    r = p + 1j * imp.apply_adjoint(v) - scattering.apply(p - 1j * imp.apply(v))
    scale = imp.norm_ts_dual(p) + imp.norm_ts(v)
    return bool(imp.norm_ts_dual(r) <= tol * scale)


def write_matrix_text(matrix, dest):
    """Write the nonzero entries as ``row col re im`` lines."""
    matrix = np.asarray(matrix)
    rows, cols = np.nonzero(matrix)
    with open(dest, "w") as fh:
        fh.write(f"# {matrix.shape[0]} {matrix.shape[1]}\n")
        for i, j in zip(rows, cols):
            z = complex(matrix[i, j])
            fh.write(f"{i} {j} {z.real:.17g} {z.imag:.17g}\n")
