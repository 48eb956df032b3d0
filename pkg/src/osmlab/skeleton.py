"""Skeleton formulation ``(Id + Pi S) q = g``: setup, iterative solvers and oracles."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .exchange import ExchangeOperator, ScatteringOperator, factorize_robin
from .fem import assemble_subdomain_forms, global_matrices
from .impedance import build_impedance
from .mesh import extract_topology
from .traces import TraceSpaces

__all__ = [
    "SolveConfig",
    "ConvergenceHistory",
    "SkeletonProblem",
    "GlueResult",
    "compute_rhs",
    "richardson_solve",
    "gmres_solve",
    "solve",
    "reconstruct",
    "monolithic_solve",
    "glue",
    "h1_norm",
    "h1_relative_error",
]


@dataclass(frozen=True)
class SolveConfig:
    method: str = "richardson"
    relax: float = 1 / np.sqrt(2)
    tol: float = 1e-6
    maxit: int = 10000
    restart: int = 200

    def __post_init__(self):
        if self.method not in ("richardson", "gmres"):
            raise ValueError(f"method must be 'richardson' or 'gmres', got {self.method!r}")
        if not 0 < self.relax <= 1:
            raise ValueError(f"relax must lie in (0, 1], got {self.relax}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.maxit < 0 or self.restart < 1:
            raise ValueError("maxit must be >= 0 and restart >= 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("method", "relax", "tol", "maxit", "restart") if k in d})


@dataclass
class ConvergenceHistory:
    residuals: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    stagnated: bool = False

    @property
    def final_residual(self):
        return self.residuals[-1][1] if self.residuals else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        buf.write("iter,res\n")
        for n, r in self.residuals:
            buf.write(f"{n},{r:.17g}\n")
        return buf.getvalue()


class SkeletonProblem:
    """Everything needed to apply ``Id + Pi S`` and to reconstruct volume fields."""

    def __init__(self, topology, medium, impedance_spec, source=None, forms=None):
        self.topology = topology
        self.medium = medium
        self.spaces = TraceSpaces(topology)
        self.forms = forms if forms is not None else assemble_subdomain_forms(topology, medium, source)
        boundary = ([f.M_gamma for f in self.forms], [f.K_gamma for f in self.forms])
        self.impedance = build_impedance(impedance_spec, topology, medium, boundary, self.spaces)
        self._finish()

    @classmethod
    def from_impedance(cls, topology, medium, impedance, source=None, forms=None):
        """Use a prebuilt (possibly user-supplied) impedance operator."""
        self = cls.__new__(cls)
        self.topology = topology
        self.medium = medium
        self.spaces = impedance.spaces
        self.forms = forms if forms is not None else assemble_subdomain_forms(topology, medium, source)
        self.impedance = impedance
        self._finish()
        return self

    @classmethod
    def build(cls, mesh, partition, medium, impedance_spec, source=None):
        return cls(extract_topology(mesh, partition), medium, impedance_spec, source)

    def _finish(self):
        self.exchange = ExchangeOperator(self.impedance)
        self.robin = factorize_robin([f.A for f in self.forms], self.impedance)
        self.scattering = ScatteringOperator(self.robin)
        self.load = np.concatenate([f.f for f in self.forms])

    @property
    def n(self):
        return self.spaces.n_trace

    def apply(self, q):
        """``(Id + Pi S) q``."""
        return q + self.exchange.apply(self.scattering.apply(q))

    __call__ = apply

    def residual(self, q, g):
        """``res = |g - (Id + Pi S) q| / |g|`` in the dual norm."""
        imp = self.impedance
        return imp.norm_ts_dual(g - self.apply(q)) / imp.norm_ts_dual(g)


def compute_rhs(problem, f=None):
    """``g = -2i Pi Ts B (A - i B^* T B)^{-1} f``."""
    f = problem.load if f is None else np.asarray(f)
    u = problem.robin.solve(f)
    return -2j * problem.exchange.apply(problem.impedance.apply_sym(problem.spaces.apply_trace(u)))


def _zero_rhs(problem, g):
    return problem.impedance.norm_ts_dual(g) == 0.0


def richardson_solve(problem, g, config=SolveConfig(), callback=None):
    """``q <- q + relax (g - (Id + Pi S) q)`` from ``q = 0``.

    ``callback(n, q, res)`` is called for every recorded residual.
    """
    hist = ConvergenceHistory()
    q = np.zeros(problem.n, dtype=complex)
    if _zero_rhs(problem, g):
        hist.residuals.append((0, 0.0))
        hist.converged = True
        return q, hist
    imp = problem.impedance
    gnorm = imp.norm_ts_dual(g)
    r = g.astype(complex)
    for n in range(config.maxit + 1):
        res = imp.norm_ts_dual(r) / gnorm
        hist.residuals.append((n, res))
        if callback is not None:
            callback(n, q, res)
        if res < config.tol:
            hist.converged = True
            break
        if n == config.maxit:
            break
        q = q + config.relax * r
        r = g - problem.apply(q)
    hist.iterations = hist.residuals[-1][0]
    return q, hist


def gmres_solve(problem, g, config=SolveConfig(method="gmres"), callback=None):
    """Restarted GMRES in the ``Ts^{-1}`` inner product.

    Runs Euclidean modified Gram-Schmidt Arnoldi on ``L^{-1} (Id + Pi S) L``
    with ``Ts = L L^H``, which is the same Krylov method as orthogonalizing in
    the weighted inner product.  Recorded residuals are the least-squares
    residuals, recomputed exactly at every restart.
    """
    hist = ConvergenceHistory()
    q = np.zeros(problem.n, dtype=complex)
    if _zero_rhs(problem, g):
        hist.residuals.append((0, 0.0))
        hist.converged = True
        return q, hist
    fact = problem.impedance.sym_fact
    low = fact.lower_factor

    def op(w):
        return fact.solve_lower(problem.apply(low @ w))

    gw = fact.solve_lower(g)
    gnorm = np.linalg.norm(gw)
    w = np.zeros(problem.n, dtype=complex)
    r = gw.copy()
    n = 0
    res = 1.0
    hist.residuals.append((0, res))
    if callback is not None:
        callback(0, q, res)
    while n < config.maxit and res >= config.tol:
        beta = np.linalg.norm(r)
        m = min(config.restart, config.maxit - n)
        V = np.zeros((problem.n, m + 1), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        V[:, 0] = r / beta
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        e = np.zeros(m + 1, dtype=complex)
        e[0] = beta
        k_done = 0
        for k in range(m):
            v = op(V[:, k])
            for i in range(k + 1):
                H[i, k] = np.vdot(V[:, i], v)
                v = v - H[i, k] * V[:, i]
            H[k + 1, k] = np.linalg.norm(v)
            breakdown = H[k + 1, k] <= 1e-14 * beta
            if not breakdown:
                V[:, k + 1] = v / H[k + 1, k]
            for i in range(k):
                h0, h1 = H[i, k], H[i + 1, k]
                H[i, k] = np.conj(cs[i]) * h0 + np.conj(sn[i]) * h1
                H[i + 1, k] = -sn[i] * h0 + cs[i] * h1
            a, b = H[k, k], H[k + 1, k]
            d = np.hypot(abs(a), abs(b))
            cs[k], sn[k] = (a / d, b / d) if d > 0 else (1.0, 0.0)
            H[k, k] = d
            H[k + 1, k] = 0.0
            e[k + 1] = -sn[k] * e[k]
            e[k] = np.conj(cs[k]) * e[k]
            n += 1
            k_done = k + 1
            res = abs(e[k + 1]) / gnorm
            hist.residuals.append((n, res))
            if callback is not None:
                callback(n, None, res)
            if res < config.tol or breakdown:
                break
        y = sla.solve_triangular(H[:k_done, :k_done], e[:k_done])
        w = w + V[:, :k_done] @ y
        r = gw - op(w)
        true_res = np.linalg.norm(r) / gnorm
        # replace the estimate by the exact residual of the accepted iterate
        hist.residuals[-1] = (n, true_res)
        if true_res >= res * 0.999 and k_done < m and true_res >= config.tol:
            hist.stagnated = True
            res = true_res
            break
        res = true_res
    q = low @ w
    hist.converged = res < config.tol
    hist.iterations = n
    return q, hist


def solve(problem, g, config=SolveConfig()):
    if config.method == "gmres":
        return gmres_solve(problem, g, config)
    return richardson_solve(problem, g, config)


def reconstruct(problem, q, f=None):
    """``u = (A - i B^* T B)^{-1} (B^* q + f)`` and ``p = q + i T B u``."""
    f = problem.load if f is None else np.asarray(f)
    sp_ = problem.spaces
    u = problem.robin.solve(sp_.apply_trace_adjoint(q) + f)
    p = q + 1j * problem.impedance.apply(sp_.apply_trace(u))
    return u, p


def monolithic_solve(mesh, medium, load):
    """Direct sparse solve of the conforming system ``(mu K - kappa^2 M) U = load``."""
    k, m = global_matrices(mesh)
    a = (medium.mu * k - medium.kappa ** 2 * m).tocsc()
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError("conforming Helmholtz matrix is singular") from exc
    return lu.solve(np.asarray(load, dtype=complex))


@dataclass
class GlueResult:
    values: np.ndarray
    max_jump: float


def glue(spaces, u):
    """Average the copies of every vertex; report the largest disagreement."""
    u = np.asarray(u)
    counts = np.bincount(spaces.broken_vertex, minlength=spaces.n_global)
    total = spaces.embed_adjoint(u)
    values = total / np.maximum(counts, 1)
    # compare every copy with the first copy of the same vertex
    _, first = np.unique(spaces.broken_vertex, return_index=True)
    ref = np.empty(spaces.n_global, dtype=u.dtype)
    ref[spaces.broken_vertex[first]] = u[first]
    jump = float(np.abs(u - ref[spaces.broken_vertex]).max()) if u.size else 0.0
    return GlueResult(values, jump)


def h1_norm(mesh, u, matrices=None):
    k, m = matrices if matrices is not None else global_matrices(mesh)
    u = np.asarray(u)
    return float(np.sqrt(abs(np.vdot(u, k @ u) + np.vdot(u, m @ u))))


def h1_relative_error(mesh, u, ref):
    mats = global_matrices(mesh)
    return h1_norm(mesh, np.asarray(u) - ref, mats) / h1_norm(mesh, ref, mats)
