"""Constants of the convergence theory, computed densely at desk scale.

Volume norms are the broken H1 norm ``sum_j |grad u_j|^2 + kappa_*^2 |u_j|^2``
whose Gram on subdomain ``j`` is ``N_j``.  Trace norms are ``|.|_Ts`` on
primal and ``|.|_{Ts^-1}`` on dual multi-traces.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .exchange import DENSE_LIMIT, densify
from .linalg import HermitianFactorization, LuFactorization, extremal_generalized_eig, hermitian_part

__all__ = [
    "HarmonicLifting",
    "build_lifting",
    "compute_trace_bounds",
    "compute_skew_bound",
    "compute_infsup_alpha",
    "compute_continuity",
    "compute_beta",
    "CauchyProjector",
    "apply_projector_P",
    "compute_projector_norm",
    "verify_factorization",
    "compute_gamma",
    "sample_field_of_values",
    "ConstantsReport",
    "compute_constants",
    "AssumptionViolation",
]

ALPHA_MIN = 1e-12
HPD_TOL = 1e-13


class AssumptionViolation(ValueError):
    """The discrete problem is not inf-sup stable (``alpha_h`` vanishes)."""


def _gram_singular_values(k, fact_out, fact_in):
    """Singular values of ``L_out^{-1} K L_in^{-H}``: ``K`` maps into the dual of ``out``."""
    m = fact_out.solve_lower(k)
    m = fact_in.solve_lower(m.conj().T).conj().T
    return sla.svdvals(m, check_finite=False)


class HarmonicLifting:
    """Schur complements ``Lambda_j`` of the H1 Grams and the lifting ``B^dagger``."""

    def __init__(self, spaces, grams):
        self.spaces = spaces
        self.grams = [np.asarray(n) for n in grams]
        self.blocks = []
        self._interior = []
        for j, n in enumerate(self.grams):
            ii = spaces.interior_index[j]
            gg = spaces.boundary_local_index[j]
            n_gg = n[np.ix_(gg, gg)]
            if len(ii) == 0:
                self._interior.append(None)
                self.blocks.append(hermitian_part(n_gg))
                continue
            fact = HermitianFactorization(n[np.ix_(ii, ii)])
            ext = -fact.solve(n[np.ix_(ii, gg)])
            self._interior.append(ext)
            self.blocks.append(hermitian_part(n_gg + n[np.ix_(gg, ii)] @ ext))
        self.matrix = sla.block_diag(*self.blocks)

    def lift(self, v):
        """``B^dagger v``: boundary values ``v``, discrete harmonic interior."""
        sp_ = self.spaces
        v = np.asarray(v)
        out = np.zeros((sp_.n_broken,) + v.shape[1:], dtype=np.result_type(v, float))
        for j, s in enumerate(sp_.trace_slices):
            base = sp_.broken_slices[j].start
            out[base + sp_.boundary_local_index[j]] = v[s]
            if self._interior[j] is not None:
                out[base + sp_.interior_index[j]] = self._interior[j] @ v[s]
        return out

    def broken_norm(self, u):
        u = np.asarray(u)
        total = 0.0
        for n, s in zip(self.grams, self.spaces.broken_slices):
            total += np.vdot(u[s], n @ u[s]).real
        return float(np.sqrt(max(total, 0.0)))

    def norm(self, v):
        """``|v|_Lambda``."""
        return float(np.sqrt(max(np.vdot(v, self.matrix @ v).real, 0.0)))


def build_lifting(problem):
    return HarmonicLifting(problem.spaces, [f.N for f in problem.forms])


def compute_trace_bounds(impedance, lifting):
    """``(t_minus, t_plus)``: square roots of the extremal eigenvalues of ``Ts x = l Lambda x``."""
    lo, hi = extremal_generalized_eig(impedance.sym, lifting.matrix)
    return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(hi))


def compute_skew_bound(impedance):
    """Largest singular value of ``Ts^{-1/2} (T - T^*)/2 Ts^{-1/2}``."""
    k = 0.5 * (impedance.matrix - impedance.adjoint_matrix)
    if not np.any(k):
        return 0.0
    fact = impedance.sym_fact
    return float(_gram_singular_values(k, fact, fact)[0])


def _global_operator(problem):
    sp_ = problem.spaces
    e = sp_.embedding_matrix()
    a = sp.block_diag([f.A for f in problem.forms], format="csr")
    n = sp.block_diag([f.N for f in problem.forms], format="csr")
    return e, a, n


def compute_infsup_alpha(problem):
    """``alpha_h`` of the conforming Helmholtz matrix in the broken H1 norm."""
    e, a, n = _global_operator(problem)
    ag = (e.T @ a @ e).toarray()
    ng = HermitianFactorization((e.T @ n @ e).toarray())
    alpha = float(_gram_singular_values(ag, ng, ng)[-1])
    if alpha <= ALPHA_MIN:
        raise AssumptionViolation(f"alpha_h = {alpha:.3e}: conforming problem is not stable")
    return alpha


def compute_continuity(problem):
    """``|a|`` on the broken space: the largest blockwise value."""
    return max(
        float(_gram_singular_values(f.A, fn, fn)[0])
        for f, fn in ((f, HermitianFactorization(f.N)) for f in problem.forms)
    )


def compute_beta(problem):
    """Inf-sup constant of ``A - i B^* T B`` on the broken space (smallest block)."""
    out = np.inf
    for j, (f, tj) in enumerate(zip(problem.forms, problem.impedance.blocks)):
        idx = problem.spaces.boundary_local_index[j]
        m = f.A.astype(complex)
        m[np.ix_(idx, idx)] -= 1j * tj
        fn = HermitianFactorization(f.N)
        out = min(out, float(_gram_singular_values(m, fn, fn)[-1]))
    return out


class CauchyProjector:
    """Projector onto discrete Cauchy data along single-trace x polar pairs."""

    def __init__(self, problem, lifting):
        self.problem = problem
        self.lifting = lifting
        self.spaces = problem.spaces
        e, a, _ = _global_operator(problem)
        self._e = e
        self._a = a
        self._lu = LuFactorization((e.T @ a @ e).toarray())

    def apply(self, v, p):
        """Return ``(u_D, u_N)`` for the pair ``(p_D, p_N) = (v, p)``."""
        sp_ = self.spaces
        lift = self.lifting.lift(v)
        rhs = self._e.T @ (sp_.apply_trace_adjoint(p) - self._a @ lift)
        u = self._e @ self._lu.solve(rhs) + lift
        au = self._a @ u
        return sp_.apply_trace(u), sp_.apply_trace(au)

    def interior_residual(self, v, p):
        """Largest interior entry of ``A u``; should vanish."""
        sp_ = self.spaces
        lift = self.lifting.lift(v)
        rhs = self._e.T @ (sp_.apply_trace_adjoint(p) - self._a @ lift)
        au = self._a @ (self._e @ self._lu.solve(rhs) + lift)
        au[sp_.trace_index] = 0
        return float(np.abs(au).max())

    def matrix(self, limit=DENSE_LIMIT):
        n = self.spaces.n_trace
        if n > limit:
            raise ValueError(f"refusing to densify P on {n} multi-trace dofs (limit {limit})")
        eye = np.eye(n, dtype=complex)
        ud_v, un_v = self.apply(eye, np.zeros_like(eye))
        ud_p, un_p = self.apply(np.zeros_like(eye), eye)
        return np.block([[ud_v, ud_p], [un_v, un_p]])


def apply_projector_P(projector, v, p):
    return projector.apply(v, p)


def compute_projector_norm(projector, impedance):
    """``|P|`` in the ``Ts x Ts^{-1}`` product norm."""
    pm = projector.matrix()
    n = impedance.n
    low = impedance.sym_fact.lower_factor
    fact = impedance.sym_fact
    # primal part is measured by L^H, dual part by L^{-1}
    out = np.vstack([low.conj().T @ pm[:n], fact.solve_lower(pm[n:])])
    scaled = np.hstack([
        fact.solve_lower(out[:, :n].conj().T).conj().T,
        out[:, n:] @ low,
    ])
    return float(sla.svdvals(scaled, check_finite=False)[0])


def _skeleton_matrix(problem, limit=DENSE_LIMIT):
    return densify(problem.apply, problem.n, limit)


def verify_factorization(problem, projector, samples=50, rng=None, matrix=None):
    """Largest relative gap between ``(Id + Pi S)^{-1} f`` and ``i T' P T Ts^{-1} f / 2``."""
    rng = np.random.default_rng(rng)
    imp = problem.impedance
    m = _skeleton_matrix(problem) if matrix is None else matrix
    lu = LuFactorization(m)
    worst = 0.0
    for _ in range(samples):
        f = rng.standard_normal(problem.n) + 1j * rng.standard_normal(problem.n)
        direct = lu.solve(f)
        w = imp.solve_sym(f)
        ud, un = projector.apply(w, -1j * imp.apply_adjoint(w))
        fact = 0.5j * (un - 1j * imp.apply(ud))
        worst = max(worst, imp.norm_ts_dual(direct - fact) / imp.norm_ts_dual(direct))
    return worst


def compute_gamma(problem, constants=None, projector_norm=None, matrix=None):
    """Exact coercivity constant and its two lower bounds.

    ``constants`` is a mapping with ``alpha_h, norm_a, t_minus, t_plus, t_star``.
    Returns ``(gamma_exact, gamma_bound_thm, gamma_bound_hpd or None)``.
    """
    imp = problem.impedance
    m = _skeleton_matrix(problem) if matrix is None else matrix
    fact = imp.sym_fact
    # |M q|_{Ts^-1} / |q|_{Ts^-1} with q = L w
    gamma = float(sla.svdvals(fact.solve_lower(m @ fact.lower_factor), check_finite=False)[-1])
    bound_thm = None
    if constants is not None:
        c = constants
        bound_thm = 2 * c["alpha_h"] / (
            (1 + (1 + c["t_star"]) ** 2) * (c["t_plus"] ** 2 + (2 * c["norm_a"] / c["t_minus"]) ** 2)
        )
    bound_hpd = None
    if projector_norm is not None and imp.is_self_adjoint:
        bound_hpd = 1.0 / projector_norm
    return gamma, bound_thm, bound_hpd


def sample_field_of_values(problem, samples=500, rng=None, matrix=None, vectors=None):
    """``lambda = q^H Ts^{-1} (Id + Pi S) q`` for ``Ts^{-1}``-unit ``q``."""
    imp = problem.impedance
    rng = np.random.default_rng(rng)
    if vectors is None:
        vectors = rng.standard_normal((samples, problem.n)) + 1j * rng.standard_normal((samples, problem.n))
    out = []
    for q in vectors:
        nrm = imp.norm_ts_dual(q)
        if not nrm > 0:
            raise ValueError("field of values samples must be nonzero")
        q = q / nrm
        mq = matrix @ q if matrix is not None else problem.apply(q)
        out.append(complex(np.vdot(imp.solve_sym(q), mq)))
    return np.array(out)


@dataclass
class ConstantsReport:
    t_minus: float
    t_plus: float
    t_star: float
    alpha_h: float
    beta_h: float
    norm_a: float
    gamma_exact: float
    gamma_bound_thm: float
    norm_P: float
    projector_bound: float
    factorization_residual: float
    gamma_bound_hpd: float | None = None
    fov_min_real: float | None = None
    fov_max_dist: float | None = None
    metadata: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: {
        "alpha_min": ALPHA_MIN, "hpd": HPD_TOL, "bound_slack": 1e-9, "fov_slack": 1e-10,
    })

    def checks(self):
        slack = self.tolerances["bound_slack"]
        out = {
            "t_order": self.t_minus <= self.t_plus,
            "gamma_positive": self.gamma_exact > 0,
            "gamma_thm": self.gamma_exact >= self.gamma_bound_thm - slack,
            "projector_bound": self.norm_P <= self.projector_bound + slack,
            "factorization": self.factorization_residual <= 1e-8,
        }
        if self.gamma_bound_hpd is not None:
            out["gamma_hpd"] = self.gamma_exact >= self.gamma_bound_hpd - slack
        if self.fov_min_real is not None:
            fs = self.tolerances["fov_slack"]
            out["fov_disk"] = self.fov_max_dist <= 1 + fs
            out["fov_real"] = self.fov_min_real >= self.gamma_exact ** 2 / 2 - fs
        return out

    def to_json(self):
        d = asdict(self)
        d["checks"] = self.checks()
        return json.dumps(d, indent=2, sort_keys=True, default=_json_float)


def _json_float(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x)}")


def compute_constants(problem, samples=50, fov_samples=500, seed=0, metadata=None, limit=DENSE_LIMIT):
    """Every constant of the theory for one skeleton problem."""
    if problem.n > limit:
        raise ValueError(f"constants mode is limited to {limit} multi-trace dofs, got {problem.n}")
    rng = np.random.default_rng(seed)
    imp = problem.impedance
    lifting = build_lifting(problem)
    t_minus, t_plus = compute_trace_bounds(imp, lifting)
    c = {
        "t_minus": t_minus,
        "t_plus": t_plus,
        "t_star": compute_skew_bound(imp),
        "alpha_h": compute_infsup_alpha(problem),
        "norm_a": compute_continuity(problem),
    }
    beta = compute_beta(problem)
    projector = CauchyProjector(problem, lifting)
    norm_p = compute_projector_norm(projector, imp)
    m = _skeleton_matrix(problem, limit)
    gamma, bound_thm, bound_hpd = compute_gamma(problem, c, norm_p, matrix=m)
    fov = sample_field_of_values(problem, fov_samples, rng, matrix=m)
    fres = verify_factorization(problem, projector, samples, rng, matrix=m)
    return ConstantsReport(
        beta_h=beta,
        gamma_exact=gamma,
        gamma_bound_thm=bound_thm,
        gamma_bound_hpd=bound_hpd,
        norm_P=norm_p,
        projector_bound=(t_plus ** 2 + (2 * c["norm_a"] / t_minus) ** 2) / c["alpha_h"],
        factorization_residual=fres,
        fov_min_real=float(fov.real.min()),
        fov_max_dist=float(np.abs(fov - 1).max()),
        metadata=dict(metadata or {}),
        **c,
    )
