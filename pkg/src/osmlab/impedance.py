"""Block-diagonal impedance operators and the norms they induce."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem import assemble_boundary_mass, assemble_boundary_tangential_stiffness
from .linalg import HermitianFactorization, LuFactorization, extremal_generalized_eig, hermitian_part
from .traces import TraceSpaces

__all__ = [
    "CoercivityError",
    "ImpedanceSpec",
    "ImpedanceOperator",
    "CoercivityReport",
    "impedance_blocks",
    "build_impedance",
    "verify_coercivity",
    "decompose_primal",
]

COERCIVITY_TOL = 1e-12

KINDS = (
    "identity_d",
    "scaled_mass",
    "second_order",
    "rotated_second_order",
    "scaled_reference",
    "per_subdomain_scaled_mass",
)
REFERENCE_KINDS = ("identity_d", "mass", "second_order")


class CoercivityError(ValueError):
    def __init__(self, min_rayleigh):
        super().__init__(f"impedance is not coercive (smallest Rayleigh quotient {min_rayleigh:.3e})")
        self.min_rayleigh = min_rayleigh


def _parse_complex(z):
    if isinstance(z, (list, tuple)):
        return complex(z[0], z[1])
    if isinstance(z, dict):
        return complex(z.get("re", 0.0), z.get("im", 0.0))
    return complex(z)


@dataclass(frozen=True)
class ImpedanceSpec:
    """Declarative impedance description.

    ``z`` may be the string ``"kappa"`` for the medium wavenumber.
    """

    kind: str
    z: object = None
    theta: float = 0.0
    reference: str = "mass"
    z_list: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown impedance kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "rotated_second_order" and not abs(self.theta) < np.pi / 2:
            raise ValueError("theta must lie in (-pi/2, pi/2)")
        if self.kind in ("scaled_mass", "scaled_reference"):
            if self.z is None:
                raise ValueError(f"{self.kind} needs z")
            if self.z != "kappa" and not _parse_complex(self.z).real > 0:
                raise ValueError(f"Re z must be positive, got {self.z}")
        if self.kind == "scaled_reference" and self.reference not in REFERENCE_KINDS:
            raise ValueError(f"reference must be one of {REFERENCE_KINDS}")
        if self.kind == "per_subdomain_scaled_mass":
            if not self.z_list:
                raise ValueError("per_subdomain_scaled_mass needs z_list")
            if any(not _parse_complex(z).real > 0 for z in self.z_list):
                raise ValueError("every z_j must have positive real part")

    @classmethod
    def choice(cls, n, theta=np.pi / 10):
        """The three impedances of the reference Helmholtz experiment."""
        if n == 1:
            return cls("scaled_mass", z="kappa")
        if n == 2:
            return cls("second_order")
        if n == 3:
            return cls("rotated_second_order", theta=theta)
        raise ValueError("choice must be 1, 2 or 3")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "choice" in d:
            return cls.choice(int(d["choice"]), float(d.get("theta", np.pi / 10)))
        z = d.get("z")
        if z is not None and z != "kappa":
            z = _parse_complex(z)
        return cls(
            kind=d["kind"],
            z=z,
            theta=float(d.get("theta", 0.0)),
            reference=d.get("reference", "mass"),
            z_list=tuple(_parse_complex(v) for v in d.get("z_list", ())),
        )

    def to_dict(self):
        d = {"kind": self.kind}
        if self.z is not None:
            d["z"] = self.z if self.z == "kappa" else [complex(self.z).real, complex(self.z).imag]
        if self.kind == "rotated_second_order":
            d["theta"] = self.theta
        if self.kind == "scaled_reference":
            d["reference"] = self.reference
        if self.z_list:
            d["z_list"] = [[complex(z).real, complex(z).imag] for z in self.z_list]
        return d


def _boundary_matrices(topology):
    mass = [assemble_boundary_mass(topology, j) for j in range(topology.J)]
    stiff = [assemble_boundary_tangential_stiffness(topology, j) for j in range(topology.J)]
    return mass, stiff


def impedance_blocks(spec, topology, kappa, boundary=None):
    """Raw blocks ``T_j`` for ``spec``; no coercivity check."""
    mass, stiff = boundary if boundary is not None else _boundary_matrices(topology)
    ak = abs(kappa)

    def second_order(j):
        return stiff[j] / (2 * ak) + ak * mass[j]

    def reference(kind, j):
        if kind == "identity_d":
            return np.eye(len(topology.boundary_dofs[j]))
        if kind == "mass":
            return mass[j]
        return second_order(j)

    z = kappa if spec.z == "kappa" else spec.z
    blocks = []
    for j in range(topology.J):
        if spec.kind == "identity_d":
            b = np.eye(len(topology.boundary_dofs[j]))
        elif spec.kind == "scaled_mass":
            b = complex(z) * mass[j]
        elif spec.kind == "second_order":
            b = second_order(j)
        elif spec.kind == "rotated_second_order":
            b = np.exp(-1j * spec.theta) * second_order(j)
        elif spec.kind == "scaled_reference":
            b = complex(z) * reference(spec.reference, j)
        else:
            if len(spec.z_list) != topology.J:
                raise ValueError(f"z_list has {len(spec.z_list)} entries for {topology.J} subdomains")
            b = complex(spec.z_list[j]) * mass[j]
        blocks.append(np.asarray(b, dtype=complex))
    return blocks


@dataclass
class CoercivityReport:
    coercive: bool
    min_rayleigh: float


def verify_coercivity(blocks, topology=None, reference=None):
    """Smallest eigenvalue of ``Ts`` relative to the boundary mass Gram.

    ``blocks`` may be an :class:`ImpedanceOperator` or a list of ``T_j``.
    """
    if isinstance(blocks, ImpedanceOperator):
        topology = blocks.spaces.topology
        blocks = blocks.blocks
    if reference is None:
        reference = [assemble_boundary_mass(topology, j) for j in range(len(blocks))]
    lo = min(extremal_generalized_eig(hermitian_part(b), g)[0] for b, g in zip(blocks, reference))
    return CoercivityReport(coercive=bool(lo > COERCIVITY_TOL), min_rayleigh=float(lo))


class ImpedanceOperator:
    """``T = diag(T_1, ..., T_J)`` with its symmetric part and skeleton solves."""

    def __init__(self, blocks, spaces, spec=None):
        if not isinstance(spaces, TraceSpaces):
            spaces = TraceSpaces(spaces)
        if len(blocks) != spaces.J:
            raise ValueError(f"{len(blocks)} blocks for {spaces.J} subdomains")
        for j, (b, s) in enumerate(zip(blocks, spaces.trace_slices)):
            if b.shape != (s.stop - s.start,) * 2:
                raise ValueError(f"block {j} has shape {b.shape}, expected {(s.stop - s.start,) * 2}")
        self.spec = spec
        self.spaces = spaces
        self.blocks = [np.asarray(b, dtype=complex) for b in blocks]
        self.matrix = sla.block_diag(*self.blocks)
        self.adjoint_matrix = self.matrix.conj().T
        self.sym = hermitian_part(self.matrix)
        report = verify_coercivity(self.blocks, spaces.topology)
        if not report.coercive:
            raise CoercivityError(report.min_rayleigh)
        self.coercivity = report
        self.sym_fact = HermitianFactorization(self.sym)
        self.skeleton_lu = LuFactorization(self._skeleton(self.blocks))
        self.skeleton_adjoint_lu = LuFactorization(self._skeleton([b.conj().T for b in self.blocks]))

    def _skeleton(self, blocks):
        n = self.spaces.n_skeleton
        out = np.zeros((n, n), dtype=complex)
        for b, s in zip(blocks, self.spaces.trace_slices):
            idx = self.spaces.skeleton_index[s]
            out[np.ix_(idx, idx)] += b
        return out

    @property
    def n(self):
        return self.spaces.n_trace

    @property
    def is_self_adjoint(self):
        scale = np.abs(self.matrix).max()
        return bool(np.abs(self.matrix - self.adjoint_matrix).max() <= 1e-13 * scale)

    def apply(self, v):
        return self.matrix @ v

    def apply_adjoint(self, v):
        return self.adjoint_matrix @ v

    def apply_sym(self, v):
        return self.sym @ v

    def solve_sym(self, p):
        return self.sym_fact.solve(p)

    def norm_ts(self, v):
        return self.sym_fact.norm(v)

    def norm_ts_dual(self, p):
        return self.sym_fact.dual_norm(p)

    def inner_ts_dual(self, p, q):
        """``q^H Ts^{-1} p``."""
        return complex(np.vdot(self.sym_fact.solve_lower(q), self.sym_fact.solve_lower(p)))

    def solve(self, p):
        """``T^{-1} p``, factorized on first use."""
        if not hasattr(self, "_lu"):
            self._lu = LuFactorization(self.matrix)
        return self._lu.solve(p)

    def sym_inverse_matrix(self):
        return self.sym_fact.solve(np.eye(self.n))


def build_impedance(spec, topology, medium, boundary=None, spaces=None):
    blocks = impedance_blocks(spec, topology, medium.kappa, boundary)
    return ImpedanceOperator(blocks, spaces if spaces is not None else TraceSpaces(topology), spec)


def decompose_primal(v, impedance):
    """Split ``v = x + r`` with ``x`` single-trace and ``T r`` in the polar space."""
    spaces = impedance.spaces
    w = impedance.skeleton_lu.solve(spaces.apply_restriction_adjoint(impedance.apply(v)))
    x = spaces.apply_restriction(w)
    return x, v - x
