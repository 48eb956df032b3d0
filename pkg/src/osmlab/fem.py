"""P1-Lagrange assembly on subdomains and on the whole mesh.

Bilinear forms are complex symmetric (no conjugation): the Helmholtz matrix
is ``mu * K - kappa**2 * M``.  Element integrals are exact; only the plane
wave Neumann datum uses quadrature (two Gauss points per edge by default).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MediumSpec",
    "SubdomainForms",
    "element_stiffness",
    "element_mass",
    "assemble_subdomain_operator",
    "assemble_h1_gram",
    "assemble_boundary_mass",
    "assemble_boundary_tangential_stiffness",
    "assemble_load",
    "assemble_subdomain_forms",
    "global_matrices",
    "plane_wave_neumann",
    "ConstantSource",
    "PlaneWaveSource",
]

_REF_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class MediumSpec:
    kappa: complex
    mu: float = 1.0

    def __post_init__(self):
        k = complex(self.kappa)
        object.__setattr__(self, "kappa", k)
        if k.real < 0 or k.imag < 0:
            raise ValueError(f"kappa must have non-negative real and imaginary parts, got {k}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def kappa_star(self):
        return max(1.0, abs(self.kappa))

    @classmethod
    def from_wavelength(cls, wavelength, absorption=1.0, mu=1.0):
        if not wavelength > 0:
            raise ValueError("wavelength must be positive")
        if absorption < 0:
            raise ValueError("absorption must be non-negative")
        return cls(2 * np.pi / wavelength + 1j * absorption, mu)


@dataclass(frozen=True)
class ConstantSource:
    value: complex = 1.0


@dataclass(frozen=True)
class PlaneWaveSource:
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,):
            raise ValueError("plane wave direction must have two components")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError(f"plane wave direction must have unit norm, got {np.linalg.norm(d)}")
        object.__setattr__(self, "direction", (float(d[0]), float(d[1])))


def _gradients(p):
    # p: (..., 3, 2) vertex coordinates -> barycentric gradients (..., 3, 2), areas
    d1 = p[..., 1, :] - p[..., 0, :]
    d2 = p[..., 2, :] - p[..., 0, :]
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    g1 = np.stack([d2[..., 1], -d2[..., 0]], axis=-1) / det[..., None]
    g2 = np.stack([-d1[..., 1], d1[..., 0]], axis=-1) / det[..., None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=-2), 0.5 * np.abs(det)


def element_stiffness(p):
    """Exact P1 stiffness ``int grad phi_a . grad phi_b`` for triangles ``p``."""
    g, area = _gradients(np.asarray(p, dtype=float))
    return area[..., None, None] * np.einsum("...ak,...bk->...ab", g, g)


def element_mass(p):
    _, area = _gradients(np.asarray(p, dtype=float))
    return area[..., None, None] * _REF_MASS


def _scatter(local_index, elem, n):
    out = np.zeros((n, n), dtype=elem.dtype)
    rows = np.repeat(local_index, local_index.shape[1], axis=1).ravel()
    cols = np.tile(local_index, (1, local_index.shape[1])).ravel()
    np.add.at(out, (rows, cols), elem.reshape(-1))
    return out


def _subdomain_parts(topology, j):
    tri = topology.mesh.triangles[topology.triangles[j]]
    dofs = topology.volume_dofs[j]
    local = np.searchsorted(dofs, tri)
    return topology.mesh.vertices[tri], local, len(dofs)


def _stiffness_and_mass(topology, j):
    p, local, n = _subdomain_parts(topology, j)
    if n == 0:
        raise ValueError(f"subdomain {j} is empty")
    return _scatter(local, element_stiffness(p), n), _scatter(local, element_mass(p), n)


def assemble_subdomain_operator(topology, j, medium):
    """``A_j = mu K_j - kappa^2 M_j`` over the vertices of subdomain ``j``."""
    k, m = _stiffness_and_mass(topology, j)
    return medium.mu * k - medium.kappa ** 2 * m


def assemble_h1_gram(topology, j, kappa_star):
    """``N_j = K_j + kappa_star^2 M_j``."""
    if kappa_star < 1:
        raise ValueError("kappa_star must be >= 1")
    k, m = _stiffness_and_mass(topology, j)
    return k + kappa_star ** 2 * m


def _edge_parts(topology, j):
    edges = topology.boundary_edges[j]
    dofs = topology.boundary_dofs[j]
    if len(edges) == 0:
        raise ValueError(f"Gamma_{j} is empty")
    x = topology.mesh.vertices[edges]
    h = np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    return np.searchsorted(dofs, edges), h, len(dofs)


def assemble_boundary_mass(topology, j):
    local, h, n = _edge_parts(topology, j)
    elem = h[:, None, None] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return _scatter(local, elem, n)


def assemble_boundary_tangential_stiffness(topology, j):
    local, h, n = _edge_parts(topology, j)
    elem = (1.0 / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return _scatter(local, elem, n)


def plane_wave_neumann(kappa, direction, x, normal):
    """``d/dn exp(i kappa d.x) = i kappa (d.n) exp(i kappa d.x)``."""
    d = np.asarray(direction, dtype=float)
    return 1j * kappa * (normal @ d) * np.exp(1j * kappa * (x @ d))


def _outward_external_edges(topology, j):
    """External edges of subdomain j with their outward unit normals."""
    mesh = topology.mesh
    ext = topology.external_boundary_edges(j)
    if len(ext) == 0:
        return ext, np.zeros((0, 2))
    third = {}
    for t in mesh.triangles[topology.triangles[j]]:
        for a, b, c in ((t[0], t[1], t[2]), (t[1], t[2], t[0]), (t[2], t[0], t[1])):
            third[(min(a, b), max(a, b))] = c
    normals = np.empty((len(ext), 2))
    for k, (a, b) in enumerate(ext.tolist()):
        xa, xb, xc = mesh.vertices[a], mesh.vertices[b], mesh.vertices[third[(a, b)]]
        t = xb - xa
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        if n @ (xc - xa) > 0:
            n = -n
        normals[k] = n
    return ext, normals


def assemble_load(topology, medium, source, quad_points=2):
    """Per-subdomain load vectors over the volume dofs.

    ``source`` is ``None`` (zero), a :class:`ConstantSource` (volume term) or a
    :class:`PlaneWaveSource` (Neumann datum on the external boundary only).
    """
    mesh = topology.mesh
    loads = [np.zeros(len(d), dtype=complex) for d in topology.volume_dofs]
    if source is None:
        return loads
    if isinstance(source, ConstantSource):
        for j in range(topology.J):
            tri = mesh.triangles[topology.triangles[j]]
            local = np.searchsorted(topology.volume_dofs[j], tri)
            contrib = np.repeat(source.value * mesh.areas[topology.triangles[j]] / 3.0, 3)
            np.add.at(loads[j], local.ravel(), contrib)
        return loads
    if isinstance(source, PlaneWaveSource):
        s, w = np.polynomial.legendre.leggauss(quad_points)
        s, w = 0.5 * (s + 1.0), 0.5 * w
        for j in range(topology.J):
            edges, normals = _outward_external_edges(topology, j)
            if len(edges) == 0:
                continue
            xa = mesh.vertices[edges[:, 0]]
            xb = mesh.vertices[edges[:, 1]]
            h = np.linalg.norm(xb - xa, axis=1)
            local = np.searchsorted(topology.volume_dofs[j], edges)
            for sq, wq in zip(s, w):
                xq = (1 - sq) * xa + sq * xb
                g = np.array([plane_wave_neumann(medium.kappa, source.direction, xq[k], normals[k])
                              for k in range(len(edges))])
                np.add.at(loads[j], local[:, 0], wq * h * g * (1 - sq))
                np.add.at(loads[j], local[:, 1], wq * h * g * sq)
        return loads
    raise TypeError(f"unsupported source {source!r}")


@dataclass
class SubdomainForms:
    A: np.ndarray
    N: np.ndarray
    M_gamma: np.ndarray
    K_gamma: np.ndarray
    f: np.ndarray


def assemble_subdomain_forms(topology, medium, source=None):
    loads = assemble_load(topology, medium, source)
    forms = []
    for j in range(topology.J):
        k, m = _stiffness_and_mass(topology, j)
        forms.append(SubdomainForms(
            A=medium.mu * k - medium.kappa ** 2 * m,
            N=k + medium.kappa_star ** 2 * m,
            M_gamma=assemble_boundary_mass(topology, j),
            K_gamma=assemble_boundary_tangential_stiffness(topology, j),
            f=loads[j],
        ))
    return forms


def global_matrices(mesh):
    """Conforming stiffness and mass on all vertices, as scipy CSR matrices."""
    import scipy.sparse as sp

    p = mesh.vertices[mesh.triangles]
    ke, me = element_stiffness(p), element_mass(p)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    k = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    m = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return k, m
