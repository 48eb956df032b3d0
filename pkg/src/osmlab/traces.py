"""Broken, multi-trace and skeleton spaces and the maps between them.

Vectors are flat numpy arrays; block ``j`` of a broken vector lives at
``broken_slices[j]`` and block ``j`` of a multi-trace at ``trace_slices[j]``.
Dual multi-traces use the same coefficient layout as primal ones (canonical
dual basis), so only the Gram matrices distinguish them.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["TraceSpaces", "project_onto_polar"]


def _slices(sizes):
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [slice(a, b) for a, b in zip(offsets[:-1], offsets[1:])], int(offsets[-1])


class TraceSpaces:
    """Index maps for ``B``, ``R`` and the conforming embedding of one topology."""

    def __init__(self, topology):
        self.topology = topology
        self.J = topology.J
        self.broken_slices, self.n_broken = _slices([len(d) for d in topology.volume_dofs])
        self.trace_slices, self.n_trace = _slices([len(d) for d in topology.boundary_dofs])
        self.n_skeleton = len(topology.skeleton_dofs)
        self.n_global = topology.mesh.n_vertices

        # global vertex of every broken coefficient
        self.broken_vertex = np.concatenate(topology.volume_dofs)
        # broken position of every multi-trace coefficient (B is a selection)
        self.trace_index = np.concatenate([
            self.broken_slices[j].start + np.searchsorted(topology.volume_dofs[j], topology.boundary_dofs[j])
            for j in range(self.J)
        ])
        # skeleton position of every multi-trace coefficient (R is a copy)
        self.skeleton_index = np.searchsorted(topology.skeleton_dofs, np.concatenate(topology.boundary_dofs))
        self.trace_vertex = np.concatenate(topology.boundary_dofs)
        self.interior_index = [
            np.setdiff1d(np.arange(len(topology.volume_dofs[j])),
                         np.searchsorted(topology.volume_dofs[j], topology.boundary_dofs[j]))
            for j in range(self.J)
        ]
        self.boundary_local_index = [
            np.searchsorted(topology.volume_dofs[j], topology.boundary_dofs[j]) for j in range(self.J)
        ]

    # block helpers

    def split_broken(self, u):
        return [u[s] for s in self.broken_slices]

    def split_trace(self, p):
        return [p[s] for s in self.trace_slices]

    def join(self, blocks):
        return np.concatenate([np.asarray(b) for b in blocks])

    # operators

    def apply_trace(self, u):
        u = np.asarray(u)
        if u.shape[0] != self.n_broken:
            raise ValueError(f"broken vector has size {u.shape[0]}, expected {self.n_broken}")
        return u[self.trace_index]

    def apply_trace_adjoint(self, p):
        p = np.asarray(p)
        if p.shape[0] != self.n_trace:
            raise ValueError(f"multi-trace has size {p.shape[0]}, expected {self.n_trace}")
        out = np.zeros((self.n_broken,) + p.shape[1:], dtype=np.result_type(p, float))
        out[self.trace_index] = p
        return out

    def apply_restriction(self, w):
        w = np.asarray(w)
        if w.shape[0] != self.n_skeleton:
            raise ValueError(f"skeleton vector has size {w.shape[0]}, expected {self.n_skeleton}")
        return w[self.skeleton_index]

    def apply_restriction_adjoint(self, p):
        p = np.asarray(p)
        if p.shape[0] != self.n_trace:
            raise ValueError(f"multi-trace has size {p.shape[0]}, expected {self.n_trace}")
        out = np.zeros((self.n_skeleton,) + p.shape[1:], dtype=np.result_type(p, float))
        np.add.at(out, self.skeleton_index, p)
        return out

    def embed(self, U):
        """Conforming vector on all vertices -> broken vector."""
        return np.asarray(U)[self.broken_vertex]

    def embed_adjoint(self, f):
        """Broken functional -> functional on all vertices (sums duplicates)."""
        f = np.asarray(f)
        out = np.zeros((self.n_global,) + f.shape[1:], dtype=np.result_type(f, float))
        np.add.at(out, self.broken_vertex, f)
        return out

    # sparse matrix forms

    def trace_matrix(self):
        return sp.csr_matrix(
            (np.ones(self.n_trace), (np.arange(self.n_trace), self.trace_index)),
            shape=(self.n_trace, self.n_broken),
        )

    def restriction_matrix(self):
        return sp.csr_matrix(
            (np.ones(self.n_trace), (np.arange(self.n_trace), self.skeleton_index)),
            shape=(self.n_trace, self.n_skeleton),
        )

    def embedding_matrix(self):
        return sp.csr_matrix(
            (np.ones(self.n_broken), (np.arange(self.n_broken), self.broken_vertex)),
            shape=(self.n_broken, self.n_global),
        )

    def multiplicity_on_trace(self):
        return self.topology.multiplicity[self.skeleton_index]

    def polar_basis(self):
        """Columns spanning ``Ker(R^*)``: differences of copies of one skeleton dof."""
        cols = []
        for s in range(self.n_skeleton):
            copies = np.flatnonzero(self.skeleton_index == s)
            for a in copies[1:]:
                c = np.zeros(self.n_trace)
                c[copies[0]], c[a] = 1.0, -1.0
                cols.append(c)
        return np.array(cols).T.reshape(self.n_trace, -1)


def project_onto_polar(p, impedance):
    """``q = p - T^* R (R^* T^* R)^{-1} R^* p``, so that ``R^* q = 0``."""
    spaces = impedance.spaces
    w = impedance.skeleton_adjoint_lu.solve(spaces.apply_restriction_adjoint(p))
    return p - impedance.apply_adjoint(spaces.apply_restriction(w))
