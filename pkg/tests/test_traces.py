import numpy as np
import pytest

from conftest import crand, two_triangle_mesh
from osmlab import ImpedanceSpec, MediumSpec, Partition, TraceSpaces, build_impedance, extract_topology
from osmlab.traces import project_onto_polar


@pytest.fixture
def two_tri():
    return TraceSpaces(extract_topology(two_triangle_mesh(), Partition(np.array([0, 1]), 2)))


def test_trace_of_two_triangle(two_tri):
    u = np.array([1.0, 2.0, 3.0, 7.0, 8.0, 9.0])
    np.testing.assert_array_equal(two_tri.split_trace(two_tri.apply_trace(u))[0], [1.0, 2.0, 3.0])
    assert not np.any(two_tri.apply_trace(np.zeros(6)))


def test_restriction_adjoint_hand_sum(two_tri):
    p = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    np.testing.assert_array_equal(two_tri.apply_restriction_adjoint(p), [5.0, 2.0, 8.0, 6.0])
    np.testing.assert_array_equal(two_tri.apply_restriction(np.ones(4)), np.ones(6))


def test_interior_vertex_absent_from_trace(quad_topology):
    sp = TraceSpaces(quad_topology)
    assert sp.n_trace < sp.n_broken
    for j in range(sp.J):
        interior = set(quad_topology.volume_dofs[j]) - set(quad_topology.boundary_dofs[j])
        assert interior and not interior & set(sp.split_trace(sp.trace_vertex)[j])


def test_pairing_identities(quad_topology, rng):
    sp = TraceSpaces(quad_topology)
    p, u, w = crand(rng, sp.n_trace), crand(rng, sp.n_broken), crand(rng, sp.n_skeleton)
    assert abs(sp.apply_trace_adjoint(p) @ u - p @ sp.apply_trace(u)) <= 1e-14 * np.abs(p).sum() * np.abs(u).max()
    assert abs(sp.apply_restriction_adjoint(p) @ w - p @ sp.apply_restriction(w)) <= 1e-13 * np.abs(p).sum() * np.abs(w).max()
    np.testing.assert_array_equal(sp.trace_matrix() @ u, sp.apply_trace(u))
    np.testing.assert_array_equal(sp.restriction_matrix() @ w, sp.apply_restriction(w))


def test_unit_functional_support(quad_topology):
    sp = TraceSpaces(quad_topology)
    p = np.zeros(sp.n_trace)
    p[sp.trace_slices[2].start + 1] = 1.0
    bp = sp.apply_trace_adjoint(p)
    (k,) = np.flatnonzero(bp)
    s = sp.broken_slices[2]
    assert s.start <= k < s.stop and sp.broken_vertex[k] == quad_topology.boundary_dofs[2][1]


def test_restriction_normal_equations_multiplicity(quad_topology, rng):
    sp = TraceSpaces(quad_topology)
    w = crand(rng, sp.n_skeleton)
    np.testing.assert_allclose(sp.apply_restriction_adjoint(sp.apply_restriction(w)), quad_topology.multiplicity * w)


def test_polar_basis_spans_kernel(quad_topology):
    sp = TraceSpaces(quad_topology)
    q = sp.polar_basis()
    assert q.shape[1] == sp.n_trace - sp.n_skeleton
    assert not np.any(sp.apply_restriction_adjoint(q))
    assert np.linalg.matrix_rank(q) == q.shape[1]


def test_single_trace_membership_by_polarity(quad_topology, rng):
    sp = TraceSpaces(quad_topology)
    q = sp.polar_basis()
    v = sp.apply_restriction(crand(rng, sp.n_skeleton))
    assert np.abs(q.T @ v).max() < 1e-12
    # perturb one copy of a shared vertex
    v[np.flatnonzero(sp.multiplicity_on_trace() > 1)[0]] += 1.0
    assert np.abs(q.T @ v).max() > 0.5


def test_kernel_of_trace_is_conforming(quad_topology, rng):
    sp = TraceSpaces(quad_topology)
    u = crand(rng, sp.n_broken)
    u[sp.trace_index] = 0
    # every duplicated vertex lies on the skeleton, so all copies vanish together
    counts = np.bincount(sp.broken_vertex)
    assert np.all(u[counts[sp.broken_vertex] > 1] == 0)


def test_embed_adjoint_sums_copies(quad_topology):
    sp = TraceSpaces(quad_topology)
    ones = sp.embed_adjoint(np.ones(sp.n_broken))
    np.testing.assert_array_equal(ones, np.bincount(sp.broken_vertex))


@pytest.mark.parametrize("choice", [1, 2, 3])
def test_project_onto_polar(quad_topology, rng, choice):
    imp = build_impedance(ImpedanceSpec.choice(choice), quad_topology, MediumSpec.from_wavelength(0.5))
    sp = imp.spaces
    p = crand(rng, sp.n_trace)
    q = project_onto_polar(p, imp)
    assert np.linalg.norm(sp.apply_restriction_adjoint(q)) <= 1e-11 * np.linalg.norm(p)
    np.testing.assert_allclose(project_onto_polar(q, imp), q, atol=1e-12 * np.abs(q).max())
    w = crand(rng, sp.n_skeleton)
    assert np.abs(project_onto_polar(imp.apply_adjoint(sp.apply_restriction(w)), imp)).max() < 1e-11 * np.abs(w).max() * np.abs(imp.matrix).max()


def test_size_checks(two_tri):
    with pytest.raises(ValueError):
        two_tri.apply_trace(np.zeros(5))
    with pytest.raises(ValueError):
        two_tri.apply_restriction(np.zeros(5))
