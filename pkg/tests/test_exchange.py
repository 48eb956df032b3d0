import numpy as np
import pytest

from conftest import REF_KAPPA, crand, two_triangle_mesh
from osmlab import ImpedanceSpec, MediumSpec, Partition, build_impedance, extract_topology
from osmlab.exchange import (
    ExchangeOperator,
    ScatteringOperator,
    apply_local_swap,
    check_cauchy_characterization,
    check_locality_criterion,
    check_transmission_characterization,
    factorize_robin,
    local_swap_matrix,
    write_matrix_text,
)
from osmlab.fem import assemble_subdomain_operator
from osmlab.impedance import ImpedanceOperator
from osmlab.mesh import Mesh
from osmlab.traces import TraceSpaces, project_onto_polar


class _Stub:
    """Bare skeleton copy map for hand-made swap examples."""

    def __init__(self, skeleton_index):
        self.skeleton_index = np.asarray(skeleton_index)
        self.n_skeleton = int(self.skeleton_index.max()) + 1

    def apply_restriction(self, w):
        return np.asarray(w)[self.skeleton_index]

    def apply_restriction_adjoint(self, p):
        out = np.zeros((self.n_skeleton,) + np.shape(p)[1:], dtype=np.result_type(p, float))
        np.add.at(out, self.skeleton_index, p)
        return out


def exchange_for(topology, spec, kappa=REF_KAPPA):
    return ExchangeOperator(build_impedance(spec, topology, MediumSpec(kappa)))


def robin_for(topology, imp, medium):
    return factorize_robin([assemble_subdomain_operator(topology, j, medium) for j in range(topology.J)], imp)


def test_local_swap_examples():
    out = apply_local_swap(np.array([1.0, 2, 3, 4, 5, 6]), _Stub([0, 1, 2, 0, 2, 3]))
    np.testing.assert_allclose(out, [4, 2, 5, 1, 3, 6])
    np.testing.assert_allclose(apply_local_swap(np.array([7.0]), _Stub([0])), [7.0])
    np.testing.assert_allclose(apply_local_swap(np.array([3.0, 6, 9]), _Stub([0, 0, 0])), [9, 6, 3])


def test_local_swap_is_involution(quad_topology):
    ploc = local_swap_matrix(TraceSpaces(quad_topology))
    np.testing.assert_allclose(ploc @ ploc, np.eye(len(ploc)), atol=1e-14)
    np.testing.assert_allclose(ploc, ploc.T, atol=1e-15)


def test_single_subdomain_selfadjoint_is_identity(small_mesh):
    top = extract_topology(small_mesh, Partition(np.zeros(small_mesh.n_triangles, dtype=int), 1))
    ex = exchange_for(top, ImpedanceSpec.choice(2))
    p = crand(np.random.default_rng(0), ex.n)
    np.testing.assert_allclose(ex.apply(p), p, atol=1e-12)


@pytest.mark.parametrize("choice", [1, 2, 3])
def test_polar_is_negated_and_isometry(quad_topology, rng, choice):
    ex = exchange_for(quad_topology, ImpedanceSpec.choice(choice))
    imp = ex.impedance
    q = project_onto_polar(crand(rng, ex.n), imp)
    np.testing.assert_allclose(ex.apply(q), -q, atol=1e-12 * np.abs(q).max())
    for _ in range(10):
        p = crand(rng, ex.n)
        assert abs(imp.norm_ts_dual(ex.apply(p)) - imp.norm_ts_dual(p)) <= 1e-12 * imp.norm_ts_dual(p)
        np.testing.assert_allclose(ex.apply_inverse(ex.apply(p)), p, atol=1e-12)


def test_inverse_equals_pi_iff_selfadjoint(quad_topology, rng):
    p = crand(rng, 80)
    ex = exchange_for(quad_topology, ImpedanceSpec.choice(2))
    np.testing.assert_allclose(ex.apply_inverse(p), ex.apply(p), atol=1e-12)
    ex = exchange_for(quad_topology, ImpedanceSpec("scaled_mass", z=np.exp(1j * np.pi / 4)))
    assert np.abs(ex.apply_inverse(p) - ex.apply(p)).max() > 1e-3


def test_selfadjoint_structure(quad_topology):
    ex = exchange_for(quad_topology, ImpedanceSpec.choice(2))
    pi = ex.matrix()
    eye = np.eye(ex.n)
    np.testing.assert_allclose(pi @ pi, eye, atol=1e-12)
    r = ex.spaces.restriction_matrix().toarray()
    np.testing.assert_allclose(pi.conj().T @ r, r, atol=1e-12)
    for proj in ((eye + pi) / 2, (eye - pi) / 2):
        np.testing.assert_allclose(proj @ proj, proj, atol=1e-12)


@pytest.mark.parametrize("angle,power,sign", [(np.pi / 4, 2, -1), (np.pi / 5, 5, 1)])
def test_rotated_identity_powers(quad_topology, angle, power, sign):
    spec = ImpedanceSpec("scaled_reference", z=np.exp(1j * angle), reference="identity_d")
    ex = exchange_for(quad_topology, spec)
    pi = ex.matrix()
    ploc = local_swap_matrix(ex.spaces)
    np.testing.assert_allclose(np.linalg.matrix_power(pi, power), sign * ploc, atol=1e-12)


def test_locality_criterion(quad_topology):
    rep = check_locality_criterion(exchange_for(quad_topology, ImpedanceSpec("identity_d")).impedance)
    assert rep.trace_identity and rep.commutation and rep.matches_local
    rep = check_locality_criterion(exchange_for(quad_topology, ImpedanceSpec.choice(2)).impedance)
    assert not rep.trace_identity and rep.matches_local is None


def test_robin_single_triangle():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    top = extract_topology(mesh, Partition(np.zeros(1, dtype=int), 1))
    medium = MediumSpec(2.0)
    imp = build_impedance(ImpedanceSpec("identity_d"), top, medium)
    robin = robin_for(top, imp, medium)
    a = assemble_subdomain_operator(top, 0, medium)
    rhs = np.array([1.0, -2.0, 0.5j])
    u = robin.solve(rhs)
    np.testing.assert_allclose((a - 1j * np.eye(3)) @ u, rhs, atol=1e-14)


def test_robin_residual(quad_topology, rng):
    medium = MediumSpec(REF_KAPPA)
    imp = build_impedance(ImpedanceSpec.choice(3), quad_topology, medium)
    robin = robin_for(quad_topology, imp, medium)
    sp = imp.spaces
    rhs = crand(rng, sp.n_broken)
    u = robin.solve(rhs)
    res = robin.apply_A(u) - 1j * sp.apply_trace_adjoint(imp.apply(sp.apply_trace(u))) - rhs
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(rhs)


@pytest.mark.parametrize("kappa", [4.0, REF_KAPPA])
@pytest.mark.parametrize("choice", [1, 2, 3])
def test_scattering_energy(quad_topology, rng, kappa, choice):
    medium = MediumSpec(kappa)
    imp = build_impedance(ImpedanceSpec.choice(choice), quad_topology, medium)
    s = ScatteringOperator(robin_for(quad_topology, imp, medium))
    for _ in range(5):
        p = crand(rng, s.n)
        assert s.energy_defect(p) < 1e-10
        ratio = imp.norm_ts_dual(s.apply(p)) / imp.norm_ts_dual(p)
        if complex(kappa).imag == 0:
            assert abs(ratio - 1) < 1e-10
        else:
            assert ratio < 1


def test_characterizations(quad_topology, rng):
    medium = MediumSpec(REF_KAPPA)
    imp = build_impedance(ImpedanceSpec.choice(3), quad_topology, medium)
    ex = ExchangeOperator(imp)
    sp = imp.spaces
    u = sp.apply_restriction(crand(rng, sp.n_skeleton))
    p = project_onto_polar(crand(rng, sp.n_trace), imp)
    assert check_transmission_characterization(u, p, ex)
    assert not check_transmission_characterization(u + 1e-3 * crand(rng, sp.n_trace), p, ex)
    assert not check_transmission_characterization(u, p + 1e-3 * crand(rng, sp.n_trace), ex)

    s = ScatteringOperator(robin_for(quad_topology, imp, medium))
    p_in = crand(rng, sp.n_trace)
    v = sp.apply_trace(s.robin.solve(sp.apply_trace_adjoint(p_in)))
    p = p_in + 1j * imp.apply(v)
    assert check_cauchy_characterization(v, p, s)
    assert not check_cauchy_characterization(v, p + 1e-3 * crand(rng, sp.n_trace), s)


def test_write_matrix_text(tmp_path, quad_topology):
    pi = exchange_for(quad_topology, ImpedanceSpec.choice(3)).matrix()
    dest = tmp_path / "pi.txt"
    write_matrix_text(pi, dest)
    lines = dest.read_text().splitlines()
    assert lines[0] == f"# {pi.shape[0]} {pi.shape[1]}"
    back = np.zeros_like(pi)
    for line in lines[1:]:
        i, j, re, im = line.split()
        back[int(i), int(j)] = complex(float(re), float(im))
    np.testing.assert_array_equal(back, pi)


def test_impedance_block_shape_mismatch(quad_topology):
    with pytest.raises(ValueError):
        ImpedanceOperator([np.eye(3)] * 4, quad_topology)


def test_two_triangles_single_subdomain():
    mesh = two_triangle_mesh()
    top = extract_topology(mesh, Partition(np.zeros(2, dtype=int), 1))
    ex = exchange_for(top, ImpedanceSpec("identity_d"), kappa=1.0)
    np.testing.assert_allclose(ex.matrix(), np.eye(4), atol=1e-15)
