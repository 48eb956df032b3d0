import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ring_partition, two_triangle_mesh
from osmlab.mesh import (
    Mesh,
    MeshFormatError,
    Partition,
    PartitionError,
    box_partition,
    build_partition,
    extract_topology,
    load_mesh,
    load_partition,
    structured_square_mesh,
    write_mesh,
    write_partition,
)

NATIVE = """$Vertices
4
0 0
1 0
1 1
0 1
$Triangles
2
0 1 2
0 2 3
"""

MSH2 = """$MeshFormat
2.2 0 8
$EndMeshFormat
$PhysicalNames
1
1 1 "boundary"
$EndPhysicalNames
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
4
1 1 2 1 1 1 2
2 1 2 1 1 2 3
3 2 2 0 1 1 2 3
4 2 2 0 1 1 3 4
$EndElements
"""


def test_native_square_boundary_edges():
    mesh = load_mesh(io.StringIO(NATIVE))
    assert mesh.n_vertices == 4 and mesh.n_triangles == 2
    assert len(mesh.boundary_edges) == 4
    assert [0, 2] not in mesh.boundary_edges.tolist()


def test_native_from_bytes_and_path(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text(NATIVE)
    assert load_mesh(p) == load_mesh(NATIVE.encode()) == load_mesh(str(p))


def test_empty_vertex_section():
    with pytest.raises(MeshFormatError):
        load_mesh(io.StringIO("$Vertices\n0\n$Triangles\n0\n"))


def test_parse_error_carries_line():
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(io.StringIO("$Vertices\n2\n0 0\n1 x\n"))
    assert exc.value.line == 4


def test_msh2_matches_native_twin():
    assert load_mesh(io.StringIO(MSH2), format="msh2") == load_mesh(io.StringIO(NATIVE))


def test_msh2_rejects_other_elements():
    bad = MSH2.replace("4 2 2 0 1 1 3 4", "4 3 2 0 1 1 2 3 4")
    with pytest.raises(MeshFormatError):
        load_mesh(io.StringIO(bad), format="msh2")


def test_degenerate_and_nonmanifold_rejected():
    with pytest.raises(MeshFormatError):
        Mesh(np.array([[0, 0], [1, 0], [2, 0]]), np.array([[0, 1, 2]]))
    v = np.array([[0, 0], [1, 0], [0, 1], [0, -1], [1, 1]], dtype=float)
    with pytest.raises(MeshFormatError):
        Mesh(v, np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]))


def test_write_read_roundtrip():
    mesh = structured_square_mesh(5, side=1.3, center=(0.1, -0.2))
    assert load_mesh(io.StringIO(write_mesh(mesh))) == mesh


def test_partition_single_and_pair():
    mesh = two_triangle_mesh()
    assert np.all(build_partition(mesh, 1).labels == 0)
    p = build_partition(mesh, 2)
    assert sorted(p.labels.tolist()) == [0, 1]
    with pytest.raises(PartitionError):
        build_partition(mesh, 3)


def test_partition_deterministic_balanced_connected():
    mesh = structured_square_mesh(24)
    a = build_partition(mesh, 8, seed=3)
    assert a == build_partition(mesh, 8, seed=3)
    sizes = a.sizes()
    assert np.abs(sizes - mesh.n_triangles / 8).max() <= 0.3 * mesh.n_triangles / 8
    extract_topology(mesh, a)  # raises if a region is disconnected


def test_load_partition():
    mesh = two_triangle_mesh()
    assert load_partition(io.StringIO("0\n1\n"), mesh).J == 2
    with pytest.raises(PartitionError):
        load_partition(io.StringIO("0\n1\n1\n"), mesh)
    assert load_partition(io.StringIO("0\n0\n"), mesh) == build_partition(mesh, 1)
    with pytest.raises(PartitionError):
        load_partition(io.StringIO("0\n2\n"), mesh)
    p = build_partition(structured_square_mesh(4), 3)
    assert load_partition(io.StringIO(write_partition(p)), structured_square_mesh(4)) == p


def test_disconnected_subdomain_rejected():
    mesh = structured_square_mesh(4)
    labels = np.zeros(mesh.n_triangles, dtype=int)
    labels[[0, mesh.n_triangles - 1]] = 1
    with pytest.raises(PartitionError):
        extract_topology(mesh, Partition(labels, 2))


def test_two_triangle_topology():
    top = extract_topology(two_triangle_mesh(), Partition(np.array([0, 1]), 2))
    assert top.boundary_dofs[0].tolist() == [0, 1, 2]
    assert top.boundary_dofs[1].tolist() == [0, 2, 3]
    assert top.multiplicity_of(0) == top.multiplicity_of(2) == 2
    assert top.is_cross_point(0) and top.is_cross_point(2)
    assert not top.is_cross_point(1)


def test_single_subdomain_topology():
    mesh = structured_square_mesh(4)
    top = extract_topology(mesh, build_partition(mesh, 1))
    assert np.array_equal(top.boundary_dofs[0], mesh.boundary_vertices)
    assert np.all(top.multiplicity == 1) and not top.cross_point.any()


def test_quadrants_center_cross_point():
    mesh = structured_square_mesh(2)
    top = extract_topology(mesh, box_partition(mesh, 2, 2))
    center = int(np.argmin(np.linalg.norm(mesh.vertices, axis=1)))
    assert top.multiplicity_of(center) == 4 and top.is_cross_point(center)


def test_ring_partition_has_no_interior_cross_points():
    mesh = structured_square_mesh(8)
    top = extract_topology(mesh, ring_partition(mesh))
    assert not top.cross_point.any()


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 8), J=st.integers(1, 6), seed=st.integers(0, 100))
def test_topology_invariants(n, J, seed):
    mesh = structured_square_mesh(n)
    J = min(J, mesh.n_triangles)
    top = extract_topology(mesh, build_partition(mesh, J, seed=seed, balance=10.0))
    assert sum(len(d) for d in top.boundary_dofs) == top.multiplicity.sum()
    ext = {tuple(e) for e in mesh.boundary_edges.tolist()}
    owners = {}
    for j, edges in enumerate(top.boundary_edges):
        for e in map(tuple, edges.tolist()):
            owners.setdefault(e, []).append(j)
    for e, js in owners.items():
        assert (e in ext and len(js) == 1) or (e not in ext and len(js) == 2 and js[0] != js[1])
