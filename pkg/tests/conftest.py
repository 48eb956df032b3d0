import numpy as np
import pytest

from osmlab import MediumSpec, Partition, box_partition, extract_topology, structured_square_mesh
from osmlab.mesh import Mesh

LAMBDA = 0.2
REF_KAPPA = 2 * np.pi / LAMBDA + 1j


def two_triangle_mesh():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), np.array([[0, 1, 2], [0, 2, 3]]))


def ring_partition(mesh, inner=0.5):
    """Inner square plus outer ring: the only interface is a closed loop."""
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = (np.abs(c) < inner).all(axis=1)
    return Partition(np.where(inside, 0, 1), 2)


def crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="session")
def small_mesh():
    return structured_square_mesh(10)


@pytest.fixture(scope="session")
def quad_topology(small_mesh):
    # four quadrants: interior cross-point at the center
    return extract_topology(small_mesh, box_partition(small_mesh, 2, 2))


@pytest.fixture(scope="session")
def ring_topology(small_mesh):
    return extract_topology(small_mesh, ring_partition(small_mesh))


@pytest.fixture(scope="session")
def medium():
    return MediumSpec.from_wavelength(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
