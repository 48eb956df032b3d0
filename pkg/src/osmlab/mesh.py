"""Triangular meshes, subdomain partitions and skeleton topology.

Two ASCII mesh formats are understood: a minimal native format and the
MSH 2.2 subset written by gmsh (node section plus line/triangle elements).
"""
from __future__ import annotations

import io
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "MeshFormatError",
    "PartitionError",
    "Mesh",
    "Partition",
    "SubdomainTopology",
    "load_mesh",
    "write_mesh",
    "structured_square_mesh",
    "build_partition",
    "load_partition",
    "write_partition",
    "box_partition",
    "extract_topology",
]

AREA_TOL = 1e-14


class MeshFormatError(ValueError):
    """Malformed mesh input. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PartitionError(ValueError):
    pass


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshFormatError("triangle vertex index out of range")
        areas = self.areas
        bad = np.flatnonzero(areas <= AREA_TOL)
        if bad.size:
            raise MeshFormatError(f"degenerate triangle {bad[0]} (area {areas[bad[0]]:.3e})")
        counts = {}
        for tri in t:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = _edge_key(int(a), int(b))
                counts[key] = counts.get(key, 0) + 1
        nonmanifold = [e for e, c in counts.items() if c > 2]
        if nonmanifold:
            raise MeshFormatError(f"non-manifold edge {nonmanifold[0]}")
        self.__dict__["_edge_counts"] = counts

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.triangles.shape == other.triangles.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
        )

    __hash__ = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def boundary_edges(self):
        """Edges owned by exactly one triangle, as sorted vertex pairs."""
        edges = [e for e, c in self._edge_counts.items() if c == 1]
        return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.boundary_edges)

    @cached_property
    def triangle_neighbors(self):
        """For each triangle, the triangles sharing an edge with it."""
        owner = {}
        nbrs = [[] for _ in range(self.n_triangles)]
        for k, tri in enumerate(self.triangles):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = _edge_key(int(a), int(b))
                if key in owner:
                    other = owner[key]
                    nbrs[k].append(other)
                    nbrs[other].append(k)
                else:
                    owner[key] = k
        return [sorted(n) for n in nbrs]


@dataclass(frozen=True, eq=False)
class Partition:
    labels: np.ndarray
    n_subdomains: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        J = int(self.n_subdomains)
        if J < 1:
            raise PartitionError("at least one subdomain is required")
        if labels.size and (labels.min() < 0 or labels.max() >= J):
            raise PartitionError("subdomain label out of range")
        counts = np.bincount(labels, minlength=J)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise PartitionError(f"subdomain {empty[0]} is empty")

    @property
    def J(self):
        return self.n_subdomains

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.J == other.J and np.array_equal(self.labels, other.labels)

    __hash__ = None

    def sizes(self):
        return np.bincount(self.labels, minlength=self.J)


def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        return source.decode("ascii")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data


def _source_text(source):
    # a str without newlines is taken as a path
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        with open(source, "rb") as fh:
            return _read_text(fh)
    return _read_text(source)


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what):
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MeshFormatError(f"unexpected end of input while reading {what}", self.pos)

    @property
    def lineno(self):
        return self.pos

    def numbers(self, what, count, cast):
        line = self.next(what)
        parts = line.split()
        if len(parts) < count:
            raise MeshFormatError(f"expected {count} values for {what}", self.lineno)
        try:
            return [cast(x) for x in parts]
        except ValueError:
            raise MeshFormatError(f"bad number in {what}: {line!r}", self.lineno) from None


def _parse_native(text):
    lines = _Lines(text)
    header = lines.next("$Vertices")
    if header != "$Vertices":
        raise MeshFormatError("expected '$Vertices'", lines.lineno)
    (nv,) = lines.numbers("vertex count", 1, int)[:1]
    if nv <= 0:
        raise MeshFormatError("empty vertex section", lines.lineno)
    verts = [lines.numbers("vertex", 2, float)[:2] for _ in range(nv)]
    header = lines.next("$Triangles")
    if header != "$Triangles":
        raise MeshFormatError("expected '$Triangles'", lines.lineno)
    (nt,) = lines.numbers("triangle count", 1, int)[:1]
    if nt <= 0:
        raise MeshFormatError("empty triangle section", lines.lineno)
    tris = [lines.numbers("triangle", 3, int)[:3] for _ in range(nt)]
    return Mesh(np.array(verts), np.array(tris))


def _parse_msh2(text):
    lines = _Lines(text)
    nodes = None
    tris = []
    while True:
        try:
            header = lines.next("section")
        except MeshFormatError:
            break
        if header == "$MeshFormat":
            version = lines.next("format line").split()[0]
            if not version.startswith("2"):
                raise MeshFormatError(f"unsupported MSH version {version}", lines.lineno)
            if lines.next("$EndMeshFormat") != "$EndMeshFormat":
                raise MeshFormatError("expected '$EndMeshFormat'", lines.lineno)
        elif header == "$Nodes":
            (n,) = lines.numbers("node count", 1, int)[:1]
            if n <= 0:
                raise MeshFormatError("empty node section", lines.lineno)
            tags = []
            coords = []
            for _ in range(n):
                row = lines.numbers("node", 3, float)
                tags.append(int(row[0]))
                coords.append(row[1:3])
            if lines.next("$EndNodes") != "$EndNodes":
                raise MeshFormatError("expected '$EndNodes'", lines.lineno)
            nodes = (tags, coords)
        elif header == "$Elements":
            if nodes is None:
                raise MeshFormatError("$Elements before $Nodes", lines.lineno)
            index = {tag: k for k, tag in enumerate(nodes[0])}
            (n,) = lines.numbers("element count", 1, int)[:1]
            for _ in range(n):
                row = lines.numbers("element", 3, int)
                etype, ntags = row[1], row[2]
                conn = row[3 + ntags:]
                if etype == 1:
                    continue
                if etype != 2:
                    raise MeshFormatError(f"unsupported element type {etype}", lines.lineno)
                if len(conn) != 3:
                    raise MeshFormatError("triangle needs 3 nodes", lines.lineno)
                try:
                    tris.append([index[c] for c in conn])
                except KeyError as exc:
                    raise MeshFormatError(f"unknown node tag {exc.args[0]}", lines.lineno) from None
            if lines.next("$EndElements") != "$EndElements":
                raise MeshFormatError("expected '$EndElements'", lines.lineno)
        elif header.startswith("$"):
            end = "$End" + header[1:]
            while lines.next(end) != end:
                pass
        else:
            raise MeshFormatError(f"unexpected line {header!r}", lines.lineno)
    if nodes is None:
        raise MeshFormatError("no $Nodes section")
    if not tris:
        raise MeshFormatError("no triangles")
    return Mesh(np.array(nodes[1]), np.array(tris))


def load_mesh(source, format="native"):
    """Read a mesh from a path, byte/text stream, or raw string.

    ``format`` is ``"native"`` or ``"msh2"``.
    """
    text = _source_text(source)
    if format == "native":
        return _parse_native(text)
    if format == "msh2":
        return _parse_msh2(text)
    raise ValueError(f"unknown mesh format {format!r}")


def write_mesh(mesh, dest=None):
    """Serialize in the native format; returns the text if ``dest`` is None."""
    buf = io.StringIO()
    buf.write("$Vertices\n%d\n" % mesh.n_vertices)
    for x, y in mesh.vertices:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    buf.write("$Triangles\n%d\n" % mesh.n_triangles)
    for a, b, c in mesh.triangles:
        buf.write(f"{a} {b} {c}\n")
    text = buf.getvalue()
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)
    return text


def structured_square_mesh(n, side=2.0, center=(0.0, 0.0)):
    """Square of the given side split into ``n x n`` cells, two triangles each."""
    t = np.linspace(-side / 2, side / 2, n + 1)
    x, y = np.meshgrid(t + center[0], t + center[1], indexing="xy")
    verts = np.column_stack([x.ravel(), y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh(verts, np.array(tris))


def _is_connected(neighbors, members):
    members = set(members)
    start = next(iter(members))
    seen = {start}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for n in neighbors[k]:
            if n in members and n not in seen:
                seen.add(n)
                queue.append(n)
    return len(seen) == len(members)


def _grow(neighbors, seeds):
    n = len(neighbors)
    labels = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(len(seeds), dtype=np.int64)
    fronts = [deque() for _ in seeds]
    for j, s in enumerate(seeds):
        labels[s] = j
        sizes[j] = 1
        fronts[j].extend(neighbors[s])
    remaining = n - len(seeds)
    while remaining:
        # smallest region that can still grow claims its next BFS triangle
        order = np.lexsort((np.arange(len(seeds)), sizes))
        for j in order:
            front = fronts[j]
            while front and labels[front[0]] >= 0:
                front.popleft()
            if front:
                k = front.popleft()
                labels[k] = j
                sizes[j] += 1
                remaining -= 1
                front.extend(m for m in neighbors[k] if labels[m] < 0)
                break
        else:
            raise PartitionError("mesh is not edge-connected")
    return labels, sizes


def _bfs_distances(neighbors, sources):
    dist = np.full(len(neighbors), np.iinfo(np.int64).max, dtype=np.int64)
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        k = queue.popleft()
        for n in neighbors[k]:
            if dist[n] > dist[k] + 1:
                dist[n] = dist[k] + 1
                queue.append(n)
    return dist


def build_partition(mesh, J, seed=0, attempts=32, balance=0.3, lloyd_steps=8):
    """Deterministic connected partition by seeded multi-source BFS growth.

    Seeds are spread by farthest-point sampling from a random start triangle;
    regions then grow one triangle at a time, the smallest region first.
    Unbalanced results are reseeded at region centroids and regrown a few
    times.  Several starts are tried and the best balanced result is kept.
    """
    M = mesh.n_triangles
    if not 1 <= J <= M:
        raise PartitionError(f"J must lie in [1, {M}], got {J}")
    if J == 1:
        return Partition(np.zeros(M, dtype=np.int64), 1)
    neighbors = mesh.triangle_neighbors
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    rng = np.random.default_rng(seed)
    best = None
    target = M / J
    for _ in range(attempts):
        start = int(rng.integers(M))
        seeds = [int(np.argmax(_bfs_distances(neighbors, [start])))]
        while len(seeds) < J:
            dist = _bfs_distances(neighbors, seeds)
            seeds.append(int(np.argmax(dist)))
        for _ in range(lloyd_steps + 1):
            labels, sizes = _grow(neighbors, seeds)
            spread = np.abs(sizes - target).max() / target
            if best is None or spread < best[0]:
                best = (spread, labels)
            if spread <= balance:
                break
            # reseed every region at its triangle nearest to the region centroid
            seeds = []
            for j in range(J):
                members = np.flatnonzero(labels == j)
                c = centroids[members].mean(axis=0)
                seeds.append(int(members[np.argmin(((centroids[members] - c) ** 2).sum(axis=1))]))
        if best[0] <= balance:
            break
    spread, labels = best
    if spread > balance:
        raise PartitionError(f"could not balance partition within {balance:.0%} (got {spread:.0%})")
    return Partition(labels, J)


def load_partition(source, mesh):
    """One integer label per triangle, one per line."""
    text = _source_text(source)
    rows = [r.strip() for r in text.splitlines() if r.strip()]
    if len(rows) != mesh.n_triangles:
        raise PartitionError(f"expected {mesh.n_triangles} labels, got {len(rows)}")
    try:
        labels = np.array([int(r) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise PartitionError(f"bad label: {exc}") from None
    if labels.min() < 0:
        raise PartitionError("negative label")
    return Partition(labels, int(labels.max()) + 1)


def write_partition(partition, dest=None):
    text = "".join(f"{int(k)}\n" for k in partition.labels)
    if dest is None:
        return text
    with open(dest, "w") as fh:
        fh.write(text)
    return text


def box_partition(mesh, nx, ny):
    """Label triangles by which cell of an ``nx x ny`` bounding-box grid holds their centroid."""
    c = mesh.vertices[mesh.triangles].mean(axis=1)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    ix = np.clip(((c[:, 0] - lo[0]) / (hi[0] - lo[0]) * nx).astype(int), 0, nx - 1)
    iy = np.clip(((c[:, 1] - lo[1]) / (hi[1] - lo[1]) * ny).astype(int), 0, ny - 1)
    return Partition(iy * nx + ix, nx * ny)


@dataclass(frozen=True, eq=False)
class SubdomainTopology:
    """Per-subdomain index sets and skeleton multiplicities.

    All index arrays hold global vertex numbers in ascending order.
    """

    mesh: Mesh
    partition: Partition
    triangles: list
    volume_dofs: list
    boundary_edges: list
    boundary_dofs: list
    skeleton_dofs: np.ndarray
    multiplicity: np.ndarray
    cross_point: np.ndarray
    on_external_boundary: np.ndarray = field(repr=False)

    @property
    def J(self):
        return self.partition.J

    def is_cross_point(self, vertex):
        k = np.searchsorted(self.skeleton_dofs, vertex)
        return bool(k < len(self.skeleton_dofs) and self.skeleton_dofs[k] == vertex and self.cross_point[k])

    def multiplicity_of(self, vertex):
        k = np.searchsorted(self.skeleton_dofs, vertex)
        if k < len(self.skeleton_dofs) and self.skeleton_dofs[k] == vertex:
            return int(self.multiplicity[k])
        return 0

    def external_boundary_edges(self, j):
        """Edges of Gamma_j lying on the boundary of the whole domain."""
        ext = {tuple(e) for e in self.mesh.boundary_edges.tolist()}
        edges = self.boundary_edges[j]
        mask = np.array([tuple(e) in ext for e in edges.tolist()], dtype=bool)
        return edges[mask] if len(edges) else edges


def extract_topology(mesh, partition):
    if len(partition.labels) != mesh.n_triangles:
        raise PartitionError("partition does not match mesh")
    J = partition.J
    triangles, volume, bedges, bdofs = [], [], [], []
    for j in range(J):
        tri = np.flatnonzero(partition.labels == j)
        if not _is_connected(mesh.triangle_neighbors, tri.tolist()):
            raise PartitionError(f"subdomain {j} is not edge-connected")
        triangles.append(tri)
        volume.append(np.unique(mesh.triangles[tri]))
        counts = {}
        for t in mesh.triangles[tri]:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = _edge_key(int(a), int(b))
                counts[key] = counts.get(key, 0) + 1
        edges = np.array(sorted(e for e, c in counts.items() if c == 1), dtype=np.int64).reshape(-1, 2)
        bedges.append(edges)
        bdofs.append(np.unique(edges))
    skeleton = np.unique(np.concatenate(bdofs)) if bdofs else np.zeros(0, dtype=np.int64)
    mult = np.zeros(len(skeleton), dtype=np.int64)
    for d in bdofs:
        mult[np.searchsorted(skeleton, d)] += 1
    on_ext = np.isin(skeleton, mesh.boundary_vertices)
    cross = (mult >= 3) | ((mult == 2) & on_ext)
    return SubdomainTopology(
        mesh=mesh,
        partition=partition,
        triangles=triangles,
        volume_dofs=volume,
        boundary_edges=bedges,
        boundary_dofs=bdofs,
        skeleton_dofs=skeleton,
        multiplicity=mult,
        cross_point=cross,
        on_external_boundary=on_ext,
    )
