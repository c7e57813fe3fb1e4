"""Triangle meshes: storage, adjacency, normals, uniform Laplacian, midpoint
subdivision and Wavefront OBJ I/O."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SKIN, HAIR, OTHER = 0, 1, 2


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    pass


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    offsets: np.ndarray | None = None
    region_labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        off = np.zeros_like(v) if self.offsets is None else np.asarray(self.offsets, dtype=np.float64)
        lab = (np.zeros(len(v), dtype=np.int64) if self.region_labels is None
               else np.asarray(self.region_labels, dtype=np.int64))
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "region_labels", lab)
        if off.shape != v.shape or lab.shape != (len(v),):
            raise MeshError("offsets/region_labels must align with vertices")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError("face index out of range")
            repeat = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if repeat.any():
                raise MeshError(f"face {int(np.flatnonzero(repeat)[0])} references a vertex twice")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def effective_vertices(self) -> np.ndarray:
        return self.vertices + self.offsets

    def with_vertices(self, vertices: np.ndarray, fold_offsets: bool = True) -> "TriMesh":
        return replace(self, vertices=vertices, offsets=np.zeros_like(vertices) if fold_offsets else self.offsets)


@dataclass(frozen=True)
class MeshAdjacency:
    vertex_neighbors: list[np.ndarray]
    face_pairs: np.ndarray                  # (P, 2) face indices sharing an edge
    edges: np.ndarray                       # (E, 2) sorted unique vertex pairs
    n_faces: int = 0
    _laplacian: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def laplacian_matrix(self) -> sp.csr_matrix:
        """Uniform graph Laplacian L = I - D^-1 A as a sparse matrix."""
        if self._laplacian is None:
            n = len(self.vertex_neighbors)
            deg = np.array([len(nb) for nb in self.vertex_neighbors])
            if (deg == 0).any():
                raise MeshError(f"vertex {int(np.flatnonzero(deg == 0)[0])} is isolated")
            rows = np.repeat(np.arange(n), deg)
            cols = np.concatenate(self.vertex_neighbors)
            A = sp.csr_matrix((1.0 / deg[rows], (rows, cols)), shape=(n, n))
            object.__setattr__(self, "_laplacian", (sp.identity(n, format="csr") - A).tocsr())
        return self._laplacian


def unique_edges(faces: np.ndarray):
    """Sorted unique edges and, per face corner-edge (f, k) -> edge id (edge k joins corners k, k+1)."""
    e = np.stack([faces, np.roll(faces, -1, axis=1)], axis=-1).reshape(-1, 2)
    e.sort(axis=1)
    edges, inverse = np.unique(e, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def build_adjacency(mesh: TriMesh) -> MeshAdjacency:
    faces = mesh.faces
    edges, face_edge = unique_edges(faces)
    counts = np.bincount(face_edge.ravel(), minlength=len(edges))
    if (counts > 2).any():
        bad = edges[counts > 2]
        raise MeshError(f"non-manifold edge(s) shared by >2 faces: {bad[:5].tolist()}")
    owner = np.repeat(np.arange(len(faces)), 3)
    order = np.argsort(face_edge.ravel(), kind="stable")
    sorted_edges = face_edge.ravel()[order]
    owners = owner[order]
    starts = np.searchsorted(sorted_edges, np.flatnonzero(counts == 2))
    pairs = np.stack([owners[starts], owners[starts + 1]], axis=1)
    pairs.sort(axis=1)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    n = mesh.n_vertices
    nb_rows = np.concatenate([edges[:, 0], edges[:, 1]])
    nb_cols = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((nb_cols, nb_rows))
    nb_rows, nb_cols = nb_rows[order], nb_cols[order]
    splits = np.searchsorted(nb_rows, np.arange(1, n))
    neighbors = np.split(nb_cols, splits)
    return MeshAdjacency(neighbors, pairs, edges, mesh.n_faces)


def face_normals(vertices: np.ndarray, faces: np.ndarray, unit: bool = True) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    if unit:
        n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return n


def vertex_normals(mesh: TriMesh, vertices: np.ndarray | None = None) -> np.ndarray:
    """Area-weighted mean of incident face normals, normalised."""
    verts = mesh.effective_vertices() if vertices is None else vertices
    fn = face_normals(verts, mesh.faces, unit=False)
    acc = np.zeros_like(verts)
    for k in range(3):
        for c in range(3):
            acc[:, c] += np.bincount(mesh.faces[:, k], weights=fn[:, c], minlength=len(verts))
    length = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(length <= 1e-300)
    if bad.size:
        raise MeshError(f"vertex {int(bad[0])} has only degenerate incident faces")
    return acc / length[:, None]


def laplacian_deltas(mesh: TriMesh, adj: MeshAdjacency, vertices: np.ndarray | None = None) -> np.ndarray:
    """delta_i = v_i - mean(neighbours of v_i) over effective vertex positions."""
    verts = mesh.effective_vertices() if vertices is None else vertices
    if len(adj.vertex_neighbors) != len(verts):
        raise MeshError("adjacency was built for a different mesh")
    return adj.laplacian_matrix() @ verts


def upsample_midpoint(mesh: TriMesh, fields=None):
    """Split each face 1 -> 4 at edge midpoints.

    Offsets and blend fields of a new vertex are the mean of the edge endpoints.
    A new vertex takes the region label of the endpoint with the lower index.
    Returns ``(mesh, fields)``; ``fields`` passes through as None when not given.
    """
    edges, face_edge = unique_edges(mesh.faces)
    n = mesh.n_vertices
    a, b = edges[:, 0], edges[:, 1]
    verts = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[a] + mesh.vertices[b])])
    offs = np.concatenate([mesh.offsets, 0.5 * (mesh.offsets[a] + mesh.offsets[b])])
    labels = np.concatenate([mesh.region_labels, mesh.region_labels[np.minimum(a, b)]])
    f = mesh.faces
    m = face_edge + n                       # m[:,k] = midpoint of edge (corner k, corner k+1)
    new_faces = np.concatenate([
        np.stack([f[:, 0], m[:, 0], m[:, 2]], 1),
        np.stack([f[:, 1], m[:, 1], m[:, 0]], 1),
        np.stack([f[:, 2], m[:, 2], m[:, 1]], 1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], 1),
    ])
    new_mesh = TriMesh(verts, new_faces, offs, labels)
    new_fields = None
    if fields is not None:
        new_fields = fields.midpoints(a, b)
    return new_mesh, new_fields


def icosahedron() -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return TriMesh(v, f)


def icosphere(subdivisions: int) -> TriMesh:
    mesh = icosahedron()
    for _ in range(subdivisions):
        mesh, _ = upsample_midpoint(mesh)
        v = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        mesh = TriMesh(v, mesh.faces)
    return mesh


def grid_mesh(nx: int, ny: int, spacing: float = 1.0) -> TriMesh:
    """Flat grid in the z = 0 plane with counter-clockwise faces (normals +z)."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], 1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            faces += [[a, a + 1, a + nx + 1], [a, a + nx + 1, a + nx]]
    return TriMesh(v, np.array(faces))


# -- OBJ --------------------------------------------------------------------

def save_obj(path, mesh: TriMesh, write_regions: bool = True) -> None:
    path = Path(path)
    verts = mesh.effective_vertices()
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in verts.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    path.write_text("\n".join(lines) + "\n")
    if write_regions:
        path.with_suffix(path.suffix + ".regions").write_text(
            "\n".join(str(int(r)) for r in mesh.region_labels) + "\n")


def load_obj(path) -> TriMesh:
    path = Path(path)
    verts, faces = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError as exc:
                raise ObjParseError(f"{path}:{lineno}: bad vertex record") from exc
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ObjParseError(f"{path}:{lineno}: only triangles are supported ({len(parts) - 1} corners)")
            try:
                idx = [int(p.split("/")[0]) for p in parts[1:]]
            except ValueError as exc:
                raise ObjParseError(f"{path}:{lineno}: malformed face record") from exc
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            faces.append(idx)
    regions_path = path.with_suffix(path.suffix + ".regions")
    labels = None
    if regions_path.exists():
        labels = np.array([int(t) for t in regions_path.read_text().split()], dtype=np.int64)
    try:
        return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3),
                       region_labels=labels)
    except MeshError as exc:
        raise ObjParseError(f"{path}: {exc}") from exc
