"""Triangle mesh container and topology utilities."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class TriangleMesh:
    """Indexed triangle mesh.

    Attributes:
        vertices: (V, 3) float positions.
        triangles: (F, 3) int vertex indices, no repeated index per face.
        vertex_normals: optional (V, 3).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise InvalidInputError("triangle indices out of range")
            degenerate = (
                (self.triangles[:, 0] == self.triangles[:, 1])
                | (self.triangles[:, 1] == self.triangles[:, 2])
                | (self.triangles[:, 0] == self.triangles[:, 2])
            )
            if degenerate.any():
                raise InvalidInputError("mesh contains degenerate triangles")

    def __len__(self):
        return len(self.triangles)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the triangle winding."""
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norms, 1e-300)

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def undirected_edges(triangles: np.ndarray) -> np.ndarray:
    """(E, 2) unique sorted vertex pairs over all triangle edges."""
    e = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def edge_face_counts(triangles: np.ndarray) -> np.ndarray:
    """How many faces share each unique undirected edge."""
    e = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    e = np.sort(e, axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def is_closed_manifold(mesh: TriangleMesh) -> bool:
    """Every edge shared by exactly two triangles."""
    if len(mesh) == 0:
        return False
    return bool(np.all(edge_face_counts(mesh.triangles) == 2))


def euler_characteristic(mesh: TriangleMesh) -> int:
    v = len(np.unique(mesh.triangles))
    e = len(undirected_edges(mesh.triangles))
    f = len(mesh.triangles)
    return v - e + f


def largest_component(mesh: TriangleMesh) -> TriangleMesh:
    """Keep the connected component (by shared vertices) with most faces."""
    if len(mesh) == 0:
        return mesh
    parent = np.arange(len(mesh.vertices))

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for tri in mesh.triangles:
        a = find(tri[0])
        for b in (tri[1], tri[2]):
            rb = find(b)
            if rb != a:
                parent[rb] = a
    roots = np.array([find(v) for v in mesh.triangles[:, 0]])
    unique, counts = np.unique(roots, return_counts=True)
    keep_root = unique[np.argmax(counts)]
    keep_faces = mesh.triangles[roots == keep_root]
    used = np.unique(keep_faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(
        vertices=mesh.vertices[used],
        triangles=remap[keep_faces],
        vertex_normals=mesh.vertex_normals[used] if mesh.vertex_normals is not None else None,
    )


def remove_degenerate_faces(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Drop faces with repeated vertex indices or (near-)zero area."""
    tri = np.asarray(triangles, dtype=np.int64)
    distinct = (
        (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])
    )
    tri = tri[distinct]
    v = np.asarray(vertices)[tri]
    areas = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    return tri[areas > 1e-300]
