"""Structured triangulations of the unit square with face connectivity.

Reference triangle has vertices (0,0), (1,0), (0,1).  Local edge ``i`` of a
cell is the edge opposite local vertex ``i``, traversed counterclockwise
from vertex ``i+1`` to vertex ``i+2``.  Each face stores its vertices as
``(min id, max id)``; that ordering is the global edge direction.
"""
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class MeshError(ValueError):
    """Raised for structurally invalid mesh requests."""


class FaceTag(IntEnum):
    INTERIOR = 0
    GAMMA = 1
    SIGMA = 2


@dataclass(frozen=True)
class CellGeometry:
    B: np.ndarray
    translation: np.ndarray
    det: float
    h: float
    normals: np.ndarray  # (3, 2) outward unit normals of local edges


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with full face connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counterclockwise
    face_vertices : (nf, 2) int array, sorted ascending
    face_cells : (nf, 2) int array; second entry -1 on boundary faces.
        The first cell is always the lower cell id.
    face_local : (nf, 2) int array, local edge index in each adjacent cell
    face_flip : (nf, 2) bool array, True if the cell's counterclockwise
        traversal of the edge runs against the global direction
    face_normal : (nf, 2) float array, unit normal pointing out of the first cell
    face_length : (nf,) float array
    face_tag : (nf,) int array of :class:`FaceTag`
    cell_faces : (nc, 3) int array of face ids per local edge
    cell_face_sign : (nc, 3) int array, +1 if the face normal is outward for this cell
    n : int, subdivisions per axis (0 for non-structured input)
    """

    vertices: np.ndarray
    cells: np.ndarray
    face_vertices: np.ndarray
    face_cells: np.ndarray
    face_local: np.ndarray
    face_flip: np.ndarray
    face_normal: np.ndarray
    face_length: np.ndarray
    face_tag: np.ndarray
    cell_faces: np.ndarray
    cell_face_sign: np.ndarray
    n: int = 0

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_faces(self):
        return len(self.face_vertices)

    @property
    def B(self):
        """Affine map Jacobians, shape (nc, 2, 2); columns are edge vectors."""
        v = self.vertices[self.cells]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)

    @property
    def det(self):
        B = self.B
        return B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]

    @property
    def cell_diameters(self):
        v = self.vertices[self.cells]
        d = [np.linalg.norm(v[:, i] - v[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(d, axis=0)

    @property
    def h_max(self):
        return float(self.cell_diameters.max())

    @property
    def interior_faces(self):
        return np.flatnonzero(self.face_tag == FaceTag.INTERIOR)

    def faces_with_tag(self, *tags):
        return np.flatnonzero(np.isin(self.face_tag, [int(t) for t in tags]))

    def map_to_physical(self, cell, ref_points):
        """Map reference points (npts, 2) into ``cell``."""
        v = self.vertices[self.cells[cell]]
        B = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return v[0] + np.asarray(ref_points) @ B.T

    def map_all(self, ref_points):
        """Physical images of reference points in every cell, shape (nc, npts, 2)."""
        v = self.vertices[self.cells]
        return v[:, None, 0, :] + np.einsum("cij,qj->cqi", self.B, ref_points)


def _outward_normals(v):
    # v: (..., 3, 2) triangle vertices; returns (..., 3, 2) for edges opposite each vertex
    out = np.empty_like(v)
    for i in range(3):
        t = v[..., (i + 2) % 3, :] - v[..., (i + 1) % 3, :]
        nrm = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        out[..., i, :] = nrm / np.linalg.norm(nrm, axis=-1, keepdims=True)
    return out


def mesh_from_cells(vertices, cells, sigma_tagging=None, n=0):
    """Build connectivity for an arbitrary counterclockwise triangulation.

    ``sigma_tagging`` is an optional predicate on a boundary face midpoint
    ``(x, y)``; faces where it returns True are tagged Sigma, all other
    boundary faces Gamma.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    v = vertices[cells]
    B = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    if np.any(det <= 0):
        raise MeshError("cells must be nondegenerate and counterclockwise")

    nc = len(cells)
    loc_a = cells[:, [1, 2, 0]]
    loc_b = cells[:, [2, 0, 1]]
    pairs = np.sort(np.stack([loc_a, loc_b], axis=2).reshape(-1, 2), axis=1)
    face_vertices, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    nf = len(face_vertices)
    cell_faces = inverse.reshape(nc, 3)

    face_cells = -np.ones((nf, 2), dtype=np.int64)
    face_local = -np.ones((nf, 2), dtype=np.int64)
    counts = np.zeros(nf, dtype=np.int64)
    # cells visited in increasing id, so slot 0 holds the lower cell id
    for flat, f in enumerate(inverse):
        c, i = divmod(flat, 3)
        if counts[f] >= 2:
            raise MeshError(f"face {f} shared by more than two cells")
        face_cells[f, counts[f]] = c
        face_local[f, counts[f]] = i
        counts[f] += 1

    normals = _outward_normals(v)
    first = face_cells[:, 0]
    face_normal = normals[first, face_local[:, 0]]
    p, q = vertices[face_vertices[:, 0]], vertices[face_vertices[:, 1]]
    face_length = np.linalg.norm(q - p, axis=1)

    face_flip = np.zeros((nf, 2), dtype=bool)
    for s in range(2):
        has = face_cells[:, s] >= 0
        c, i = face_cells[has, s], face_local[has, s]
        start = cells[c, (i + 1) % 3]
        face_flip[has, s] = start != face_vertices[has, 0]

    face_tag = np.full(nf, int(FaceTag.INTERIOR), dtype=np.int64)
    boundary = face_cells[:, 1] < 0
    face_tag[boundary] = int(FaceTag.GAMMA)
    if sigma_tagging is not None:
        mid = 0.5 * (p + q)
        for f in np.flatnonzero(boundary):
            if sigma_tagging(*mid[f]):
                face_tag[f] = int(FaceTag.SIGMA)

    cell_face_sign = np.where(face_cells[cell_faces, 0] == np.arange(nc)[:, None], 1, -1)

    return Mesh(
        vertices=vertices,
        cells=cells,
        face_vertices=face_vertices,
        face_cells=face_cells,
        face_local=face_local,
        face_flip=face_flip,
        face_normal=face_normal,
        face_length=face_length,
        face_tag=face_tag,
        cell_faces=cell_faces,
        cell_face_sign=cell_face_sign,
        n=n,
    )


def build_structured_mesh(n, sigma_tagging=None):
    """Uniform ``n x n`` mesh of the unit square, ``2 n^2`` triangles.

    Every square is split along its lower-left to upper-right diagonal.
    By default the whole boundary is tagged Gamma.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v00 = (j * (n + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return mesh_from_cells(vertices, cells, sigma_tagging=sigma_tagging, n=n)


def axis_sigma(side):
    """Tagging rule putting one side of the unit square in Sigma.

    ``side`` is one of ``"left"``, ``"right"``, ``"bottom"``, ``"top"``.
    """
    tests = {
        "left": lambda x, y: np.isclose(x, 0.0),
        "right": lambda x, y: np.isclose(x, 1.0),
        "bottom": lambda x, y: np.isclose(y, 0.0),
        "top": lambda x, y: np.isclose(y, 1.0),
    }
    try:
        return tests[side]
    except KeyError:
        raise MeshError(f"unknown side {side!r}") from None


def cell_geometry(mesh, cell):
    v = mesh.vertices[mesh.cells[cell]]
    B = np.column_stack([v[1] - v[0], v[2] - v[0]])
    det = float(np.linalg.det(B))
    if abs(det) < 1e-300:
        raise MeshError(f"cell {cell} is degenerate")
    h = max(np.linalg.norm(v[a] - v[b]) for a, b in ((0, 1), (1, 2), (2, 0)))
    return CellGeometry(B=B, translation=v[0].copy(), det=det, h=float(h), normals=_outward_normals(v))


REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def reference_edge_points(local_edge, t, flip=False):
    """Reference coordinates of edge parameters ``t`` in [0, 1].

    The unflipped parameter runs counterclockwise from vertex
    ``local_edge+1`` to ``local_edge+2``.
    """
    t = np.asarray(t, dtype=float)
    if flip:
        t = 1.0 - t
    a = REF_VERTICES[(local_edge + 1) % 3]
    b = REF_VERTICES[(local_edge + 2) % 3]
    return a + t[:, None] * (b - a)


def face_quadrature_trace(mesh, face, side, t):
    """Reference coordinates in an adjacent cell of edge parameters ``t``.

    ``t`` runs along the global face direction (lower vertex id to higher),
    so both sides of an interior face return the same physical points.
    ``side`` is 0 (first cell) or 1 (second cell).
    """
    if side not in (0, 1):
        raise MeshError(f"side must be 0 or 1, got {side!r}")
    if mesh.face_cells[face, side] < 0:
        raise MeshError(f"face {face} has no second side (boundary face)")
    return reference_edge_points(mesh.face_local[face, side], t, mesh.face_flip[face, side])


def write_mesh_text(mesh, path):
    """Plain-text dump: vertices, cells, faces (v0 v1 tag), with counts."""
    with open(path, "w") as fh:
        fh.write(f"{len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"{mesh.num_cells}\n")
        for a, b, c in mesh.cells:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"{mesh.num_faces}\n")
        for (a, b), tag in zip(mesh.face_vertices, mesh.face_tag):
            fh.write(f"{a} {b} {FaceTag(tag).name}\n")
