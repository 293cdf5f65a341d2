"""Assembly of the conforming and interior-penalty saddle-point systems.

Both schemes share the volume form

    (div s, div t) - kappa^2 [ (C^-1 s, t) + (r, t) + (q, s) ]

and the right-hand side ``(F, div t) - kappa^2 <g, t n>_Gamma`` where the
boundary term carries the nonhomogeneous Dirichlet datum.  The broken
scheme adds, on interior and Sigma faces,

    a/h_F <[s], [t]> - <{div s}, [t]> - <{div t}, [s]> ,   - <{F}, [t]>
"""
from dataclasses import dataclass, field
from functools import lru_cache
import logging

import numpy as np
import scipy.sparse as sp

from .mesh import FaceTag, reference_edge_points
from .linsolve import with_explicit_diagonal
from .quadrature import edge_rule, triangle_rule
from .spaces import SKEW, build_bdm_element, build_dofmap, dim_p, scalar_basis, shifted_legendre

log = logging.getLogger(__name__)

CHUNK_ENTRIES = 4_000_000


class AssemblyError(RuntimeError):
    pass


@dataclass(eq=False)
class SparseSystem:
    """Symmetric saddle-point system restricted to the free unknowns.

    ``matrix`` and ``rhs`` act on ``free`` (indices into the full dof
    vector); constrained unknowns are zero.  With ``storage == "upper"``
    only the upper triangle (diagonal included) is kept.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: object
    mesh: object
    free: np.ndarray
    storage: str = "full"
    metadata: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def num_stress(self):
        return self.dofmap.num_stress

    def full_matrix(self):
        if self.storage == "full":
            return self.matrix
        return (self.matrix + sp.triu(self.matrix, 1).T).tocsr()

    def upper_matrix(self):
        if self.storage == "upper":
            return self.matrix
        return sp.triu(self.matrix, format="csr")

    def matvec(self, x):
        if self.storage == "full":
            return self.matrix @ x
        return self.matrix @ x + self.matrix.T @ x - self.matrix.diagonal() * x

    def expand(self, x):
        """Full dof vector from a solution on the free unknowns."""
        full = np.zeros(self.dofmap.num_dofs)
        full[self.free] = x
        return full

    def write_matrix_market(self, path):
        from scipy.io import mmwrite

        # the symmetric format stores the lower triangle
        mmwrite(path, self.upper_matrix().T.tocoo(), symmetry="symmetric")


@dataclass(frozen=True, eq=False)
class FaceOperatorSample:
    mean: np.ndarray
    jump: np.ndarray


def eval_jump_average(traces, normals):
    """Averages and jumps of tensor traces at matched face points.

    ``traces`` is a sequence of one or two arrays of shape (npts, 2, 2)
    (first and, for interior faces, second side); ``normals`` holds the
    outward unit normal of each side's cell.  Boundary faces use the
    one-sided convention ``{t} = t``, ``[t] = t n``.
    """
    if len(traces) != len(normals) or len(traces) not in (1, 2):
        raise AssemblyError("need one or two sides with matching normals")
    traces = [np.asarray(t, dtype=float) for t in traces]
    if len(traces) == 2 and traces[0].shape != traces[1].shape:
        raise AssemblyError("trace point counts differ between sides")
    jump = sum(np.einsum("...ij,j->...i", t, np.asarray(n, dtype=float)) for t, n in zip(traces, normals))
    mean = traces[0] if len(traces) == 1 else 0.5 * (traces[0] + traces[1])
    return FaceOperatorSample(mean=mean, jump=jump)


@lru_cache(maxsize=None)
def _reference_volume(k, degree):
    el = build_bdm_element(k)
    rule = triangle_rule(degree)
    w = rule.weights
    V = el.values(rule.points)
    Dv = el.divergence(rule.points)
    psi = scalar_basis(k - 1).values(rule.points)
    M = np.einsum("q,qap,qbr->prab", w, V, V)
    Dd = np.einsum("q,qa,qb->ab", w, Dv, Dv)
    G = np.einsum("q,qc,qbp->pcb", w, psi, V)
    return M, Dd, G


def _local_volume(mesh, cells, k, params, kappa, degree):
    """Cell matrices (len(cells), 2nb+m, 2nb+m) in [row0, row1, rotation] order."""
    M, Dd, G = _reference_volume(k, degree)
    nb = Dd.shape[0]
    m = dim_p(k - 1)
    B = mesh.B[cells]
    det = mesh.det[cells]
    k2 = kappa ** 2
    BtB = np.einsum("cpi,cpj->cij", B, B)
    mass = np.einsum("cpr,prab->cab", BtB, M) / det[:, None, None]
    # trace coupling: int (N_a)_i (N_b)_j
    tr = np.einsum("cip,cjr,prab->cijab", B, B, M) / det[:, None, None, None, None]
    ct = params.trace_coefficient - 1.0 / (4.0 * params.mu)
    L = 2 * nb + m
    A = np.zeros((len(cells), L, L))
    for i in range(2):
        for j in range(2):
            blk = -k2 * ct * tr[:, i, j]
            if i == j:
                blk = blk + Dd[None] / det[:, None, None] - k2 / (2.0 * params.mu) * mass
            A[:, i * nb:(i + 1) * nb, j * nb:(j + 1) * nb] = blk
    # int psi_c (N_b)_q = sum_p B_qp G[p, c, b]
    PG = np.einsum("cqp,pnb->cqnb", B, G)
    for j in range(2):
        cpl = -k2 * np.einsum("q,cqnb->cbn", SKEW[j], PG)
        A[:, j * nb:(j + 1) * nb, 2 * nb:] = cpl
        A[:, 2 * nb:, j * nb:(j + 1) * nb] = cpl.transpose(0, 2, 1)
    return 0.5 * (A + A.transpose(0, 2, 1))


def _local_indices(dofmap, cells):
    idx = np.concatenate([dofmap.stress_dofs[cells], dofmap.rotation_dofs[cells]], axis=1)
    sgn = np.concatenate([dofmap.stress_signs[cells], np.ones_like(dofmap.rotation_dofs[cells])], axis=1)
    return idx, sgn


class _TripletSink:
    """Accumulates COO chunks into a CSR matrix with deterministic summation.

    In ``upper`` mode entries below the diagonal are dropped on arrival.
    """

    def __init__(self, n, storage="full"):
        if storage not in ("full", "upper"):
            raise AssemblyError(f"unknown storage {storage!r}")
        self.n = n
        self.upper = storage == "upper"
        self.parts = []
        self.rows, self.cols, self.vals = [], [], []
        self.pending = 0

    def add(self, rows, cols, vals):
        r = np.asarray(rows).ravel().astype(np.int32)
        c = np.asarray(cols).ravel().astype(np.int32)
        v = np.asarray(vals, dtype=float).ravel()
        if self.upper:
            keep = r <= c
            r, c, v = r[keep], c[keep], v[keep]
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(v)
        self.pending += v.size
        if self.pending > CHUNK_ENTRIES:
            self.flush()

    def flush(self):
        if not self.vals:
            return
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        self.rows, self.cols, self.vals = [], [], []
        self.pending = 0
        chunk = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        chunk.sum_duplicates()
        self.parts.append(chunk)
        # pairwise merging keeps the work near n log n
        while len(self.parts) > 1 and self.parts[-1].nnz >= 0.5 * self.parts[-2].nnz:
            top = self.parts.pop()
            self.parts[-1] = self.parts[-1] + top

    def matrix(self):
        self.flush()
        A = self.parts.pop() if self.parts else sp.csr_matrix((self.n, self.n))
        while self.parts:
            A = self.parts.pop() + A
        A = A.tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A


def _add_volume(sink, mesh, dofmap, k, params, kappa, degree):
    L = 2 * build_bdm_element(k).dim + dim_p(k - 1)
    per_chunk = max(1, CHUNK_ENTRIES // (L * L))
    for start in range(0, mesh.num_cells, per_chunk):
        cells = np.arange(start, min(start + per_chunk, mesh.num_cells))
        A = _local_volume(mesh, cells, k, params, kappa, degree)
        idx, sgn = _local_indices(dofmap, cells)
        A *= sgn[:, :, None] * sgn[:, None, :]
        sink.add(np.broadcast_to(idx[:, :, None], A.shape), np.broadcast_to(idx[:, None, :], A.shape), A)


def _face_side_data(mesh, faces, side, k, t):
    """Jump (outward normal trace) values of edge functions and divergences of all functions.

    Returns cells, edge-function local indices (nf, k+1), jump values
    (nf, nq, k+1) and physical divergences (nf, nq, nb).
    """
    el = build_bdm_element(k)
    cells = mesh.face_cells[faces, side]
    le = mesh.face_local[faces, side]
    flip = mesh.face_flip[faces, side]
    length = mesh.face_length[faces]
    det = mesh.det[cells]
    nq = len(t)
    jumps = np.empty((len(faces), nq, k + 1))
    divs = np.empty((len(faces), nq, el.dim))
    scale = 2 * np.arange(k + 1) + 1
    for e in range(3):
        for fl in (False, True):
            sel = (le == e) & (flip == fl)
            if not sel.any():
                continue
            tl = 1.0 - t if fl else t
            jumps[sel] = (shifted_legendre(tl, k) * scale)[None] / length[sel, None, None]
            ref = reference_edge_points(e, t, fl)
            divs[sel] = el.divergence(ref)[None] / det[sel, None, None]
    edge_fns = le[:, None] * (k + 1) + np.arange(k + 1)
    return cells, edge_fns, jumps, divs


def _add_dg_faces(sink, mesh, dofmap, k, a, degree):
    el = build_bdm_element(k)
    nb = el.dim
    rule = edge_rule(degree)
    t, w = rule.points[:, 0], rule.weights
    for tag, nsides in ((FaceTag.INTERIOR, 2), (FaceTag.SIGMA, 1)):
        faces = mesh.faces_with_tag(tag)
        if len(faces) == 0:
            continue
        alpha = 0.5 if nsides == 2 else 1.0
        length = mesh.face_length[faces]
        data = [_face_side_data(mesh, faces, s, k, t) for s in range(nsides)]
        for i in range(2):
            for s in range(nsides):
                cs, es, Js, _ = data[s]
                rows_e = dofmap.stress_dofs[cs[:, None], i * nb + es]  # (nf, k+1)
                sgn_e = dofmap.stress_signs[cs[:, None], i * nb + es]
                for tt in range(nsides):
                    ct, et, Jt, Dt = data[tt]
                    cols_e = dofmap.stress_dofs[ct[:, None], i * nb + et]
                    sgn_et = dofmap.stress_signs[ct[:, None], i * nb + et]
                    cols_all = dofmap.stress_dofs[ct, i * nb:(i + 1) * nb]
                    sgn_all = dofmap.stress_signs[ct, i * nb:(i + 1) * nb]
                    # a/h_F <[s],[t]> with h_F = |F| and ds = |F| dt
                    P = a * np.einsum("q,fqj,fql->fjl", w, Js, Jt)
                    P *= sgn_e[:, :, None] * sgn_et[:, None, :]
                    sink.add(np.broadcast_to(rows_e[:, :, None], P.shape),
                             np.broadcast_to(cols_e[:, None, :], P.shape), P)
                    # -<{div s}, [t]>: test edge fns of side s, trial all fns of side tt
                    C = -alpha * np.einsum("q,f,fqj,fqb->fjb", w, length, Js, Dt)
                    C *= sgn_e[:, :, None] * sgn_all[:, None, :]
                    sink.add(np.broadcast_to(rows_e[:, :, None], C.shape),
                             np.broadcast_to(cols_all[:, None, :], C.shape), C)
                    # transposed coupling -<{div t}, [s]>
                    sink.add(np.broadcast_to(cols_all[:, None, :], C.shape),
                             np.broadcast_to(rows_e[:, :, None], C.shape), C)


def _rhs(mesh, dofmap, k, solution, kappa, degree, dg_faces):
    el = build_bdm_element(k)
    nb = el.dim
    b = np.zeros(dofmap.num_dofs)
    rule = triangle_rule(degree)
    x = mesh.map_all(rule.points)
    F = solution.force(x[..., 0], x[..., 1])  # (2, nc, nq)
    Dv = el.divergence(rule.points)
    for i in range(2):
        loc = np.einsum("q,cq,qa->ca", rule.weights, F[i], Dv)
        cols = slice(i * nb, (i + 1) * nb)
        np.add.at(b, dofmap.stress_dofs[:, cols], loc * dofmap.stress_signs[:, cols])

    erule = edge_rule(degree)
    t, w = erule.points[:, 0], erule.weights
    groups = [(FaceTag.GAMMA, "dirichlet")]
    if dg_faces:
        groups += [(FaceTag.INTERIOR, "force"), (FaceTag.SIGMA, "force")]
    for tag, kind in groups:
        faces = mesh.faces_with_tag(tag)
        if len(faces) == 0:
            continue
        p = mesh.vertices[mesh.face_vertices[faces, 0]]
        q = mesh.vertices[mesh.face_vertices[faces, 1]]
        xf = p[:, None, :] + t[None, :, None] * (q - p)[:, None, :]
        if kind == "dirichlet":
            data = -kappa ** 2 * solution.dirichlet(xf[..., 0], xf[..., 1])
        else:
            data = -solution.force(xf[..., 0], xf[..., 1])
        length = mesh.face_length[faces]
        nsides = 2 if tag == FaceTag.INTERIOR else 1
        for s in range(nsides):
            cs, es, Js, _ = _face_side_data(mesh, faces, s, k, t)
            for i in range(2):
                loc = np.einsum("q,f,fq,fqj->fj", w, length, data[i], Js)
                idx = dofmap.stress_dofs[cs[:, None], i * nb + es]
                sgn = dofmap.stress_signs[cs[:, None], i * nb + es]
                np.add.at(b, idx, loc * sgn)
    return b


def _finish(sink, b, mesh, dofmap, meta):
    A = sink.matrix()
    free = np.setdiff1d(np.arange(dofmap.num_dofs), dofmap.constrained)
    if len(free) == 0:
        raise AssemblyError("all unknowns are constrained")
    if len(dofmap.constrained):
        A = A[free][:, free].tocsr()
        b = b[free]
    storage = "upper" if sink.upper else "full"
    if sink.upper:
        A = with_explicit_diagonal(A)
    return SparseSystem(matrix=A, rhs=b, dofmap=dofmap, mesh=mesh, free=free, storage=storage, metadata=meta)


def _degrees(k, quad_bump):
    return 2 * k + 2 + quad_bump, 2 * k + 6 + quad_bump


def assemble_cg(mesh, k, params, kappa, solution, quad_bump=0, storage="upper"):
    """Conforming BDM system; Sigma normal moments are eliminated."""
    if k < 1:
        raise AssemblyError("k must be >= 1")
    dofmap = build_dofmap(mesh, k, "cg")
    mdeg, rdeg = _degrees(k, quad_bump)
    sink = _TripletSink(dofmap.num_dofs, storage)
    _add_volume(sink, mesh, dofmap, k, params, kappa, mdeg)
    b = _rhs(mesh, dofmap, k, solution, kappa, rdeg, dg_faces=False)
    meta = dict(scheme="cg", k=k, n=mesh.n, kappa=kappa, a=None, lam=params.lam, mu=params.mu)
    return _finish(sink, b, mesh, dofmap, meta)


def assemble_dg(mesh, k, params, kappa, a, solution, quad_bump=0, storage="upper"):
    """Interior-penalty system on the broken space P_k^{2x2} x P_{k-1}."""
    if k < 1:
        raise AssemblyError("k must be >= 1")
    if not a > 0:
        raise AssemblyError(f"penalty parameter must be positive, got {a}")
    dofmap = build_dofmap(mesh, k, "dg")
    mdeg, rdeg = _degrees(k, quad_bump)
    sink = _TripletSink(dofmap.num_dofs, storage)
    _add_volume(sink, mesh, dofmap, k, params, kappa, mdeg)
    _add_dg_faces(sink, mesh, dofmap, k, a, mdeg)
    b = _rhs(mesh, dofmap, k, solution, kappa, rdeg, dg_faces=True)
    meta = dict(scheme="dg", k=k, n=mesh.n, kappa=kappa, a=a, lam=params.lam, mu=params.mu)
    return _finish(sink, b, mesh, dofmap, meta)


def assemble(scheme, mesh, k, params, kappa, solution, a=None, quad_bump=0, storage="upper"):
    if scheme == "cg":
        return assemble_cg(mesh, k, params, kappa, solution, quad_bump, storage)
    if scheme == "dg":
        return assemble_dg(mesh, k, params, kappa, a, solution, quad_bump, storage)
    raise AssemblyError(f"unknown scheme {scheme!r}")


def _cell_classes(mesh):
    """Representative cell per congruence class (translation only)."""
    key = np.round(mesh.B.reshape(mesh.num_cells, 4) * max(mesh.n, 1), 9)
    _, first = np.unique(key, axis=0, return_index=True)
    return np.sort(first)


def discrete_trace_ratio(mesh, k, samples=100, seed=0):
    """Largest sampled ``h_K ||v||^2_dK / ||v||^2_K`` over v in P_k.

    ``samples`` random coefficient vectors are drawn per congruence
    class of cells.  The value bounds the constant of the discrete trace
    inequality from below; the exact maximum is the top generalized
    eigenvalue returned by :func:`trace_ratio_bound`.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    for Mb, Mv in _trace_mass_pairs(mesh, k):
        c = rng.standard_normal((samples, Mv.shape[0]))
        ratio = np.einsum("si,ij,sj->s", c, Mb, c) / np.einsum("si,ij,sj->s", c, Mv, c)
        best = max(best, float(ratio.max()))
    return best


def trace_ratio_bound(mesh, k):
    """Exact supremum of the trace ratio over P_k, maximized over cells."""
    from scipy.linalg import eigh

    return max(float(eigh(Mb, Mv, eigvals_only=True)[-1]) for Mb, Mv in _trace_mass_pairs(mesh, k))


def _trace_mass_pairs(mesh, k):
    basis = scalar_basis(k)
    rule = edge_rule(2 * k)
    t = rule.points[:, 0]
    Mref = np.einsum("q,qi,qj->ij", triangle_rule(2 * k).weights, *(2 * [basis.values(triangle_rule(2 * k).points)]))
    out = []
    for cell in _cell_classes(mesh):
        v = mesh.vertices[mesh.cells[cell]]
        hK = mesh.cell_diameters[cell]
        Mb = np.zeros_like(Mref)
        for e in range(3):
            length = np.linalg.norm(v[(e + 2) % 3] - v[(e + 1) % 3])
            phi = basis.values(reference_edge_points(e, t, False))
            Mb += length * np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
        out.append((hK * Mb, mesh.det[cell] * Mref))
    return out
