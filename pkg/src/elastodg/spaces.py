"""Reference bases, degree-of-freedom maps and projections.

Stress tensors are handled row by row: each row is a vector field in the
BDM space of degree ``k`` on every cell, mapped with the contravariant
Piola transform ``v(F(x)) = B v_hat(x) / det B``.  The conforming space
shares edge degrees of freedom between neighbours; the broken space uses
the same local functions without sharing, which spans all of P_k^{2x2}.

Rotations are scalars ``rho`` in P_{k-1} with tensor ``rho * SKEW``.
"""
from dataclasses import dataclass
from functools import lru_cache
import logging

import numpy as np
from numpy.polynomial import legendre
from scipy.special import eval_jacobi

from .mesh import REF_VERTICES
from .quadrature import edge_rule, triangle_rule

log = logging.getLogger(__name__)

SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])

# outward normals and lengths of the reference edges (edge i opposite vertex i)
_REF_EDGE_LENGTH = np.array([np.sqrt(2.0), 1.0, 1.0])
_REF_EDGE_NORMAL = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]) / np.array([np.sqrt(2.0), 1.0, 1.0])[:, None]


class ElementError(RuntimeError):
    pass


def dim_p(k):
    """Dimension of P_k in two variables (0 for negative k)."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def shifted_legendre(t, k):
    """P_j(2t - 1) for j = 0..k, shape (len(t), k+1)."""
    return legendre.legvander(2.0 * np.asarray(t) - 1.0, k)


class ScalarBasis:
    """Orthonormal Dubiner basis of P_k on the reference triangle.

    ``psi_pq = Q_p(x, y) * P_q^(2p+1, 0)(2y - 1)`` with the scaled Legendre
    polynomial ``Q_p = (1-y)^p P_p((2x + y - 1) / (1 - y))``, ordered by
    total degree so the first ``dim_p(m)`` functions span P_m.  A final
    Cholesky pass on the (diagonal) Gram matrix fixes the normalization.
    """

    def __init__(self, k):
        if k < 0:
            raise ElementError(f"degree must be >= 0, got {k}")
        self.k = k
        self.dim = dim_p(k)
        self.exponents = [(d - j, j) for d in range(k + 1) for j in range(d + 1)]
        rule = triangle_rule(2 * k)
        P = self._raw(rule.points)[0]
        G = P.T @ (rule.weights[:, None] * P)
        self.gram_condition = float(np.linalg.cond(G))
        log.debug("P_%d raw Gram condition %.3e", k, self.gram_condition)
        L = np.linalg.cholesky(G)
        self._T = np.linalg.inv(L).T  # raw @ T is orthonormal

    def _raw(self, pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        k = self.k
        npts = len(x)
        # scaled Legendre Q_p and its gradient by the three-term recurrence
        Q = np.zeros((k + 1, npts))
        Qx = np.zeros_like(Q)
        Qy = np.zeros_like(Q)
        Q[0] = 1.0
        if k >= 1:
            Q[1] = 2.0 * x + y - 1.0
            Qx[1] = 2.0
            Qy[1] = 1.0
        s = 2.0 * x + y - 1.0
        w = (1.0 - y) ** 2
        for p in range(1, k):
            a, b = (2 * p + 1) / (p + 1), p / (p + 1)
            Q[p + 1] = a * s * Q[p] - b * w * Q[p - 1]
            Qx[p + 1] = a * (2.0 * Q[p] + s * Qx[p]) - b * w * Qx[p - 1]
            Qy[p + 1] = a * (Q[p] + s * Qy[p]) - b * (w * Qy[p - 1] - 2.0 * (1.0 - y) * Q[p - 1])
        val = np.empty((npts, self.dim))
        grad = np.empty((npts, self.dim, 2))
        t = 2.0 * y - 1.0
        for idx, (p, q) in enumerate(self.exponents):
            J = eval_jacobi(q, 2 * p + 1, 0, t)
            dJ = 0.0 if q == 0 else (q + 2 * p + 2) * eval_jacobi(q - 1, 2 * p + 2, 1, t)
            val[:, idx] = Q[p] * J
            grad[:, idx, 0] = Qx[p] * J
            grad[:, idx, 1] = Qy[p] * J + Q[p] * dJ
        return val, grad

    def values(self, pts):
        """Shape (npts, dim)."""
        return self._raw(pts)[0] @ self._T

    def gradients(self, pts):
        """Shape (npts, dim, 2), reference gradients."""
        g = self._raw(pts)[1]
        return np.einsum("pad,ab->pbd", g, self._T)


@lru_cache(maxsize=None)
def scalar_basis(k):
    return ScalarBasis(k)


def _nedelec_interior_basis(k, pts):
    """Basis of N_{k-1} = P_{k-2}^2 + x^perp P~_{k-2} at ``pts``, shape (npts, nw, 2).

    The x^perp part uses the top-degree orthonormal functions about the
    reference centroid; the span is unchanged because x^perp P_{k-3} lies
    in P_{k-2}^2 and P_{k-2}^2 is translation invariant.
    """
    if k < 2:
        return np.zeros((len(pts), 0, 2))
    sb = scalar_basis(k - 2)
    phi = sb.values(pts)
    zero = np.zeros_like(phi)
    parts = [np.stack([phi, zero], axis=-1), np.stack([zero, phi], axis=-1)]
    xc = pts - 1.0 / 3.0
    perp = np.stack([-xc[:, 1], xc[:, 0]], axis=-1)
    top = phi[:, dim_p(k - 3):]  # degree exactly k-2 modulo P_{k-3}
    parts.append(top[:, :, None] * perp[:, None, :])
    return np.concatenate(parts, axis=1)


class BdmElement:
    """Nodal BDM_k element on the reference triangle.

    Local function ``e*(k+1) + j`` is dual to the normal moment of edge
    ``e`` against ``P_j(2t-1)`` (t counterclockwise along the edge, unit
    length measure ``ds``); the remaining functions are dual to moments
    against N_{k-1}.  On edge ``e`` the normal trace of function
    ``e*(k+1)+j`` is ``(2j+1) P_j(2t-1) / |e|`` and every other function
    has zero normal trace.
    """

    def __init__(self, k):
        if k < 1:
            raise ElementError(f"BDM degree must be >= 1, got {k}")
        self.k = k
        self.scalar = scalar_basis(k)
        nk = self.scalar.dim
        self.dim = 2 * nk
        self.num_edge_dofs = k + 1
        self.num_interior = self.dim - 3 * (k + 1)

        D = np.empty((self.dim, self.dim))
        erule = edge_rule(2 * k)
        t = erule.points[:, 0]
        L = shifted_legendre(t, k)
        for e in range(3):
            p = REF_VERTICES[(e + 1) % 3] + t[:, None] * (REF_VERTICES[(e + 2) % 3] - REF_VERTICES[(e + 1) % 3])
            vn = self._prime_values(p) @ _REF_EDGE_NORMAL[e]  # (nq, nb)
            D[e * (k + 1):(e + 1) * (k + 1)] = _REF_EDGE_LENGTH[e] * (L * erule.weights[:, None]).T @ vn
        trule = triangle_rule(2 * k)
        W = _nedelec_interior_basis(k, trule.points)
        if W.shape[1] != self.num_interior:
            raise ElementError("interior moment space has wrong dimension")
        V = self._prime_values(trule.points)
        D[3 * (k + 1):] = np.einsum("q,qwd,qbd->wb", trule.weights, W, V)
        self.dof_condition = float(np.linalg.cond(D))
        if not np.isfinite(self.dof_condition) or self.dof_condition > 1e12:
            raise ElementError(f"BDM_{k} degrees of freedom are not unisolvent (cond {self.dof_condition:.2e})")
        # nodal function a = sum_b C[a, b] prime_b with D C^T = I
        self.coeffs = np.linalg.solve(D.T, np.eye(self.dim))
        self._dof_matrix = D

    def edge_dofs(self, e):
        return np.arange(e * (self.k + 1), (e + 1) * (self.k + 1))

    def _prime_values(self, pts):
        phi = self.scalar.values(pts)
        z = np.zeros_like(phi)
        return np.concatenate([np.stack([phi, z], -1), np.stack([z, phi], -1)], axis=1)

    def values(self, pts):
        """Reference shape function values, shape (npts, dim, 2)."""
        return np.einsum("ab,pbd->pad", self.coeffs, self._prime_values(pts))

    def divergence(self, pts):
        """Reference divergences, shape (npts, dim)."""
        g = self.scalar.gradients(pts)
        nk = self.scalar.dim
        div_prime = np.concatenate([g[:, :, 0], g[:, :, 1]], axis=1)
        assert div_prime.shape[1] == 2 * nk
        return div_prime @ self.coeffs.T

    def dof_matrix(self):
        """Functionals applied to the nodal basis (identity up to roundoff)."""
        return self.coeffs @ self._dof_matrix.T

    def normal_trace(self, e, t):
        """Reference normal traces on edge ``e`` at ccw parameters ``t``, shape (npts, dim).

        Uses the closed form of the nodal basis; entries of functions not
        attached to ``e`` are exactly zero.
        """
        out = np.zeros((len(t), self.dim))
        out[:, self.edge_dofs(e)] = shifted_legendre(t, self.k) * (2 * np.arange(self.k + 1) + 1) / _REF_EDGE_LENGTH[e]
        return out


@lru_cache(maxsize=None)
def build_bdm_element(k):
    return BdmElement(k)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of stress and rotation unknowns.

    ``stress_dofs[c, i*nb + a]`` is the global index of local BDM function
    ``a`` in stress row ``i`` on cell ``c``; ``stress_signs`` holds the
    matching orientation sign (all +1 for the broken space).  Stress
    unknowns come first, rotations after.
    """

    scheme: str
    k: int
    stress_dofs: np.ndarray
    stress_signs: np.ndarray
    rotation_dofs: np.ndarray
    num_stress: int
    num_rotation: int
    constrained: np.ndarray

    @property
    def num_dofs(self):
        return self.num_stress + self.num_rotation


def cell_edge_flip(mesh):
    """(nc, 3) bool: local ccw traversal opposes the global face direction."""
    start = mesh.cells[:, [1, 2, 0]]
    return start != mesh.face_vertices[mesh.cell_faces, 0]


def build_dofmap(mesh, k, scheme):
    from .mesh import FaceTag

    scheme = scheme.lower()
    el = build_bdm_element(k)
    nb = el.dim
    nc = mesh.num_cells
    m = dim_p(k - 1)
    if scheme == "dg":
        stress = np.arange(nc * 2 * nb).reshape(nc, 2 * nb)
        signs = np.ones_like(stress)
        n_stress = nc * 2 * nb
        constrained = np.zeros(0, dtype=np.int64)
    elif scheme == "cg":
        ke = k + 1
        per_row = mesh.num_faces * ke + nc * el.num_interior
        j = np.arange(ke)
        edge_gid = (mesh.cell_faces[:, :, None] * ke + j).reshape(nc, 3 * ke)
        flip = cell_edge_flip(mesh)
        parity = np.where(flip[:, :, None] & (j % 2 == 1), -1, 1)
        edge_sign = (mesh.cell_face_sign[:, :, None] * parity).reshape(nc, 3 * ke)
        int_gid = mesh.num_faces * ke + np.arange(nc * el.num_interior).reshape(nc, el.num_interior)
        row = np.concatenate([edge_gid, int_gid], axis=1)
        row_sign = np.concatenate([edge_sign, np.ones_like(int_gid)], axis=1)
        stress = np.concatenate([row, row + per_row], axis=1)
        signs = np.concatenate([row_sign, row_sign], axis=1)
        n_stress = 2 * per_row
        sig_faces = mesh.faces_with_tag(FaceTag.SIGMA)
        e = (sig_faces[:, None] * ke + j).ravel()
        constrained = np.sort(np.concatenate([e, e + per_row]))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    rot = n_stress + np.arange(nc * m).reshape(nc, m)
    return DofMap(scheme, k, stress, signs, rot, n_stress, nc * m, constrained)


def local_coefficients(dofmap, x):
    """Per-cell stress coefficients (nc, 2, nb) and rotation coefficients (nc, m)."""
    nc = dofmap.stress_dofs.shape[0]
    s = (x[dofmap.stress_dofs] * dofmap.stress_signs).reshape(nc, 2, -1)
    return s, x[dofmap.rotation_dofs]


def bdm_interpolate_local(mesh, k, v, quad_degree=None):
    """Local BDM interpolant of a vector field ``v(x, y) -> (2, ...)`` per cell.

    Returns (nc, nb) coefficients: the cell's own edge normal moments and
    interior N_{k-1} moments of ``v``.  For a field with continuous normal
    traces neighbouring cells agree on shared edge moments.
    """
    el = build_bdm_element(k)
    q = quad_degree if quad_degree is not None else 2 * k + 6
    erule = edge_rule(q)
    t = erule.points[:, 0]
    L = shifted_legendre(t, k) * erule.weights[:, None]
    nc = mesh.num_cells
    B = mesh.B
    det = mesh.det
    out = np.empty((nc, el.dim))
    v0 = mesh.vertices[mesh.cells[:, 0]]
    for e in range(3):
        ref = REF_VERTICES[(e + 1) % 3] + t[:, None] * (REF_VERTICES[(e + 2) % 3] - REF_VERTICES[(e + 1) % 3])
        x = v0[:, None, :] + np.einsum("cij,qj->cqi", B, ref)
        vals = np.asarray(v(x[..., 0], x[..., 1]))  # (2, nc, nq)
        # v.n_K ds = v . (cof(B) n_hat) |e_hat| dt
        cof = det[:, None, None] * np.linalg.inv(B).transpose(0, 2, 1)
        nphys = np.einsum("cij,j->ci", cof, _REF_EDGE_NORMAL[e]) * _REF_EDGE_LENGTH[e]
        flux = np.einsum("icq,ci->cq", vals, nphys)
        out[:, el.edge_dofs(e)] = flux @ L
    if el.num_interior:
        trule = triangle_rule(q)
        x = mesh.map_all(trule.points)
        vals = np.asarray(v(x[..., 0], x[..., 1]))
        W = _nedelec_interior_basis(k, trule.points)  # reference covariant fields
        # int_K v . B^{-T} w_hat dx = det * sum_q w_q v . B^{-T} w_hat
        Binv = np.linalg.inv(B)
        wphys = np.einsum("cji,qwj->cqwi", Binv, W)
        mom = np.einsum("q,icq,cqwi->cw", trule.weights, vals, wphys) * det[:, None]
        # nodal basis is dual to the moments against the chosen N_{k-1} basis
        out[:, 3 * (k + 1):] = mom
    return out


def bdm_interpolate(mesh, k, v, dofmap=None, quad_degree=None):
    """Global interpolant of a vector field into the conforming BDM space.

    With ``dofmap`` (a CG map) returns the global coefficient vector for
    a single row; otherwise per-cell local coefficients.
    """
    local = bdm_interpolate_local(mesh, k, v, quad_degree)
    if dofmap is None:
        return local
    nb = local.shape[1]
    g = np.zeros(dofmap.num_stress // 2)
    g[dofmap.stress_dofs[:, :nb]] = local * dofmap.stress_signs[:, :nb]
    return g


def interpolate_stress(mesh, k, sigma, dofmap):
    """Row-wise BDM interpolant of a tensor field into a stress coefficient vector.

    ``sigma(x, y)`` returns shape (2, 2, ...).  Works for either scheme;
    for CG the shared edge values come from the last cell written, which
    is consistent for fields with continuous normal traces.
    """
    nb = build_bdm_element(k).dim
    x = np.zeros(dofmap.num_dofs)
    for i in range(2):
        local = bdm_interpolate_local(mesh, k, lambda X, Y, i=i: np.asarray(sigma(X, Y))[i])
        cols = slice(i * nb, (i + 1) * nb)
        x[dofmap.stress_dofs[:, cols]] = local * dofmap.stress_signs[:, cols]
    return x


def l2_project_scalar(mesh, degree, f, quad_degree=None):
    """Cellwise L2 projection onto P_degree; returns (nc, dim) coefficients.

    The orthonormal reference basis makes the physical mass matrix
    ``det B * I``, so coefficients are plain moments.
    """
    sb = scalar_basis(degree)
    rule = triangle_rule(quad_degree if quad_degree is not None else 2 * degree + 8)
    x = mesh.map_all(rule.points)
    fv = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
    fv = np.broadcast_to(fv, x.shape[:2])
    return np.einsum("q,cq,qa->ca", rule.weights, fv, sb.values(rule.points))


def l2_project_rotation(mesh, k, r, quad_degree=None):
    """Projection of the scalar rotation onto P_{k-1}, flattened like the rotation dofs."""
    return l2_project_scalar(mesh, k - 1, r, quad_degree).ravel()


def evaluate_scalar(coeffs, degree, ref_points):
    """Values (nc, npts) of cellwise P_degree coefficients."""
    return coeffs @ scalar_basis(degree).values(ref_points).T


def evaluate_stress(mesh, k, stress_local, ref_points):
    """Physical stress values (nc, npts, 2, 2) and divergences (nc, npts, 2)."""
    el = build_bdm_element(k)
    V = el.values(ref_points)  # (p, nb, 2)
    Dv = el.divergence(ref_points)  # (p, nb)
    B = mesh.B
    det = mesh.det
    ref_rows = np.einsum("cia,pad->cipd", stress_local, V)
    sig = np.einsum("cjd,cipd->cpij", B, ref_rows) / det[:, None, None, None]
    div = np.einsum("cia,pa->cpi", stress_local, Dv) / det[:, None, None]
    return sig, div
