"""Relative errors in the H(div), broken W(h) and L2 norms, and convergence rates."""
from dataclasses import dataclass, field
import math

import numpy as np

from .mesh import FaceTag, reference_edge_points
from .quadrature import edge_rule, triangle_rule
from .spaces import build_bdm_element, evaluate_scalar, evaluate_stress, scalar_basis


class RateError(ValueError):
    pass


@dataclass
class ErrorReport:
    """Absolute error parts and the relative errors built from them."""

    sigma_l2: float
    div_l2: float
    jump: float
    rotation_l2: float
    sigma_norm_hdiv: float
    rotation_norm: float
    metadata: dict = field(default_factory=dict)

    @property
    def e_sigma_hdiv(self):
        return math.hypot(self.sigma_l2, self.div_l2) / self.sigma_norm_hdiv

    @property
    def e_sigma_dg(self):
        return math.sqrt(self.sigma_l2 ** 2 + self.div_l2 ** 2 + self.jump ** 2) / self.sigma_norm_hdiv

    @property
    def e_rotation(self):
        return self.rotation_l2 / self.rotation_norm

    def e_sigma(self, scheme):
        return self.e_sigma_dg if scheme == "dg" else self.e_sigma_hdiv


def _volume_parts(solution, exact, degree):
    mesh = solution.mesh
    k = solution.k
    rule = triangle_rule(degree)
    x = mesh.map_all(rule.points)
    X, Y = x[..., 0], x[..., 1]
    s_loc, r_loc = solution.local()
    sig_h, div_h = evaluate_stress(mesh, k, s_loc, rule.points)
    sig = np.moveaxis(exact.sigma(X, Y), (0, 1), (2, 3))
    div = np.moveaxis(exact.div_sigma(X, Y), 0, 2)
    rot = exact.rotation(X, Y)
    rot_h = evaluate_scalar(r_loc, k - 1, rule.points)
    wd = rule.weights[None, :] * mesh.det[:, None]

    def norm(v, axes):
        return math.sqrt(float(np.sum(wd * np.sum(v ** 2, axis=axes))))

    return dict(
        sigma_l2=norm(sig - sig_h, (2, 3)),
        div_l2=norm(div - div_h, (2,)),
        rotation_l2=math.sqrt(float(np.sum(wd * (rot - rot_h) ** 2))),
        sigma_norm_hdiv=math.hypot(norm(sig, (2, 3)), norm(div, (2,))),
        # the tensor norm of the rotation is sqrt(2) times the scalar one; ratios agree
        rotation_norm=math.sqrt(float(np.sum(wd * rot ** 2))),
    )


def stress_traces(mesh, k, stress_local, faces, side, t):
    """Stress values (nf, nq, 2, 2) on ``faces`` seen from ``side`` at global parameters ``t``."""
    el = build_bdm_element(k)
    cells = mesh.face_cells[faces, side]
    le = mesh.face_local[faces, side]
    flip = mesh.face_flip[faces, side]
    out = np.empty((len(faces), len(t), 2, 2))
    B = mesh.B[cells]
    det = mesh.det[cells]
    for e in range(3):
        for fl in (False, True):
            sel = (le == e) & (flip == fl)
            if not sel.any():
                continue
            V = el.values(reference_edge_points(e, t, fl))
            rows = np.einsum("fia,pad->fipd", stress_local[cells[sel]], V)
            out[sel] = np.einsum("fjd,fipd->fpij", B[sel], rows) / det[sel, None, None, None]
    return out


def jump_seminorm(mesh, k, stress_local, degree):
    """sqrt(sum over interior and Sigma faces of h_F^-1 ||[s]||^2_F)."""
    rule = edge_rule(degree)
    t, w = rule.points[:, 0], rule.weights
    total = 0.0
    for tag, nsides in ((FaceTag.INTERIOR, 2), (FaceTag.SIGMA, 1)):
        faces = mesh.faces_with_tag(tag)
        if len(faces) == 0:
            continue
        n = mesh.face_normal[faces]
        jump = np.einsum("fqij,fj->fqi", stress_traces(mesh, k, stress_local, faces, 0, t), n)
        if nsides == 2:
            jump -= np.einsum("fqij,fj->fqi", stress_traces(mesh, k, stress_local, faces, 1, t), n)
        # h_F^-1 * |F| * sum_q w_q |jump|^2 with h_F = |F|
        total += float(np.sum(w[None, :] * np.sum(jump ** 2, axis=2)))
    return math.sqrt(total)


def compute_errors(solution, exact, quad_bump=0):
    """All error parts; jump part is the broken-norm contribution of sigma_h."""
    k = solution.k
    degree = 2 * k + 6 + quad_bump
    parts = _volume_parts(solution, exact, degree)
    s_loc, _ = solution.local()
    parts["jump"] = jump_seminorm(solution.mesh, k, s_loc, degree)
    return ErrorReport(**parts)


def error_hdiv(solution, exact, quad_bump=0):
    return compute_errors(solution, exact, quad_bump).e_sigma_hdiv


def error_dg(solution, exact, quad_bump=0):
    return compute_errors(solution, exact, quad_bump).e_sigma_dg


def error_rotation(solution, exact, quad_bump=0):
    return compute_errors(solution, exact, quad_bump).e_rotation


def lagrange_nodes(degree):
    """Equispaced nodes of degree ``degree`` on the reference triangle (centroid for 0)."""
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    return np.array([(i / degree, j / degree) for j in range(degree + 1) for i in range(degree + 1 - j)])


def rotation_interpolant_error(solution, exact, quad_bump=0):
    """Diagnostic ``||I_h r - r_h|| / ||I_h r||`` with I_h the nodal P_{k-1} interpolant.

    Not one of the reported errors: it measures the discrete rotation
    against a nodal interpolant of the exact one instead of the exact
    field itself, which is what FEniCS-style error evaluation after
    interpolating the exact solution into the discrete space computes.
    """
    mesh = solution.mesh
    deg = solution.k - 1
    nodes = lagrange_nodes(deg)
    x = mesh.map_all(nodes)
    V = scalar_basis(deg).values(nodes)
    coef = np.linalg.solve(V, exact.rotation(x[..., 0], x[..., 1]).T).T
    _, r_loc = solution.local()
    rule = triangle_rule(2 * solution.k + 6 + quad_bump)
    ri = evaluate_scalar(coef, deg, rule.points)
    rh = evaluate_scalar(r_loc, deg, rule.points)
    wd = rule.weights[None, :] * mesh.det[:, None]
    return math.sqrt(float(np.sum(wd * (ri - rh) ** 2)) / float(np.sum(wd * ri ** 2)))


@dataclass
class RateTable:
    """Rows ``(1/h, error, rate)``; rate is None where undefined."""

    rows: list

    @property
    def rates(self):
        return [r[2] for r in self.rows]


def rate(e, e_hat, h, h_hat):
    """Experimental order log(e / e_hat) / log(h / h_hat)."""
    return math.log(e / e_hat) / math.log(h / h_hat)


def convergence_rates(errors):
    """Rates for consecutive ``(h, error)`` pairs with strictly decreasing h.

    A None error marks a failed data point; the rate after it is None too.
    """
    errors = list(errors)
    if len(errors) < 2:
        raise RateError("need at least two (h, error) rows")
    hs = [h for h, _ in errors]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise RateError("mesh sizes must be strictly decreasing")
    rows = []
    prev = None
    for h, e in errors:
        if e is not None and not e > 0:
            raise RateError(f"errors must be positive, got {e}")
        r = None
        if prev is not None and prev[1] is not None and e is not None:
            r = rate(e, prev[1], h, prev[0])
        rows.append((1.0 / h, e, r))
        prev = (h, e)
    return RateTable(rows)
