"""Gauss rules on the reference triangle and the unit interval.

The triangle rules are collapsed (Duffy) tensor products of a Gauss-Jacobi
rule with weight ``(1 - eta)`` and a Gauss-Legendre rule, so any degree is
available and exactness follows from the 1D rules.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 60


class QuadratureError(ValueError):
    """Raised for an unsupported quadrature degree."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points and positive weights on a reference domain.

    ``points`` has shape ``(npts, dim)``; for the edge rule ``dim == 1``.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)

    def integrate(self, f):
        """Apply the rule to ``f``, called with one coordinate array per axis."""
        vals = f(*self.points.T)
        return np.tensordot(self.weights, vals, axes=(0, 0))


def _check_degree(degree):
    if not isinstance(degree, (int, np.integer)) or degree < 0:
        raise QuadratureError(f"quadrature degree must be a nonnegative integer, got {degree!r}")
    if degree > MAX_DEGREE:
        raise QuadratureError(f"quadrature degree {degree} exceeds supported maximum {MAX_DEGREE}")


@lru_cache(maxsize=None)
def edge_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    _check_degree(degree)
    m = degree // 2 + 1
    x, w = roots_legendre(m)
    pts = 0.5 * (x + 1.0)
    pts.setflags(write=False)
    wts = 0.5 * w
    wts.setflags(write=False)
    return QuadratureRule(pts[:, None], wts, 2 * m - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    With ``m`` points per direction the rule is exact to degree ``2m - 1``.
    """
    _check_degree(degree)
    m = degree // 2 + 1
    xi, wxi = roots_legendre(m)
    eta, weta = roots_jacobi(m, 1.0, 0.0)
    y = 0.5 * (1.0 + eta)
    X = 0.25 * np.outer(1.0 - eta, 1.0 + xi)
    Y = np.repeat(y[:, None], m, axis=1)
    W = np.outer(weta, wxi) / 8.0
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = W.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * m - 1)
