"""Isotropic material law and manufactured solutions in 2D.

Tensors carry their two indices first: arrays of shape ``(2, 2, ...)``
broadcast over evaluation points.  ``grad u`` is ``G[i, j] = d u_i / d x_j``
and the divergence of a tensor acts row-wise.
"""
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LameParams:
    lam: float
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ModelError(f"mu must be positive, got {self.mu}")
        if not 2 * self.lam + 2 * self.mu > 0:
            raise ModelError("lambda + mu must be positive")

    @property
    def trace_coefficient(self):
        """Coefficient of (tr s)(tr t) in the plane-strain compliance form."""
        return 1.0 / (2.0 * (2.0 * self.lam + 2.0 * self.mu))


def lame_from_poisson(E, nu):
    """Lame constants from Young's modulus and Poisson ratio."""
    if not E > 0:
        raise ModelError(f"E must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ModelError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    return LameParams(E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu)))


def _trace(t):
    return t[0, 0] + t[1, 1]


def elasticity_apply(params, eps):
    """C eps = lambda tr(eps) I + 2 mu eps for tensors of shape (2, 2, ...)."""
    eps = np.asarray(eps, dtype=float)
    out = 2.0 * params.mu * eps
    tr = _trace(eps)
    out[0, 0] += params.lam * tr
    out[1, 1] += params.lam * tr
    return out


def compliance_apply(params, tau):
    """Inverse of :func:`elasticity_apply`.

    ``C^-1 tau = tau^D / (2 mu) + tr(tau) I / (2 (2 lambda + 2 mu))`` with
    the 2D deviator ``tau^D = tau - tr(tau) I / 2``.
    """
    tau = np.asarray(tau, dtype=float)
    tr = _trace(tau)
    out = tau / (2.0 * params.mu)
    shift = (params.trace_coefficient - 1.0 / (4.0 * params.mu)) * tr
    out = out.copy()
    out[0, 0] += shift
    out[1, 1] += shift
    return out


class Displacement:
    """A displacement field with closed-form first and second derivatives."""

    def u(self, x, y):
        raise NotImplementedError

    def grad(self, x, y):
        raise NotImplementedError

    def hess(self, x, y):
        """H[i, j, l] = d^2 u_i / dx_j dx_l."""
        raise NotImplementedError


class TrigDisplacement(Displacement):
    """u = (-y sin(k pi x), pi y cos(k pi x) / 2)."""

    def __init__(self, kappa):
        self.kappa = kappa
        self.w = kappa * np.pi

    def u(self, x, y):
        s, c = np.sin(self.w * x), np.cos(self.w * x)
        return np.array([-y * s, 0.5 * np.pi * y * c])

    def grad(self, x, y):
        w = self.w
        s, c = np.sin(w * x), np.cos(w * x)
        return np.array([[-w * y * c, -s], [-0.5 * np.pi * w * y * s, 0.5 * np.pi * c]])

    def hess(self, x, y):
        w = self.w
        s, c = np.sin(w * x), np.cos(w * x)
        z = np.zeros_like(s * y)
        h0 = [[w * w * y * s, -w * c], [-w * c, z]]
        h1 = [[-0.5 * np.pi * w * w * y * c, -0.5 * np.pi * w * s], [-0.5 * np.pi * w * s, z]]
        return np.array([h0, h1])


class PolynomialDisplacement(Displacement):
    """u_i = sum_{a,b} C[i, a, b] x^a y^b."""

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)
        cx = [npoly.polyder(ci, axis=0) for ci in self.c]
        cy = [npoly.polyder(ci, axis=1) for ci in self.c]
        self._grad = [[cx[i], cy[i]] for i in range(2)]
        self._hess = [
            [[npoly.polyder(cx[i], axis=0), npoly.polyder(cx[i], axis=1)],
             [npoly.polyder(cy[i], axis=0), npoly.polyder(cy[i], axis=1)]]
            for i in range(2)
        ]

    @classmethod
    def random(cls, degree, rng):
        """Random field with total degree at most ``degree``."""
        c = rng.standard_normal((2, degree + 1, degree + 1))
        a, b = np.meshgrid(np.arange(degree + 1), np.arange(degree + 1), indexing="ij")
        c[:, a + b > degree] = 0.0
        return cls(c)

    def u(self, x, y):
        return np.array([npoly.polyval2d(x, y, ci) for ci in self.c])

    def grad(self, x, y):
        return np.array([[npoly.polyval2d(x, y, g) for g in row] for row in self._grad])

    def hess(self, x, y):
        return np.array([[[npoly.polyval2d(x, y, h) for h in hj] for hj in hi] for hi in self._hess])


class ManufacturedSolution:
    """Stress, rotation and data generated by a displacement field.

    The rotation is the scalar ``(d u_2/dx_1 - d u_1/dx_2) / 2``; its
    tensor is ``rotation * SKEW`` with ``SKEW = [[0, -1], [1, 0]]``.
    """

    def __init__(self, displacement, params, kappa):
        if not kappa > 0:
            raise ModelError(f"wave number must be positive, got {kappa}")
        self.disp = displacement
        self.params = params
        self.kappa = kappa

    def u(self, x, y):
        return self.disp.u(x, y)

    def grad_u(self, x, y):
        return self.disp.grad(x, y)

    def sigma(self, x, y):
        G = self.disp.grad(x, y)
        return elasticity_apply(self.params, 0.5 * (G + G.swapaxes(0, 1)))

    def div_sigma(self, x, y):
        H = self.disp.hess(x, y)
        lam, mu = self.params.lam, self.params.mu
        grad_div = H[0, 0] + H[1, 1]  # d/dx_l of div u, indexed by l
        lap = H[:, 0, 0] + H[:, 1, 1]
        return lam * grad_div + mu * (lap + grad_div)

    def rotation(self, x, y):
        G = self.disp.grad(x, y)
        return 0.5 * (G[1, 0] - G[0, 1])

    def force(self, x, y):
        return self.div_sigma(x, y) + self.kappa ** 2 * self.disp.u(x, y)

    def dirichlet(self, x, y):
        return self.disp.u(x, y)


def exact_fields(kappa, params):
    """The trigonometric benchmark solution on the unit square."""
    return ManufacturedSolution(TrigDisplacement(kappa), params, kappa)
