"""Manufactured solutions and their forcings.

The unit-square and unit-cube solutions are divergence-free closed forms
(the cube velocity is the curl of a polynomial vector potential); the
quarter-annulus and hollow-cylinder solutions are their Piola push-forwards
onto the mapped domains.  All physical-space derivatives (velocity gradient,
Laplacian, pressure gradient, advection term) are derived symbolically
through the chain rule with the exact geometry Jacobian and compiled to
vectorized numpy callables, so the forcing

    f = sigma * u - nu * Lap(u) + grad(p) [+ (u . grad) u / scale]

is exact for any parameter combination.  All callables take parametric
points of shape (..., d); values apply at the physical image F(xi).
"""

from functools import lru_cache

import numpy as np
import sympy as sp

from .geometry import (
    _lambdify_entries,
    geometry_by_name,
)

__all__ = (
    "ManufacturedSolution",
    "manufactured_solution",
    "manufactured_forcing",
    "DOMAINS",
)

DOMAINS = ("square", "annulus", "cube", "cylinder")

_GEOMETRY_OF = {
    "square": "identity-square",
    "annulus": "quarter-annulus",
    "cube": "identity-cube",
    "cylinder": "hollow-cylinder",
}

# sample-grid resolution for the advection normalization constant
_SCALE_GRID = {2: 401, 3: 81}


def _square_fields(X, Y):
    """Divergence-free velocity and zero-mean pressure on the unit square.

    The velocity is the perpendicular gradient of the streamfunction
    exp(X) X^2 (X-1)^2 Y^2 (Y-1)^2.
    """
    u1 = 2 * sp.exp(X) * (-1 + X) ** 2 * X ** 2 * (Y ** 2 - Y) * (-1 + 2 * Y)
    u2 = -sp.exp(X) * (-1 + X) * X * (-2 + X * (3 + X)) * (-1 + Y) ** 2 * Y ** 2
    yy = Y ** 2 - Y
    p = (-424 + 156 * sp.E + yy * (-456 + sp.exp(X) * (
        456 + X ** 2 * (228 - 5 * yy) + 2 * X * (-228 + yy)
        + 2 * X ** 3 * (-36 + yy) + X ** 4 * (12 + yy))))
    return sp.Matrix([u1, u2]), p


def _cube_fields(X, Y, Z):
    """Curl of a polynomial vector potential and a zero-mean pressure."""
    psi = sp.Matrix([
        X * (X - 1) * Y ** 2 * (Y - 1) ** 2 * Z ** 2 * (Z - 1) ** 2,
        0,
        X ** 2 * (X - 1) ** 2 * Y ** 2 * (Y - 1) ** 2 * Z * (Z - 1),
    ])
    u = sp.Matrix([
        sp.diff(psi[2], Y) - sp.diff(psi[1], Z),
        sp.diff(psi[0], Z) - sp.diff(psi[2], X),
        sp.diff(psi[1], X) - sp.diff(psi[0], Y),
    ])
    p = sp.sin(sp.pi * X) * sp.sin(sp.pi * Y) - 4 / sp.pi ** 2
    return u, p


class ManufacturedSolution:
    """Exact solution fields on one of the built-in domains."""

    def __init__(self, domain):
        if domain not in DOMAINS:
            raise ValueError(f"unknown manufactured domain {domain!r}")
        self.name = domain
        self.geometry = geometry_by_name(_GEOMETRY_OF[domain])
        self.dim = self.geometry.dim
        syms, F = self.geometry.sympy_map()
        d = self.dim
        if d == 2:
            uhat, phat = _square_fields(*syms)
        else:
            uhat, phat = _cube_fields(*syms)

        J = F.jacobian(sp.Matrix(syms))
        detJ = J.det()
        Jinv = J.adjugate() / detJ  # J * adjugate(J) = det(J) * I

        u = (J @ uhat) / detJ          # divergence-preserving push-forward
        p = phat / detJ

        def grad_x(expr):
            g = sp.Matrix([sp.diff(expr, s) for s in syms])
            return Jinv.T @ g

        gradu = sp.Matrix([[grad_x(u[i])[j] for j in range(d)] for i in range(d)])
        lap = sp.Matrix([sum(grad_x(gradu[i, j])[j] for j in range(d)) for i in range(d)])
        gradp = grad_x(p)
        adv = sp.Matrix([sum(u[k] * gradu[i, k] for k in range(d)) for i in range(d)])

        self._u = _lambdify_entries(syms, list(u))
        self._p = _lambdify_entries(syms, [p])
        self._gradu = _lambdify_entries(syms, [gradu[i, j] for i in range(d) for j in range(d)])
        self._lap = _lambdify_entries(syms, list(lap))
        self._gradp = _lambdify_entries(syms, list(gradp))
        self._adv = _lambdify_entries(syms, list(adv))
        self._scale = None

    def _coords(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise ValueError(f"expected points with last axis {self.dim}")
        return [xi[..., k] for k in range(self.dim)], xi.shape[:-1]

    def _vec(self, func, xi):
        coords, lead = self._coords(xi)
        return np.moveaxis(func(*coords), 0, -1).reshape(lead + (self.dim,))

    def velocity(self, xi):
        """Physical exact velocity at F(xi)."""
        return self._vec(self._u, xi)

    def pressure(self, xi):
        """Physical exact pressure at F(xi); zero mean over the domain."""
        coords, lead = self._coords(xi)
        return self._p(*coords)[0].reshape(lead)

    def velocity_gradient(self, xi):
        """du_i/dx_j with shape (..., d, d)."""
        coords, lead = self._coords(xi)
        d = self.dim
        vals = self._gradu(*coords)
        return np.moveaxis(vals, 0, -1).reshape(lead + (d, d))

    def laplacian(self, xi):
        return self._vec(self._lap, xi)

    def pressure_gradient(self, xi):
        return self._vec(self._gradp, xi)

    def advection(self, xi):
        """(u . grad) u, the unscaled advection term."""
        return self._vec(self._adv, xi)

    @property
    def advection_scale(self):
        """Maximum velocity magnitude on a fixed parametric sample grid.

        The built-in Oseen advection field is the exact velocity divided by
        this constant, which makes its maximum magnitude one.
        """
        if self._scale is None:
            n = _SCALE_GRID[self.dim]
            axes = [np.linspace(0.0, 1.0, n)] * self.dim
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            speeds = np.linalg.norm(self.velocity(grid), axis=-1)
            self._scale = float(speeds.max())
        return self._scale

    def advection_field(self, xi):
        """Divergence-free advection velocity with unit maximum magnitude."""
        return self.velocity(xi) / self.advection_scale

    def forcing(self, xi, sigma, nu, with_advection=False):
        """Momentum forcing for the generalized Stokes/Oseen operator."""
        f = sigma * self.velocity(xi) - nu * self.laplacian(xi) + self.pressure_gradient(xi)
        if with_advection:
            f = f + self.advection(xi) / self.advection_scale
        return f


@lru_cache(maxsize=None)
def manufactured_solution(domain):
    """Cached constructor (the symbolic derivation runs once per domain)."""
    return ManufacturedSolution(domain)


def manufactured_forcing(case, params, xi):
    """Forcing of a ManufacturedSolution under ProblemParams-like settings."""
    return case.forcing(xi, params.sigma, params.nu,
                        with_advection=params.kind == "oseen")
