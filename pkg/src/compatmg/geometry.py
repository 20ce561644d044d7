"""Parametric-to-physical geometry maps and Piola transforms.

Four built-in maps: the identity square/cube, a quarter annulus traced
exactly by a rational quadratic Bezier arc in the angular direction
(parametric direction 0) with a linear radial direction (direction 1), and
the hollow cylinder obtained by extruding the annulus in z.

Maps are defined once symbolically; numeric evaluation of F, its Jacobian
and the Jacobian derivative is generated from the symbolic form, so the
closed forms and the assembly kernels cannot drift apart.  The same maps are
used on every refinement level.
"""

import numpy as np
import sympy as sp

__all__ = (
    "GeometryMap",
    "identity_square",
    "identity_cube",
    "quarter_annulus",
    "hollow_cylinder",
    "INNER_RADIUS",
    "OUTER_RADIUS",
    "CYLINDER_DEPTH",
)

INNER_RADIUS = 0.075
OUTER_RADIUS = 0.225
CYLINDER_DEPTH = 0.1


def _lambdify_entries(syms, exprs):
    """Lambdify a list of scalar expressions into one broadcasting callable."""
    funcs = [sp.lambdify(syms, e, modules="numpy") for e in exprs]

    def call(*coords):
        shape = np.broadcast(*coords).shape
        out = np.empty((len(funcs),) + shape)
        for k, f in enumerate(funcs):
            out[k] = f(*coords)
        return out

    return call


class GeometryMap:
    """Smooth bijective map F from the unit d-cube onto the physical domain.

    Callers pass parametric points of shape (..., d); values, Jacobians and
    Jacobian derivatives come back with matching leading dimensions.
    """

    def __init__(self, name, syms, exprs):
        self.name = name
        self.syms = tuple(syms)
        self.exprs = sp.Matrix(exprs)
        d = len(syms)
        self.dim = d
        jac = self.exprs.jacobian(sp.Matrix(self.syms))
        self._jac_exprs = jac
        self._f = _lambdify_entries(self.syms, list(self.exprs))
        self._j = _lambdify_entries(self.syms, [jac[i, j] for i in range(d) for j in range(d)])
        self._h = _lambdify_entries(
            self.syms,
            [sp.diff(jac[i, j], self.syms[k])
             for i in range(d) for j in range(d) for k in range(d)])

    def sympy_map(self):
        """Symbols and symbolic expression of F (for derived closed forms)."""
        return self.syms, self.exprs

    def _coords(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise ValueError(f"expected points with last axis {self.dim}")
        return [xi[..., k] for k in range(self.dim)], xi.shape[:-1]

    def map_point(self, xi):
        """Physical location x = F(xi)."""
        coords, lead = self._coords(xi)
        vals = self._f(*coords)
        return np.moveaxis(vals, 0, -1).reshape(lead + (self.dim,))

    def jacobian(self, xi):
        """J(xi) = dF/dxi with shape (..., d, d)."""
        coords, lead = self._coords(xi)
        d = self.dim
        vals = self._j(*coords)
        return np.moveaxis(vals, 0, -1).reshape(lead + (d, d))

    def jacobian_derivative(self, xi):
        """H[..., i, j, k] = d^2 F_i / (dxi_j dxi_k)."""
        coords, lead = self._coords(xi)
        d = self.dim
        vals = self._h(*coords)
        return np.moveaxis(vals, 0, -1).reshape(lead + (d, d, d))

    def det_jacobian(self, xi):
        return np.linalg.det(self.jacobian(xi))

    # -- push-forwards --------------------------------------------------------

    def piola_velocity(self, vhat, xi):
        """Divergence-preserving push-forward v = J vhat / det J.

        `vhat` holds parametric vector values with shape (..., d) matching xi.
        """
        J = self.jacobian(xi)
        det = np.linalg.det(J)
        if np.any(det <= 0):
            raise ValueError(f"geometry map {self.name!r} has non-positive Jacobian")
        return np.einsum("...ij,...j->...i", J, np.asarray(vhat)) / det[..., None]

    def push_pressure(self, qhat, xi):
        """Pressure push-forward q = qhat / det J."""
        return np.asarray(qhat) / self.det_jacobian(xi)

    def push_potential(self, phihat, xi):
        """2D streamfunction / 3D scalar potential push-forward (composition)."""
        return np.asarray(phihat)

    def push_vector_potential(self, psihat, xi):
        """3D covariant push-forward psi = J^{-T} psihat."""
        J = self.jacobian(xi)
        JinvT = np.linalg.inv(np.swapaxes(J, -1, -2))
        return np.einsum("...ij,...j->...i", JinvT, np.asarray(psihat))

    def __repr__(self):
        return f"GeometryMap({self.name!r}, dim={self.dim})"


class _IdentityMap(GeometryMap):
    """Identity map with constant-time numeric shortcuts."""

    def __init__(self, dim):
        syms = sp.symbols(f"x1:{dim + 1}")
        super().__init__("identity-square" if dim == 2 else "identity-cube",
                         syms, list(syms))

    def map_point(self, xi):
        return np.asarray(xi, dtype=float).copy()

    def jacobian(self, xi):
        coords, lead = self._coords(xi)
        out = np.zeros(lead + (self.dim, self.dim))
        out[...] = np.eye(self.dim)
        return out

    def jacobian_derivative(self, xi):
        coords, lead = self._coords(xi)
        return np.zeros(lead + (self.dim,) * 3)

    def det_jacobian(self, xi):
        coords, lead = self._coords(xi)
        return np.ones(lead)


def _annulus_exprs(syms):
    """Exact quarter-circle rational quadratic Bezier times a linear radius.

    The arc runs clockwise from (0, 1) to (1, 0) so that the (angular,
    radial) parametric frame is positively oriented.
    """
    t, s = syms[0], syms[1]
    ri = sp.Rational(3, 40)    # 0.075
    ro = sp.Rational(9, 40)    # 0.225
    w_mid = sp.sqrt(2) / 2
    w = (1 - t) ** 2 + 2 * w_mid * t * (1 - t) + t ** 2
    cx = (2 * w_mid * t * (1 - t) + t ** 2) / w
    cy = ((1 - t) ** 2 + 2 * w_mid * t * (1 - t)) / w
    r = ri + (ro - ri) * s
    return r * cx, r * cy


def identity_square():
    return _IdentityMap(2)


def identity_cube():
    return _IdentityMap(3)


def quarter_annulus():
    """Quarter annulus with r_i = 0.075, r_o = 0.225; direction 0 is angular."""
    syms = sp.symbols("x1 x2")
    fx, fy = _annulus_exprs(syms)
    return GeometryMap("quarter-annulus", syms, [fx, fy])


def hollow_cylinder():
    """Quarter annulus extruded in z to depth 0.1 (direction 2)."""
    syms = sp.symbols("x1 x2 x3")
    fx, fy = _annulus_exprs(syms[:2])
    fz = sp.Rational(1, 10) * syms[2]
    return GeometryMap("hollow-cylinder", syms, [fx, fy, fz])


_FACTORIES = {
    "identity-square": identity_square,
    "identity-cube": identity_cube,
    "quarter-annulus": quarter_annulus,
    "hollow-cylinder": hollow_cylinder,
}


def geometry_by_name(name):
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}") from None
