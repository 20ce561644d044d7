"""Discrete Stokes complexes of compatible B-spline spaces.

Builds the tuple of potential / velocity / pressure tensor-product spaces on
the unit square or cube, the exact coefficient-level differential operators
between them (gradient, curl or perpendicular gradient, divergence), and the
boundary-condition classification of degrees of freedom:

* 2D:  stream function (zero trace)  ->  velocity (zero normal trace)
       ->  pressure (zero weighted mean, handled by a Lagrange multiplier),
* 3D:  scalar potential -> vector potential (zero tangential trace)
       ->  velocity -> pressure.

The differential operators act on coefficient vectors and are exact: the
composition of consecutive operators cancels to the zero matrix.
"""

import numpy as np
import scipy.sparse as sps

from .splines import TensorSpace, open_uniform_space

__all__ = (
    "FieldSpace",
    "VectorFieldSpace",
    "CompatibleComplex2D",
    "CompatibleComplex3D",
    "build_complex",
    "div_matrix",
    "perp_grad_matrix",
    "curl_matrix",
    "grad_matrix",
    "random_divfree_velocity",
)


class FieldSpace:
    """A scalar tensor-product space plus an active-DOF mask.

    `constrained_dirs` lists the parametric directions in which the first and
    last basis function are removed by a strongly imposed boundary condition.
    """

    def __init__(self, space, constrained_dirs=()):
        self.space = space
        self.constrained_dirs = tuple(constrained_dirs)
        active = np.ones(space.dims, dtype=bool)
        for d in self.constrained_dirs:
            sl = [slice(None)] * space.ndim
            sl[d] = 0
            active[tuple(sl)] = False
            sl[d] = -1
            active[tuple(sl)] = False
        self.active = active.ravel()
        self.active_flats = np.flatnonzero(self.active)
        self.compact_index = np.full(space.dim, -1, dtype=np.int64)
        self.compact_index[self.active_flats] = np.arange(self.active_flats.size)

    @property
    def dim(self):
        return self.space.dim

    @property
    def n_active(self):
        return self.active_flats.size

    def compact_of_multi(self, multi):
        """Active (compact) index of a multi-index; -1 if constrained."""
        return int(self.compact_index[self.space.ravel(multi)])


class VectorFieldSpace:
    """Velocity-style space: one scalar FieldSpace per component, concatenated.

    Component ordering is fixed (all of component 0, then 1, ...), with
    lexicographic flattening within each component.
    """

    def __init__(self, components):
        self.components = list(components)
        sizes = [c.n_active for c in self.components]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.n_active = int(self.offsets[-1])
        self.full_offsets = np.concatenate(
            [[0], np.cumsum([c.dim for c in self.components])])
        self.n_full = int(self.full_offsets[-1])

    def compact_of(self, comp, multi):
        local = self.components[comp].compact_of_multi(multi)
        if local < 0:
            return -1
        return int(self.offsets[comp] + local)

    def active_cols(self):
        """Full-coefficient indices (stacked components) of the active DOFs."""
        return np.concatenate([
            self.full_offsets[c] + fs.active_flats
            for c, fs in enumerate(self.components)
        ])


def _identity(n):
    return sps.identity(n, format="csr")


def _kron(*mats):
    out = mats[0]
    for m in mats[1:]:
        out = sps.kron(out, m, format="csr")
    return sps.csr_matrix(out)


class CompatibleComplex2D:
    """Compatible spline spaces and coefficient operators on the unit square.

    With streamfunction degree (p, p), velocity components live in
    S^{p,p-1} x S^{p-1,p} and the pressure in S^{p-1,p-1}, all with maximal
    continuity on a uniform dyadic mesh of 2^level elements per direction.
    """

    dim = 2

    def __init__(self, p, level):
        if p < 2:
            raise ValueError("pressure space must be at least C0-continuous; need p >= 2")
        if level < 0:
            raise ValueError("refinement level must be non-negative")
        self.p = p
        self.level = level
        nel = 2 ** level
        self.nel_per_dir = nel
        u_p = open_uniform_space(p, nel)
        u_q = open_uniform_space(p - 1, nel)
        # one univariate space object per (direction, degree); directions share
        # knot vectors on the square
        self.stream = FieldSpace(TensorSpace([u_p, u_p]), constrained_dirs=(0, 1))
        self.velocity = VectorFieldSpace([
            FieldSpace(TensorSpace([u_p, u_q]), constrained_dirs=(0,)),
            FieldSpace(TensorSpace([u_q, u_p]), constrained_dirs=(1,)),
        ])
        self.pressure = FieldSpace(TensorSpace([u_q, u_q]))
        self._d_p = u_p.derivative_matrix()  # degree p -> p-1, n-1 x n
        self._u_p, self._u_q = u_p, u_q

    # -- operators on full (unconstrained) coefficient vectors ---------------

    def perp_grad_full(self):
        """Coefficients of (d/dy psi, -d/dx psi) from streamfunction coefficients."""
        D, n = self._d_p, self._u_p.n
        c1 = _kron(_identity(n), D)
        c2 = -_kron(D, _identity(n))
        return sps.csr_matrix(sps.vstack([c1, c2]))

    def div_full(self):
        """Pressure-space coefficients of div v from stacked velocity coefficients."""
        D = self._d_p
        nq = self._u_q.n
        d1 = _kron(D, _identity(nq))
        d2 = _kron(_identity(nq), D)
        return sps.csr_matrix(sps.hstack([d1, d2]))

    # -- active-DOF (system) operators ---------------------------------------

    def curl_op(self):
        """perp-grad restricted to interior streamfunctions and active velocity DOFs."""
        C = self.perp_grad_full()
        return sps.csr_matrix(C[self.velocity.active_cols()][:, self.stream.active_flats])

    def div_op(self):
        D = self.div_full()
        return sps.csr_matrix(D[:, self.velocity.active_cols()])

    def pressure_integrals(self):
        """Exact integrals of the pressure basis (parametric = physical measure)."""
        ints = [s.basis_integrals() for s in self.pressure.space.spaces]
        return np.kron(ints[0], ints[1])

    @property
    def n_velocity(self):
        return self.velocity.n_active

    @property
    def n_pressure(self):
        return self.pressure.dim

    def potential_interior_count(self):
        return self.stream.n_active

    def dimension_identity(self):
        """Euler characteristic of the constrained complex; zero when exact."""
        n_q0 = self.pressure.dim - 1  # zero-mean constraint
        return self.stream.n_active - self.velocity.n_active + n_q0

    def random_divfree_velocity(self, seed):
        """Active velocity coefficients of the perp-grad of a random streamfunction.

        Interior streamfunction coefficients are drawn uniformly from [-1, 1]
        with the given seed (or Generator); the result has exactly zero
        discrete divergence and satisfies the no-penetration mask.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        psi = rng.uniform(-1.0, 1.0, self.stream.n_active)
        return self.curl_op() @ psi


class CompatibleComplex3D:
    """Compatible spline spaces and coefficient operators on the unit cube."""

    dim = 3

    def __init__(self, p, level):
        if p < 2:
            raise ValueError("pressure space must be at least C0-continuous; need p >= 2")
        if level < 0:
            raise ValueError("refinement level must be non-negative")
        self.p = p
        self.level = level
        nel = 2 ** level
        self.nel_per_dir = nel
        u_p = open_uniform_space(p, nel)
        u_q = open_uniform_space(p - 1, nel)
        P, Q = u_p, u_q
        self.scalar_potential = FieldSpace(TensorSpace([P, P, P]), constrained_dirs=(0, 1, 2))
        # component k of the vector potential keeps degree p-1 in direction k
        # and is constrained (psi x n = 0) in the other two directions
        self.potential = VectorFieldSpace([
            FieldSpace(TensorSpace([Q, P, P]), constrained_dirs=(1, 2)),
            FieldSpace(TensorSpace([P, Q, P]), constrained_dirs=(0, 2)),
            FieldSpace(TensorSpace([P, P, Q]), constrained_dirs=(0, 1)),
        ])
        # component k of the velocity keeps degree p in direction k and is
        # constrained (v . n = 0) in direction k only
        self.velocity = VectorFieldSpace([
            FieldSpace(TensorSpace([P, Q, Q]), constrained_dirs=(0,)),
            FieldSpace(TensorSpace([Q, P, Q]), constrained_dirs=(1,)),
            FieldSpace(TensorSpace([Q, Q, P]), constrained_dirs=(2,)),
        ])
        self.pressure = FieldSpace(TensorSpace([Q, Q, Q]))
        self._d_p = u_p.derivative_matrix()
        self._u_p, self._u_q = u_p, u_q

    def grad_full(self):
        """Vector-potential coefficients of grad(phi) from scalar-potential ones."""
        D, n = self._d_p, self._u_p.n
        I = _identity(n)
        g1 = _kron(D, I, I)
        g2 = _kron(I, D, I)
        g3 = _kron(I, I, D)
        return sps.csr_matrix(sps.vstack([g1, g2, g3]))

    def curl_full(self):
        """Velocity coefficients of curl(psi) from stacked vector-potential ones."""
        D = self._d_p
        Ip = _identity(self._u_p.n)
        Iq = _identity(self._u_q.n)
        Z = lambda r, c: sps.csr_matrix((r, c))
        # v1 = d/dy psi3 - d/dz psi2 ; v2 = d/dz psi1 - d/dx psi3 ;
        # v3 = d/dx psi2 - d/dy psi1
        n1, n2, n3 = (c.dim for c in self.potential.components)
        m1 = (self._u_p.n) * (self._u_q.n) ** 2
        row1 = sps.hstack([Z(m1, n1), -_kron(Ip, Iq, D), _kron(Ip, D, Iq)])
        row2 = sps.hstack([_kron(Iq, Ip, D), Z(m1, n2), -_kron(D, Ip, Iq)])
        row3 = sps.hstack([-_kron(Iq, D, Ip), _kron(D, Iq, Ip), Z(m1, n3)])
        return sps.csr_matrix(sps.vstack([row1, row2, row3]))

    def div_full(self):
        D = self._d_p
        Iq = _identity(self._u_q.n)
        d1 = _kron(D, Iq, Iq)
        d2 = _kron(Iq, D, Iq)
        d3 = _kron(Iq, Iq, D)
        return sps.csr_matrix(sps.hstack([d1, d2, d3]))

    def grad_op(self):
        G = self.grad_full()
        return sps.csr_matrix(G[self.potential.active_cols()][:, self.scalar_potential.active_flats])

    def curl_op(self):
        C = self.curl_full()
        return sps.csr_matrix(C[self.velocity.active_cols()][:, self.potential.active_cols()])

    def div_op(self):
        D = self.div_full()
        return sps.csr_matrix(D[:, self.velocity.active_cols()])

    def pressure_integrals(self):
        ints = [s.basis_integrals() for s in self.pressure.space.spaces]
        return np.kron(np.kron(ints[0], ints[1]), ints[2])

    @property
    def n_velocity(self):
        return self.velocity.n_active

    @property
    def n_pressure(self):
        return self.pressure.dim

    def potential_interior_count(self):
        return self.potential.n_active

    def dimension_identity(self):
        n_q0 = self.pressure.dim - 1
        return (self.scalar_potential.n_active - self.potential.n_active
                + self.velocity.n_active - n_q0)

    def random_divfree_velocity(self, seed):
        """Active velocity coefficients of the curl of a random vector potential."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        psi = rng.uniform(-1.0, 1.0, self.potential.n_active)
        return self.curl_op() @ psi


def build_complex(dim, p, level):
    """Construct the compatible complex for the requested dimension.

    Parameters
    ----------
    dim : 2 or 3
    p : int
        Potential-space degree, at least 2.
    level : int
        Dyadic refinement level; the mesh has 2**level elements per direction.
    """
    if dim == 2:
        return CompatibleComplex2D(p, level)
    if dim == 3:
        return CompatibleComplex3D(p, level)
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def div_matrix(cx):
    """Divergence operator on full stacked velocity coefficients."""
    return cx.div_full()


def perp_grad_matrix(cx):
    if cx.dim != 2:
        raise ValueError("perp-grad is the 2D potential-to-velocity operator")
    return cx.perp_grad_full()


def curl_matrix(cx):
    if cx.dim != 3:
        raise ValueError("curl is the 3D potential-to-velocity operator")
    return cx.curl_full()


def grad_matrix(cx):
    if cx.dim != 3:
        raise ValueError("grad is the 3D scalar-to-vector-potential operator")
    return cx.grad_full()


def random_divfree_velocity(cx, seed):
    return cx.random_divfree_velocity(seed)
