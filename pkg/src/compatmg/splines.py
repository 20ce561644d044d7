"""Univariate and tensor-product B-spline spaces.

Open knot vectors on [0, 1], Cox-de Boor evaluation, derivatives,
dyadic knot refinement and the knot-insertion transfer matrices that
express a coarse basis in a nested fine basis.  Knot values are dyadic
rationals by construction (refinement only inserts span midpoints), so
knot comparisons are exact floating-point comparisons.
"""

from functools import cached_property

import numpy as np
import scipy.sparse as sps

__all__ = (
    "KnotVector",
    "UnivariateSpace",
    "TensorSpace",
    "TransferMatrix",
    "open_uniform_space",
    "eval_basis",
    "eval_basis_derivative",
    "uniform_dyadic_refine",
    "knot_insertion_matrix",
    "tensor_transfer",
    "gauss_legendre",
    "QuadTable",
    "quad_table",
    "point_table",
)


class KnotVector:
    """An open knot vector on [0, 1] for splines of a fixed degree.

    Parameters
    ----------
    degree : int
        Polynomial degree p >= 0.
    knots : array_like
        Non-decreasing knot sequence; the first and last knot must be
        0 and 1 repeated exactly p+1 times.
    """

    __slots__ = ("degree", "knots")

    def __init__(self, degree, knots):
        knots = np.asarray(knots, dtype=float)
        p = int(degree)
        if p < 0:
            raise ValueError(f"degree must be non-negative, got {p}")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree")
        if np.any(np.diff(knots) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if np.any(knots[: p + 1] != 0.0) or knots[p + 1] == 0.0:
            raise ValueError("first p+1 knots must equal 0 (open knot vector)")
        if np.any(knots[-(p + 1):] != 1.0) or knots[-(p + 2)] == 1.0:
            raise ValueError("last p+1 knots must equal 1 (open knot vector)")
        self.degree = p
        self.knots = knots
        self.knots.setflags(write=False)

    @property
    def n(self):
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self):
        """Unique knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def multiplicities(self):
        return np.array([np.count_nonzero(self.knots == z) for z in self.breakpoints])

    @property
    def regularity(self):
        """Continuity order alpha_j = p - multiplicity at each unique knot."""
        return self.degree - self.multiplicities

    @property
    def nspans(self):
        """Number of nonempty knot spans (elements)."""
        return self.breakpoints.size - 1

    def span_of(self, x):
        """Index k of the knot span with knots[k] <= x < knots[k+1].

        Evaluation at the right endpoint x = 1 is folded into the last
        nonempty span so that the final basis function evaluates to 1
        there.
        """
        p, knots = self.degree, self.knots
        n = self.n
        if x >= knots[n]:
            return n - 1
        if x <= knots[p]:
            return p
        return int(np.searchsorted(knots, x, side="right") - 1)

    def refine_dyadic(self):
        """Insert the midpoint of every nonempty span once."""
        zeta = self.breakpoints
        mids = 0.5 * (zeta[:-1] + zeta[1:])
        return KnotVector(self.degree, np.sort(np.concatenate([self.knots, mids])))


def open_uniform_knots(degree, nspans):
    """Open knot vector with maximal interior continuity and uniform spans.

    Interior knots sit at i/nspans; for nspans a power of two these are
    exact dyadic values.
    """
    if nspans < 1:
        raise ValueError("need at least one span")
    interior = np.arange(1, nspans) / nspans
    ends = np.zeros(degree + 1)
    return KnotVector(degree, np.concatenate([ends, interior, ends + 1.0]))


class UnivariateSpace:
    """Scalar B-spline space on [0, 1] defined by an open knot vector."""

    def __init__(self, kv):
        if not isinstance(kv, KnotVector):
            raise TypeError("expected a KnotVector")
        self.kv = kv

    @property
    def degree(self):
        return self.kv.degree

    @property
    def knots(self):
        return self.kv.knots

    @property
    def n(self):
        return self.kv.n

    @property
    def nspans(self):
        return self.kv.nspans

    @property
    def breakpoints(self):
        return self.kv.breakpoints

    def support(self, i):
        """Support interval [xi_i, xi_{i+p+1}] of basis function i."""
        self._check_index(i)
        return self.knots[i], self.knots[i + self.degree + 1]

    def _check_index(self, i):
        if not 0 <= i < self.n:
            raise ValueError(f"basis index {i} out of range [0, {self.n})")

    def eval_nonzero(self, x):
        """Cox-de Boor evaluation of the p+1 basis functions active at x.

        Returns
        -------
        first : int
            Index of the first active basis function.
        vals : ndarray
            Values of functions first .. first+p at x.
        """
        p, knots = self.degree, self.knots
        k = self.kv.span_of(x)
        vals = np.zeros(p + 1)
        left = np.zeros(p + 1)
        right = np.zeros(p + 1)
        vals[0] = 1.0
        for j in range(1, p + 1):
            left[j] = x - knots[k + 1 - j]
            right[j] = knots[k + j] - x
            saved = 0.0
            for r in range(j):
                tmp = vals[r] / (right[r + 1] + left[j - r])
                vals[r] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            vals[j] = saved
        return k - p, vals

    def ders_nonzero(self, x, nders):
        """Derivatives of order 0..nders of the active basis functions at x.

        Returns
        -------
        first : int
        ders : ndarray of shape (nders+1, p+1)
        """
        p, knots = self.degree, self.knots
        k = self.kv.span_of(x)
        nd = min(nders, p)
        ndu = np.zeros((p + 1, p + 1))
        left = np.zeros(p + 1)
        right = np.zeros(p + 1)
        ndu[0, 0] = 1.0
        for j in range(1, p + 1):
            left[j] = x - knots[k + 1 - j]
            right[j] = knots[k + j] - x
            saved = 0.0
            for r in range(j):
                ndu[j, r] = right[r + 1] + left[j - r]
                tmp = ndu[r, j - 1] / ndu[j, r]
                ndu[r, j] = saved + right[r + 1] * tmp
                saved = left[j - r] * tmp
            ndu[j, j] = saved
        ders = np.zeros((nders + 1, p + 1))
        ders[0] = ndu[:, p]
        a = np.zeros((2, p + 1))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[0, 0] = 1.0
            for kk in range(1, nd + 1):
                d = 0.0
                rk, pk = r - kk, p - kk
                if r >= kk:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = kk - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, kk] = -a[s1, kk - 1] / ndu[pk + 1, r]
                    d += a[s2, kk] * ndu[r, pk]
                ders[kk, r] = d
                s1, s2 = s2, s1
        fac = float(p)
        for kk in range(1, nd + 1):
            ders[kk] *= fac
            fac *= p - kk
        return k - p, ders

    def eval_basis(self, i, x):
        """Value of basis function i at x (0 outside its support)."""
        self._check_index(i)
        first, vals = self.eval_nonzero(x)
        j = i - first
        if 0 <= j <= self.degree:
            lo, hi = self.support(i)
            if lo <= x <= hi:
                return float(vals[j])
        return 0.0

    def eval_basis_derivative(self, i, x, order=1):
        """Derivative of basis function i at x.

        The requested order must not exceed the degree.
        """
        self._check_index(i)
        if order > self.degree:
            raise ValueError(f"derivative order {order} exceeds degree {self.degree}")
        first, ders = self.ders_nonzero(x, order)
        j = i - first
        if 0 <= j <= self.degree:
            lo, hi = self.support(i)
            if lo <= x <= hi:
                return float(ders[order, j])
        return 0.0

    def eval_field(self, coeffs, x):
        """Evaluate sum_i coeffs[i] N_i at a scalar location x."""
        first, vals = self.eval_nonzero(x)
        return float(np.dot(coeffs[first:first + self.degree + 1], vals))

    def basis_integrals(self):
        """Exact integrals of the basis functions: (xi_{i+p+1} - xi_i)/(p+1)."""
        p, knots = self.degree, self.knots
        return (knots[p + 1:] - knots[:-p - 1]) / (p + 1)

    def derivative_space(self):
        """Degree p-1 space containing the derivatives (drop one end knot each side)."""
        if self.degree < 1:
            raise ValueError("degree 0 space has no derivative space")
        return UnivariateSpace(KnotVector(self.degree - 1, self.knots[1:-1]))

    def derivative_matrix(self):
        """Coefficient operator of d/dx onto the degree p-1 space.

        Maps coefficients c of a degree-p spline to the coefficients
        p*(c[j+1]-c[j])/(xi_{j+p+1}-xi_{j+1}) of its derivative, which
        lives exactly in the derivative space.
        """
        p, knots, n = self.degree, self.knots, self.n
        scale = p / (knots[p + 1:n + p] - knots[1:n])
        rows = np.repeat(np.arange(n - 1), 2)
        cols = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1).ravel()
        data = np.stack([-scale, scale], axis=1).ravel()
        return sps.csr_matrix((data, (rows, cols)), shape=(n - 1, n))

    def refine_dyadic(self):
        return UnivariateSpace(self.kv.refine_dyadic())

    def __repr__(self):
        return f"UnivariateSpace(p={self.degree}, nspans={self.nspans}, n={self.n})"


def open_uniform_space(degree, nspans):
    return UnivariateSpace(open_uniform_knots(degree, nspans))


def eval_basis(space, i, x):
    return space.eval_basis(i, x)


def eval_basis_derivative(space, i, x, order=1):
    return space.eval_basis_derivative(i, x, order)


def uniform_dyadic_refine(space):
    """Insert the midpoint of every span once, preserving degree and continuity."""
    return space.refine_dyadic()


# ---------------------------------------------------------------------------
# knot insertion

def _single_insertion_matrix(knots, p, u):
    """Coefficient map of inserting knot u once (Boehm's algorithm).

    Returns S with shape (n+1, n) such that refined coefficients are S @ c.
    """
    n = knots.size - p - 1
    # span index with knots[k] <= u < knots[k+1]
    k = int(np.searchsorted(knots, u, side="right") - 1)
    S = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            S[i, i] = 1.0
        elif i <= k:
            alpha = (u - knots[i]) / (knots[i + p] - knots[i])
            S[i, i] = alpha
            S[i, i - 1] = 1.0 - alpha
        else:
            S[i, i - 1] = 1.0
    return S


def knot_insertion_matrix(coarse, fine):
    """Transfer matrix T with N_coarse_i = sum_j T[i, j] N_fine_j.

    Parameters
    ----------
    coarse, fine : UnivariateSpace
        Equal degrees; the coarse knot multiset must be contained in the
        fine knot multiset.

    Returns
    -------
    scipy.sparse.csr_matrix of shape (n_coarse, n_fine)
    """
    if coarse.degree != fine.degree:
        raise ValueError("knot insertion requires equal degrees")
    p = coarse.degree
    missing = _multiset_difference(fine.knots, coarse.knots)
    if missing is None:
        raise ValueError("coarse knot vector is not nested in the fine one")
    C = np.eye(coarse.n)
    knots = np.array(coarse.knots)
    for u in missing:
        S = _single_insertion_matrix(knots, p, u)
        C = S @ C
        knots = np.sort(np.append(knots, u))
    if not np.array_equal(knots, fine.knots):
        raise ValueError("coarse knot vector is not nested in the fine one")
    return sps.csr_matrix(C.T)


def _multiset_difference(fine_knots, coarse_knots):
    """Knots of fine not in coarse (with multiplicity); None if not nested."""
    # dyadic knot values compare exactly
    out = []
    i = 0
    fine = list(fine_knots)
    for u in coarse_knots:
        while i < len(fine) and fine[i] < u:
            out.append(fine[i])
            i += 1
        if i >= len(fine) or fine[i] != u:
            return None
        i += 1
    out.extend(fine[i:])
    return out


class TransferMatrix:
    """Tensor-product transfer built from per-direction insertion matrices.

    The full matrix (Kronecker product of the factors, C-order flattening)
    is materialized lazily and cached; coefficient prolongation uses its
    transpose.
    """

    def __init__(self, factors):
        self.factors = list(factors)

    @cached_property
    def matrix(self):
        M = self.factors[0]
        for f in self.factors[1:]:
            M = sps.kron(M, f, format="csr")
        return sps.csr_matrix(M)

    @cached_property
    def prolongation(self):
        """Fine-by-coarse coefficient map (transpose of the basis transfer)."""
        return sps.csr_matrix(self.matrix.T)

    @property
    def shape(self):
        return self.matrix.shape


def tensor_transfer(coarse, fine):
    """TransferMatrix between two TensorSpaces with nested knot vectors."""
    if len(coarse.spaces) != len(fine.spaces):
        raise ValueError("dimension mismatch")
    return TransferMatrix(
        [knot_insertion_matrix(c, f) for c, f in zip(coarse.spaces, fine.spaces)]
    )


# ---------------------------------------------------------------------------
# tensor-product spaces

class TensorSpace:
    """Tensor product of d univariate spaces with C-order (lexicographic) flattening."""

    def __init__(self, spaces):
        self.spaces = tuple(spaces)
        if not self.spaces:
            raise ValueError("need at least one direction")

    @property
    def ndim(self):
        return len(self.spaces)

    @property
    def dims(self):
        return tuple(s.n for s in self.spaces)

    @property
    def dim(self):
        return int(np.prod(self.dims))

    @property
    def degrees(self):
        return tuple(s.degree for s in self.spaces)

    def ravel(self, multi):
        return int(np.ravel_multi_index(multi, self.dims))

    def unravel(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.dims))

    def eval(self, flat, xi):
        """Value of basis function `flat` at parametric point xi."""
        multi = self.unravel(flat)
        out = 1.0
        for s, i, x in zip(self.spaces, multi, xi):
            out *= s.eval_basis(i, x)
        return out

    def grad(self, flat, xi):
        """Parametric gradient of basis function `flat` at xi."""
        multi = self.unravel(flat)
        vals = [s.eval_basis(i, x) for s, i, x in zip(self.spaces, multi, xi)]
        ders = [s.eval_basis_derivative(i, x, 1) for s, i, x in zip(self.spaces, multi, xi)]
        g = np.empty(self.ndim)
        for k in range(self.ndim):
            prod = ders[k]
            for m in range(self.ndim):
                if m != k:
                    prod *= vals[m]
            g[k] = prod
        return g

    def eval_field(self, coeffs, xi):
        """Evaluate a coefficient vector at one parametric point."""
        coeffs = np.asarray(coeffs).reshape(self.dims)
        # contract one direction at a time (axis 0 shrinks away each pass)
        acc = coeffs
        for s, x in zip(self.spaces, xi):
            first, vals = s.eval_nonzero(x)
            acc = np.tensordot(vals, acc[first:first + s.degree + 1], axes=(0, 0))
        return float(acc)

    def eval_field_grad(self, coeffs, xi):
        """Parametric gradient of a coefficient vector at one point."""
        coeffs = np.asarray(coeffs).reshape(self.dims)
        out = np.empty(self.ndim)
        for k in range(self.ndim):
            acc = coeffs
            for axis, (s, x) in enumerate(zip(self.spaces, xi)):
                first, ders = s.ders_nonzero(x, 1)
                vals = ders[1] if axis == k else ders[0]
                acc = np.tensordot(vals, acc[first:first + s.degree + 1], axes=(0, 0))
            out[k] = float(acc)
        return out

    def boundary_flats(self, direction, side):
        """Flat indices whose basis index in `direction` is first (side 0) or last (side 1)."""
        idx = [np.arange(n) for n in self.dims]
        idx[direction] = np.array([0 if side == 0 else self.dims[direction] - 1])
        grids = np.meshgrid(*idx, indexing="ij")
        return np.ravel_multi_index([g.ravel() for g in grids], self.dims)

    def __repr__(self):
        return f"TensorSpace(degrees={self.degrees}, dims={self.dims})"


# ---------------------------------------------------------------------------
# quadrature tables

def gauss_legendre(npts):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


class QuadTable:
    """Per-element univariate basis data on a Gauss grid.

    Attributes
    ----------
    nodes, weights : (nel, nq)
        Mapped Gauss points and weights (weights include span lengths).
    values, derivs : (nel, p+1, nq)
        Basis values / first derivatives of the active functions.
    first : (nel,)
        Index of the first active basis function per element.
    """

    def __init__(self, nodes, weights, values, derivs, first):
        self.nodes = nodes
        self.weights = weights
        self.values = values
        self.derivs = derivs
        self.first = first


def quad_table(space, nq):
    """Tabulate basis values/derivatives on an nq-point Gauss rule per span."""
    zeta = space.breakpoints
    nel = zeta.size - 1
    xg, wg = gauss_legendre(nq)
    p = space.degree
    nodes = zeta[:-1, None] + np.diff(zeta)[:, None] * xg[None, :]
    weights = np.diff(zeta)[:, None] * wg[None, :]
    values = np.zeros((nel, p + 1, nq))
    derivs = np.zeros((nel, p + 1, nq))
    first = np.zeros(nel, dtype=np.int64)
    for e in range(nel):
        for q in range(nq):
            f, ders = space.ders_nonzero(nodes[e, q], 1)
            values[e, :, q] = ders[0]
            derivs[e, :, q] = ders[1]
            first[e] = f
    return QuadTable(nodes, weights, values, derivs, first)


def point_table(space, coords):
    """Basis values/derivatives at arbitrary coordinates, per owning span.

    Returns per-point (first, values, derivs) arrays shaped like quad_table
    output with one point per row; used for boundary-face evaluation.
    """
    coords = np.atleast_1d(np.asarray(coords, dtype=float))
    p = space.degree
    values = np.zeros((coords.size, p + 1))
    derivs = np.zeros((coords.size, p + 1))
    first = np.zeros(coords.size, dtype=np.int64)
    for k, x in enumerate(coords):
        f, ders = space.ders_nonzero(x, 1)
        values[k] = ders[0]
        derivs[k] = ders[1]
        first[k] = f
    return first, values, derivs
