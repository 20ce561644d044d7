"""Batched dense factorizations and Schwarz sweep kernels.

Every Schwarz subdomain owns a 9x9 bordered saddle system (4 velocity DOFs,
4 pressure DOFs, 1 local zero-mean multiplier).  The factorizations are
computed once per level with a vectorized partial-pivoting LU; the
multiplicative sweep visits subdomains in a fixed order, keeping the global
residual up to date through compressed-column updates, and is JIT-compiled.
A plain-numpy reference sweep cross-validates the kernel in the tests.
"""

import numpy as np
from numba import njit

__all__ = (
    "lu_factor_batch",
    "lu_solve_batch",
    "multiplicative_sweep",
    "multiplicative_sweep_reference",
    "additive_update",
)


def lu_factor_batch(mats):
    """LU with partial pivoting of a stack of small dense matrices.

    Returns (lu, piv) in LAPACK getrf layout: unit lower triangle below the
    diagonal, upper triangle on and above, row swaps recorded per step.
    Raises with the offending batch index if a pivot vanishes.
    """
    lu = np.ascontiguousarray(mats, dtype=np.float64).copy()
    nb, n, n2 = lu.shape
    if n != n2:
        raise ValueError("expected square matrices")
    piv = np.zeros((nb, n), dtype=np.int64)
    scale = np.max(np.abs(lu), axis=(1, 2))
    bidx = np.arange(nb)
    for k in range(n):
        p = np.argmax(np.abs(lu[:, k:, k]), axis=1) + k
        piv[:, k] = p
        rk = lu[bidx, k].copy()
        lu[bidx, k] = lu[bidx, p]
        lu[bidx, p] = rk
        pivots = lu[:, k, k]
        bad = np.abs(pivots) <= 1e-14 * np.maximum(scale, 1e-300)
        if np.any(bad):
            raise RuntimeError(
                f"singular local saddle system in batch entry {int(np.flatnonzero(bad)[0])}")
        lu[:, k + 1:, k] /= pivots[:, None]
        lu[:, k + 1:, k + 1:] -= lu[:, k + 1:, k, None] * lu[:, k, None, k + 1:]
    return lu, piv


def lu_solve_batch(lu, piv, rhs):
    """Solve per-batch with factors from lu_factor_batch; rhs is (nb, n)."""
    x = np.ascontiguousarray(rhs, dtype=np.float64).copy()
    nb, n = x.shape
    bidx = np.arange(nb)
    for k in range(n):
        p = piv[:, k]
        xk = x[bidx, k].copy()
        x[bidx, k] = x[bidx, p]
        x[bidx, p] = xk
    for k in range(n):
        x[:, k + 1:] -= lu[:, k + 1:, k] * x[:, k, None]
    for k in range(n - 1, -1, -1):
        x[:, k] /= lu[:, k, k]
        x[:, :k] -= lu[:, :k, k] * x[:, k, None]
    return x


@njit(cache=True)
def _solve_local(lu, piv, b):
    n = b.shape[0]
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
    for k in range(n):
        bk = b[k]
        for i in range(k + 1, n):
            b[i] -= lu[i, k] * bk
    for k in range(n - 1, -1, -1):
        acc = b[k]
        for j in range(k + 1, n):
            acc -= lu[k, j] * b[j]
        b[k] = acc / lu[k, k]


@njit(cache=True)
def multiplicative_sweep(rows, lu, piv, indptr, indices, data, U, r):
    """One multiplicative Schwarz sweep, updating U and the residual in place.

    `rows` holds the 8 global DOFs per subdomain; the 9th local unknown is
    the bordered zero-mean multiplier with zero right-hand side.  `indptr`,
    `indices`, `data` describe the level operator in CSC form so residual
    entries coupled to the updated DOFs can be corrected incrementally.
    """
    n_sub = rows.shape[0]
    nloc = rows.shape[1]
    b = np.empty(nloc + 1)
    for s in range(n_sub):
        for k in range(nloc):
            b[k] = r[rows[s, k]]
        b[nloc] = 0.0
        _solve_local(lu[s], piv[s], b)
        for k in range(nloc):
            dof = rows[s, k]
            d = b[k]
            U[dof] += d
            for t in range(indptr[dof], indptr[dof + 1]):
                r[indices[t]] -= data[t] * d


def multiplicative_sweep_reference(rows, lu, piv, K, U, r):
    """Pure-numpy reference of the multiplicative sweep (for validation)."""
    K = K.tocsc()
    for s in range(rows.shape[0]):
        b = np.zeros(rows.shape[1] + 1)
        b[:-1] = r[rows[s]]
        delta = lu_solve_batch(lu[s:s + 1], piv[s:s + 1], b[None, :])[0]
        for k, dof in enumerate(rows[s]):
            d = delta[k]
            U[dof] += d
            col = K.getcol(int(dof))
            r[col.indices] -= col.data * d


def additive_update(rows, lu, piv, r, eta, out):
    """Accumulate the scaled additive Schwarz update into `out`.

    All local problems see the same residual; overlapping contributions sum.
    """
    nloc = rows.shape[1]
    rhs = np.zeros((rows.shape[0], nloc + 1))
    rhs[:, :nloc] = r[rows]
    delta = lu_solve_batch(lu, piv, rhs)
    np.add.at(out, rows.ravel(), eta * delta[:, :nloc].ravel())
    return out
