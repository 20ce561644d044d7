"""Structure-preserving geometric multigrid for the compatible discretization.

A hierarchy of nested complexes is built by dyadic knot refinement from a
single coarsest element.  The finest operator is assembled by quadrature;
coarse operators are Galerkin triple products R K P with R = P^T and P the
block-diagonal knot-insertion prolongation (velocity components, pressure,
multiplier).

Smoothing solves small local saddle problems on overlapping compatible
subdomains, with one Schwarz family per potential stage of the discrete
complex:

* the subdomain of a potential basis function is its support; its velocity
  members are the (curl- or gradient-) stencil functions supported inside it
  and its pressure members the divergence image, each local problem carrying
  its own zero-mean pressure constraint;
* in 2D the streamfunction family (4 velocity + 4 pressure DOFs per
  subdomain) is the complete smoother;
* in 3D the vector-potential family (4+4) is complemented by the
  scalar-potential gradient patches (up to 12 velocity + 8 pressure DOFs),
  without which the reduced curl-curl problem lacks an optimal relaxation.

Every local update is exactly divergence-free, so the V-cycle keeps a
divergence-free iterate divergence-free to machine precision regardless of
the number of sweeps, levels, or cycles.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .assembly import assemble_parts, default_penalty, make_system
from .complexes import build_complex
from .smoothers import (
    additive_update,
    lu_factor_batch,
    multiplicative_sweep,
)
from .splines import knot_insertion_matrix

__all__ = (
    "SmootherConfig",
    "SmootherGroup",
    "SubdomainSet",
    "enumerate_subdomains",
    "gradient_patches",
    "Level",
    "MultigridHierarchy",
    "HierarchyScaffold",
    "build_hierarchy",
    "SolveResult",
)


@dataclass
class SmootherConfig:
    """Schwarz smoother settings: kind, additive scaling, sweep counts."""

    kind: str = "multiplicative"
    eta: float = 0.5
    nu1: int = 1
    nu2: int = 2

    def __post_init__(self):
        if self.kind not in ("multiplicative", "additive"):
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("additive scaling factor must lie in (0, 1)")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError("smoothing counts must be non-negative")


class SmootherGroup:
    """A homogeneous batch of local saddle problems (equal local sizes).

    `rows` holds the global system rows of each local problem (velocity DOFs
    first, then pressure DOFs); `border` the unit-normalized pressure
    integrals bordering each local matrix as the zero-mean constraint.
    """

    def __init__(self, rows, border, n_vel_local):
        self.rows = np.ascontiguousarray(rows, dtype=np.int64)
        self.border = border
        self.n_vel_local = n_vel_local
        self.lu = None
        self.piv = None

    @property
    def n_sub(self):
        return self.rows.shape[0]

    @property
    def nloc(self):
        return self.rows.shape[1]

    def factor(self, K):
        """Extract and LU-factor all bordered local matrices from K."""
        nloc = self.nloc
        local = np.zeros((self.n_sub, nloc + 1, nloc + 1))
        local[:, :nloc, :nloc] = _gather_blocks(K.tocsr(), self.rows)
        local[:, self.n_vel_local:nloc, nloc] = self.border
        local[:, nloc, self.n_vel_local:nloc] = self.border
        self.lu, self.piv = lu_factor_batch(local)


class SubdomainSet:
    """The potential-generated subdomains of one level (spec family).

    Attributes
    ----------
    rows : (n_sub, 8) int64
        Global augmented-system rows per subdomain: the 4 velocity DOFs of
        the generator's derivative stencil, then the 4 pressure DOFs of the
        divergence image (offset by the velocity count).
    border : (n_sub, 4)
        Unit-normalized pressure integrals (local zero-mean border).
    generators : list
        One tuple per subdomain naming the generating potential basis
        function; lexicographic order fixes the multiplicative sweep order.
    """

    def __init__(self, rows, border, generators, cx):
        self.rows = rows
        self.border = border
        self.generators = generators
        self.cx = cx

    @property
    def n_sub(self):
        return self.rows.shape[0]

    def velocity_rows(self, s):
        return self.rows[s, :4]

    def pressure_flats(self, s):
        return self.rows[s, 4:] - self.cx.n_velocity

    def generator_support(self, s):
        """Parametric support box of the generating basis function."""
        gen = self.generators[s]
        if self.cx.dim == 2:
            space = self.cx.stream.space
            multi = gen
        else:
            comp, *multi = gen
            space = self.cx.potential.components[comp].space
        lo, hi = zip(*(sp.support(i) for sp, i in zip(space.spaces, multi)))
        return np.array(lo), np.array(hi)

    def as_group(self):
        return SmootherGroup(self.rows, self.border, 4)


def enumerate_subdomains(cx, pressure_integrals=None):
    """One subdomain per interior potential basis function.

    Velocity membership is the 4-entry curl stencil of the generator and
    pressure membership the 4-entry divergence image, realizing the
    1 -> 4 -> 3 local exact complex on every level.
    """
    m = cx.pressure_integrals() if pressure_integrals is None else pressure_integrals
    n_v = cx.n_velocity
    rows = []
    generators = []
    if cx.dim == 2:
        n = cx.stream.space.dims[0]
        vel = cx.velocity
        pdims = cx.pressure.space.dims
        for i in range(1, n - 1):
            for j in range(1, n - 1):
                v_rows = (
                    vel.compact_of(0, (i, j - 1)),
                    vel.compact_of(0, (i, j)),
                    vel.compact_of(1, (i - 1, j)),
                    vel.compact_of(1, (i, j)),
                )
                p_flats = (
                    (i - 1) * pdims[1] + (j - 1),
                    (i - 1) * pdims[1] + j,
                    i * pdims[1] + (j - 1),
                    i * pdims[1] + j,
                )
                rows.append(v_rows + tuple(n_v + f for f in p_flats))
                generators.append((i, j))
    else:
        vel = cx.velocity
        pdims = cx.pressure.space.dims
        for comp, fs in enumerate(cx.potential.components):
            dims = fs.space.dims
            others = [a for a in range(3) if a != comp]
            ranges = [range(dims[d]) if d == comp else range(1, dims[d] - 1)
                      for d in range(3)]
            for i in ranges[0]:
                for j in ranges[1]:
                    for k in ranges[2]:
                        m_idx = (i, j, k)
                        v_rows = []
                        for a in others:
                            b = 3 - comp - a  # the remaining direction
                            lo = list(m_idx)
                            lo[b] -= 1
                            v_rows.append(vel.compact_of(a, tuple(lo)))
                            v_rows.append(vel.compact_of(a, m_idx))
                        p_flats = []
                        for s1 in (1, 0):
                            for s2 in (1, 0):
                                q = list(m_idx)
                                q[others[0]] -= s1
                                q[others[1]] -= s2
                                p_flats.append(
                                    (q[0] * pdims[1] + q[1]) * pdims[2] + q[2])
                        rows.append(tuple(v_rows) + tuple(n_v + f for f in p_flats))
                        generators.append((comp, i, j, k))
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows[:, :4] < 0).any():
        raise RuntimeError("subdomain stencil hit a constrained velocity DOF")
    border = m[rows[:, 4:] - n_v]
    border = border / np.linalg.norm(border, axis=1, keepdims=True)
    return SubdomainSet(rows, border, generators, cx)


def gradient_patches(cx, pressure_integrals=None):
    """Scalar-potential patches completing the 3D smoother.

    One patch per scalar-potential basis function (boundary indices
    included): velocity members are the gradient-stencil functions whose
    supports lie in the patch, pressure members their divergence image.
    Patches are bucketed by local size into homogeneous SmootherGroups,
    ordered small-to-large and lexicographically within a bucket.
    """
    if cx.dim != 3:
        raise ValueError("gradient patches exist only for the 3D complex")
    m = cx.pressure_integrals() if pressure_integrals is None else pressure_integrals
    n_v = cx.n_velocity
    n = cx.scalar_potential.space.dims[0]
    nq = n - 1
    vel = cx.velocity
    pdims = cx.pressure.space.dims
    buckets = {}
    for i in range(n):
        for j in range(n):
            for k in range(n):
                ctr = (i, j, k)
                v_rows = []
                for a in range(3):
                    if ctr[a] in (0, n - 1):
                        continue  # normal-trace constrained in direction a
                    choices = []
                    for d in range(3):
                        if d == a:
                            choices.append((ctr[d],))
                        else:
                            choices.append(tuple(
                                x for x in (ctr[d] - 1, ctr[d]) if 0 <= x < nq))
                    for x1 in choices[0]:
                        for x2 in choices[1]:
                            for x3 in choices[2]:
                                c = vel.compact_of(a, (x1, x2, x3))
                                if c >= 0:
                                    v_rows.append(c)
                if not v_rows:
                    continue
                p_rows = [
                    n_v + ((x1 * pdims[1] + x2) * pdims[2] + x3)
                    for x1 in (x for x in (i - 1, i) if 0 <= x < nq)
                    for x2 in (x for x in (j - 1, j) if 0 <= x < nq)
                    for x3 in (x for x in (k - 1, k) if 0 <= x < nq)
                ]
                buckets.setdefault((len(v_rows), len(p_rows)), []).append(
                    v_rows + p_rows)
    groups = []
    for (nvloc, nploc), rows in sorted(buckets.items()):
        rows = np.asarray(rows, dtype=np.int64)
        border = m[rows[:, nvloc:] - n_v]
        border = border / np.linalg.norm(border, axis=1, keepdims=True)
        groups.append(SmootherGroup(rows, border, nvloc))
    return groups


def _gather_blocks(K, rows):
    """Dense (n_sub, nloc, nloc) extraction of K[rows, rows] per subdomain."""
    n_sub, nloc = rows.shape
    out = np.zeros((n_sub, nloc, nloc))
    indptr, indices, data = K.indptr, K.indices, K.data
    for s in range(n_sub):
        rs = rows[s]
        for a in range(nloc):
            start, end = indptr[rs[a]], indptr[rs[a] + 1]
            cols = indices[start:end]
            pos = np.searchsorted(cols, rs)
            hit = pos < cols.size
            pos_c = np.clip(pos, 0, cols.size - 1)
            hit &= cols[pos_c] == rs
            out[s, a, hit] = data[start:end][pos_c[hit]]
    return out


class Level:
    """One multigrid level: operator, smoother groups, transfer to finer."""

    def __init__(self, cx, K, subdomains=None, patch_groups=()):
        self.cx = cx
        self.K = K
        self.subdomains = subdomains
        self.patch_groups = list(patch_groups)
        self.P = None            # prolongation to the next finer level
        self.groups = None
        self._csc = None
        self.coarse_solver = None

    def csc_arrays(self):
        if self._csc is None:
            C = self.K.tocsc()
            self._csc = (C.indptr.astype(np.int64), C.indices.astype(np.int64),
                         C.data)
        return self._csc

    def factor_smoother(self):
        self.groups = [self.subdomains.as_group()] + self.patch_groups
        for g, group in enumerate(self.groups):
            try:
                group.factor(self.K)
            except RuntimeError as err:
                raise RuntimeError(
                    f"level with {self.cx.nel_per_dir} elements/dir, "
                    f"smoother group {g}: {err}") from err


def _block_prolongation(coarse_cx, fine_cx):
    """Active-DOF prolongation over (velocity components, pressure, multiplier)."""
    blocks = []
    for cf, ff in zip(coarse_cx.velocity.components, fine_cx.velocity.components):
        T = None
        for sc, sf in zip(cf.space.spaces, ff.space.spaces):
            t = knot_insertion_matrix(sc, sf)
            T = t if T is None else sps.kron(T, t, format="csr")
        P_full = sps.csr_matrix(T.T)
        P = P_full[ff.active_flats][:, cf.active_flats]
        # interior coarse functions must not leak onto constrained fine rows
        inactive = np.flatnonzero(~ff.active)
        leak = P_full[inactive][:, cf.active_flats]
        if leak.nnz and abs(leak).max() > 0:
            raise AssertionError("knot insertion leaked onto constrained DOFs")
        blocks.append(sps.csr_matrix(P))
    Tq = None
    for sc, sf in zip(coarse_cx.pressure.space.spaces, fine_cx.pressure.space.spaces):
        t = knot_insertion_matrix(sc, sf)
        Tq = t if Tq is None else sps.kron(Tq, t, format="csr")
    blocks.append(sps.csr_matrix(Tq.T))
    blocks.append(sps.identity(1, format="csr"))
    return sps.block_diag(blocks, format="csr")


class HierarchyScaffold:
    """Parameter-independent data shared across solves of one discretization.

    Holds the nested complexes, prolongations, subdomain index sets and the
    finest-level assembled parts; `realize` combines them into an operator
    hierarchy for one parameter set.
    """

    def __init__(self, dim, p, n_levels, geo, solution, with_advection=False,
                 c_penalty=None, nquad=None):
        if n_levels < 0:
            raise ValueError("need a non-negative number of refinement levels")
        self.dim = dim
        self.p = p
        self.n_levels = n_levels
        self.geo = geo
        self.solution = solution
        self.complexes = [build_complex(dim, p, lvl) for lvl in range(n_levels + 1)]
        self.prolongations = [
            _block_prolongation(self.complexes[lvl], self.complexes[lvl + 1])
            for lvl in range(n_levels)
        ]
        self.parts = assemble_parts(
            self.complexes[-1], geo, solution,
            c_penalty=c_penalty if c_penalty is not None else default_penalty(p),
            nquad=nquad, with_advection=with_advection)
        self.subdomain_sets = [
            enumerate_subdomains(cx) if lvl > 0 else None
            for lvl, cx in enumerate(self.complexes)
        ]
        self.patch_groups = [
            gradient_patches(cx) if (lvl > 0 and dim == 3) else []
            for lvl, cx in enumerate(self.complexes)
        ]

    def realize(self, params):
        """Operator hierarchy (Galerkin-coarsened) for one parameter set."""
        system = make_system(self.parts, params)
        levels = [None] * (self.n_levels + 1)
        K = system.K
        for lvl in range(self.n_levels, -1, -1):
            level = Level(self.complexes[lvl], K, self.subdomain_sets[lvl],
                          self.patch_groups[lvl])
            if lvl > 0:
                level.P = self.prolongations[lvl - 1]
                level.factor_smoother()
                K = sps.csr_matrix(level.P.T @ (K @ level.P))
            levels[lvl] = level
        levels[0].coarse_solver = spla.splu(levels[0].K.tocsc())
        return MultigridHierarchy(levels, system, self)


def build_hierarchy(dim, p, n_levels, geo, solution, params, c_penalty=None,
                    nquad=None):
    """One-shot hierarchy construction (assembly at the finest level only)."""
    scaffold = HierarchyScaffold(
        dim, p, n_levels, geo, solution,
        with_advection=params.kind == "oseen", c_penalty=c_penalty, nquad=nquad)
    return scaffold.realize(params)


@dataclass
class SolveResult:
    U: np.ndarray
    cycles: int
    converged: bool
    residual_history: list
    max_div: float
    max_div_rel: float
    dofs: int

    @property
    def final_rel_residual(self):
        return self.residual_history[-1] / self.residual_history[0]


class MultigridHierarchy:
    """V-cycle driver over nested compatible discretizations."""

    def __init__(self, levels, system, scaffold):
        self.levels = levels
        self.system = system
        self.scaffold = scaffold

    @property
    def n_levels(self):
        return len(self.levels) - 1

    @property
    def finest(self):
        return self.levels[-1]

    def smooth(self, lvl, U, F, config, steps=1):
        """Apply `steps` Schwarz sweeps at level `lvl`, updating U in place.

        One sweep visits every group in order; the multiplicative variant
        keeps the residual current across local solves and groups, the
        additive variant computes all corrections from the entry residual
        and applies them scaled by eta.
        """
        level = self.levels[lvl]
        K = level.K
        for _ in range(steps):
            r = F - K @ U
            if config.kind == "multiplicative":
                indptr, indices, data = level.csc_arrays()
                for group in level.groups:
                    multiplicative_sweep(group.rows, group.lu, group.piv,
                                         indptr, indices, data, U, r)
            else:
                update = np.zeros_like(U)
                for group in level.groups:
                    additive_update(group.rows, group.lu, group.piv, r,
                                    config.eta, update)
                U += update
        return U

    def v_cycle(self, U, F, config, lvl=None):
        """One V-cycle at level `lvl` (finest by default), updating U in place."""
        if lvl is None:
            lvl = self.n_levels
        level = self.levels[lvl]
        if lvl == 0:
            U[:] = level.coarse_solver.solve(F)
            return U
        self.smooth(lvl, U, F, config, steps=config.nu1)
        G = level.P.T @ (F - level.K @ U)
        dU = np.zeros(self.levels[lvl - 1].K.shape[0])
        self.v_cycle(dU, G, config, lvl=lvl - 1)
        U += level.P @ dU
        self.smooth(lvl, U, F, config, steps=config.nu2)
        return U

    def initial_guess(self, seed):
        """Random divergence-free velocity, random zero-mean pressure, zero multiplier."""
        cx = self.finest.cx
        rng = np.random.default_rng(seed)
        u0 = cx.random_divfree_velocity(rng)
        p0 = rng.uniform(-1.0, 1.0, cx.n_pressure)
        pm = self.system.m
        p0 -= (pm @ p0) / pm.sum()
        return np.concatenate([u0, p0, [0.0]])

    def divergence_norm(self, U):
        """Max-norm of the discrete divergence coefficients of the velocity part."""
        cx = self.finest.cx
        u = U[:cx.n_velocity]
        d = cx.div_op() @ u
        return float(np.abs(d).max()) if d.size else 0.0

    def solve(self, config=None, tol=1e-6, max_cycles=200, seed=0):
        """Iterate V-cycles until the initial residual drops by 1/tol.

        Returns a SolveResult; `converged` is False when max_cycles V-cycles
        did not reach the tolerance (the history is still complete).
        """
        config = config or SmootherConfig()
        F = self.system.F
        U = self.initial_guess(seed)
        K = self.finest.K
        n_v = self.finest.cx.n_velocity
        r0 = float(np.linalg.norm(F - K @ U))
        history = [r0]

        def div_pair(max_div, max_rel):
            d = self.divergence_norm(U)
            scale = max(1.0, float(np.abs(U[:n_v]).max()))
            return max(max_div, d), max(max_rel, d / scale)

        max_div, max_div_rel = div_pair(0.0, 0.0)
        converged = False
        cycles = 0
        if r0 == 0.0:
            return SolveResult(U, 0, True, history, max_div, max_div_rel, K.shape[0])
        for cycles in range(1, max_cycles + 1):
            self.v_cycle(U, F, config)
            r = float(np.linalg.norm(F - K @ U))
            history.append(r)
            max_div, max_div_rel = div_pair(max_div, max_div_rel)
            if r <= tol * r0:
                converged = True
                break
        return SolveResult(U, cycles, converged, history, max_div, max_div_rel,
                           K.shape[0])
