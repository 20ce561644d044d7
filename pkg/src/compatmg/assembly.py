"""Galerkin assembly of the generalized Stokes / Oseen saddle-point system.

The velocity block collects the reaction mass, viscous stiffness, Nitsche
terms for the weakly imposed no-slip condition (consistency, adjoint
consistency and penalty, all proportional to the viscosity) and, for Oseen,
the advection term.  The divergence block is built as B = D^T Mq from the
exact coefficient-level divergence operator D and the quadrature pressure
mass matrix Mq, which keeps the discrete problem bitwise consistent with the
discrete Stokes complex; the independent quadrature oracle for B lives in
the tests.  The zero-mean pressure constraint is appended as one Lagrange
multiplier row/column holding the exact pressure basis integrals.

Quadrature is tensor-product Gauss-Legendre with p+1 points per direction
per element; boundary faces use the same rule in the tangential directions.
Assembly is vectorized over element batches in a fixed deterministic order,
so assembled matrices are reproducible bitwise.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .splines import point_table, quad_table

__all__ = (
    "ProblemParams",
    "SystemParts",
    "SaddleSystem",
    "assemble_parts",
    "make_system",
    "assemble",
    "nitsche_h",
    "residual",
    "residual_norm",
    "velocity_l2_error",
    "max_pointwise_divergence",
)

# cap on the size of per-batch gradient scratch arrays (in floats)
_BATCH_FLOAT_BUDGET = 40_000_000


@dataclass
class ProblemParams:
    """Physical parameters of one generalized Stokes / Oseen solve.

    For Oseen the advection field is the manufactured velocity scaled to
    unit maximum magnitude; `advection_scale` records the scaling constant.
    """

    sigma: float
    nu: float
    kind: str = "stokes"
    c_penalty: float | None = None
    advection_scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("stokes", "oseen"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.sigma <= 0 or self.nu <= 0:
            raise ValueError("sigma and nu must be positive")
        if self.kind == "oseen" and self.advection_scale is None:
            raise ValueError("oseen problems need the advection normalization scale")


def default_penalty(p):
    """Nitsche penalty constant 4(p-1) used by all benchmarks."""
    return 4.0 * (p - 1)


# ---------------------------------------------------------------------------
# element-batch machinery


class _ComponentBatch:
    """Physical values/gradients of one velocity component on a point batch."""

    __slots__ = ("values", "gradients", "rows")

    def __init__(self, values, gradients, rows):
        self.values = values        # (ne, nq, nloc, d)
        self.gradients = gradients  # (ne, nq, nloc, d, d)
        self.rows = rows            # (ne, nloc) active system row, -1 if constrained


class _Assembler:
    """Shared tables and batch iteration for one (complex, geometry) pair."""

    def __init__(self, cx, geo, nquad):
        if geo.dim != cx.dim:
            raise ValueError(f"geometry dimension {geo.dim} != complex dimension {cx.dim}")
        p = cx.p
        if nquad is None:
            nquad = p + 1
        if nquad < p + 1:
            raise ValueError(
                f"{nquad} quadrature points per direction cannot integrate the "
                f"degree-{p} mass and divergence terms exactly")
        self.cx = cx
        self.geo = geo
        self.nquad = nquad
        self.dim = cx.dim
        self._tables = {}

    def table_of(self, space1d):
        key = id(space1d)
        if key not in self._tables:
            self._tables[key] = quad_table(space1d, self.nquad)
        return self._tables[key]

    def element_grid(self):
        nel = self.cx.nel_per_dir
        grids = np.meshgrid(*[np.arange(nel)] * self.dim, indexing="ij")
        return [g.ravel() for g in grids]

    def batch_size(self, nq_total):
        d = self.dim
        nloc = max(int(np.prod([sp.degree + 1 for sp in c.space.spaces]))
                   for c in self.cx.velocity.components)
        per_el = nq_total * nloc * d * d
        return max(64, int(_BATCH_FLOAT_BUDGET // per_el))

    # -- geometry helpers -----------------------------------------------------

    def geometry_arrays(self, XI):
        geo = self.geo
        J = geo.jacobian(XI)
        detJ = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        H = geo.jacobian_derivative(XI)
        W = J / detJ[..., None, None]
        trterm = np.einsum("...ab,...bak->...k", Jinv, H)
        dW = (H - np.einsum("...ic,...k->...ick", J, trterm)) / detJ[..., None, None, None]
        return J, detJ, Jinv, W, dW

    def component_batch(self, comp, dir_tables, dir_first, Jinv, W, dW):
        """Physical basis data of velocity component `comp` on a batch.

        `dir_tables` provides per-direction (values, derivs) arrays indexed by
        the batch, each shaped (ne, nloc_d, nq_d); `dir_first` the first active
        univariate function per direction, shaped (ne,).
        """
        cx = self.cx
        fs = cx.velocity.components[comp]
        d = self.dim
        vals_d = [t[0] for t in dir_tables]
        ders_d = [t[1] for t in dir_tables]
        ne = vals_d[0].shape[0]

        if d == 2:
            phi = np.einsum("eiP,ejQ->ePQij", vals_d[0], vals_d[1])
            gx = np.einsum("eiP,ejQ->ePQij", ders_d[0], vals_d[1])
            gy = np.einsum("eiP,ejQ->ePQij", vals_d[0], ders_d[1])
            nloc = phi.shape[-2] * phi.shape[-1]
            nq = phi.shape[1] * phi.shape[2]
            phi = phi.reshape(ne, nq, nloc)
            grad = np.stack([g.reshape(ne, nq, nloc) for g in (gx, gy)], axis=-1)
            loc_shape = (vals_d[0].shape[1], vals_d[1].shape[1])
        else:
            phi = np.einsum("eiP,ejQ,ekR->ePQRijk", vals_d[0], vals_d[1], vals_d[2])
            gx = np.einsum("eiP,ejQ,ekR->ePQRijk", ders_d[0], vals_d[1], vals_d[2])
            gy = np.einsum("eiP,ejQ,ekR->ePQRijk", vals_d[0], ders_d[1], vals_d[2])
            gz = np.einsum("eiP,ejQ,ekR->ePQRijk", vals_d[0], vals_d[1], ders_d[2])
            loc_shape = tuple(v.shape[1] for v in vals_d)
            nloc = int(np.prod(loc_shape))
            nq = int(np.prod(phi.shape[1:4]))
            phi = phi.reshape(ne, nq, nloc)
            grad = np.stack([g.reshape(ne, nq, nloc) for g in (gx, gy, gz)], axis=-1)

        # physical value: W[:, comp] * phi ; physical gradient via dW and Jinv
        val = np.einsum("eqi,eqf->eqfi", W[..., comp], phi)
        t1 = np.einsum("eqik,eqf->eqfik", dW[..., comp, :], phi)
        t1 += np.einsum("eqi,eqfk->eqfik", W[..., comp], grad)
        pgrad = np.einsum("eqfik,eqkm->eqfim", t1, Jinv)

        # global system rows (C-order flat index per direction)
        dims = fs.space.dims
        parts = []
        for dd in range(d):
            parts.append(dir_first[dd][:, None] + np.arange(loc_shape[dd])[None, :])
        if d == 2:
            flat = parts[0][:, :, None] * dims[1] + parts[1][:, None, :]
        else:
            flat = ((parts[0][:, :, None, None] * dims[1]
                     + parts[1][:, None, :, None]) * dims[2]
                    + parts[2][:, None, None, :])
        flat = flat.reshape(ne, nloc)
        local = fs.compact_index[flat]
        rows = np.where(local >= 0, local + self.cx.velocity.offsets[comp], -1)
        return _ComponentBatch(val, pgrad, rows)


def _scatter(acc_rows, acc_cols, acc_vals, rows_f, rows_g, loc):
    """Append one batch of local matrices, dropping constrained pairs."""
    ne, nf = rows_f.shape
    ng = rows_g.shape[1]
    R = np.broadcast_to(rows_f[:, :, None], (ne, nf, ng))
    C = np.broadcast_to(rows_g[:, None, :], (ne, nf, ng))
    mask = (R >= 0) & (C >= 0)
    acc_rows.append(R[mask])
    acc_cols.append(C[mask])
    acc_vals.append(loc[mask])


def _scatter_vec(vec, rows_f, loc):
    mask = rows_f >= 0
    np.add.at(vec, rows_f[mask], loc[mask])


class SystemParts:
    """Parameter-independent matrix/vector blocks of one discretization.

    The velocity operator for parameters (sigma, nu, advection weight) is
    sigma*M + nu*SN + weight*ADV; loads combine the same way.
    """

    def __init__(self, cx, geo, solution, c_penalty, nquad, with_advection):
        self.cx = cx
        self.geo = geo
        self.solution = solution
        self.c_penalty = c_penalty
        self.nquad = nquad
        self.with_advection = with_advection
        self.M = None
        self.SN = None
        self.ADV = None
        self.B = None
        self.m = None
        self.load_reaction = None
        self.load_laplacian = None
        self.load_pressure = None
        self.load_advection = None

    @property
    def n_velocity(self):
        return self.cx.n_velocity

    @property
    def n_pressure(self):
        return self.cx.n_pressure


def assemble_parts(cx, geo, solution, c_penalty=None, nquad=None, with_advection=False):
    """Assemble all parameter-independent blocks for one level.

    Parameters
    ----------
    cx : CompatibleComplex2D or CompatibleComplex3D
    geo : GeometryMap
    solution : ManufacturedSolution
        Supplies the load integrand pieces (and the advection field).
    c_penalty : float, optional
        Nitsche penalty constant; defaults to 4(p-1).
    nquad : int, optional
        Gauss points per direction per element; defaults to p+1.
    with_advection : bool
        Also assemble the advection matrix and load for Oseen runs.
    """
    ab = _Assembler(cx, geo, nquad)
    d = cx.dim
    if c_penalty is None:
        c_penalty = default_penalty(cx.p)
    parts = SystemParts(cx, geo, solution, c_penalty, ab.nquad, with_advection)

    n_v = cx.n_velocity
    rows_M, cols_M, vals_M = [], [], []
    rows_S, cols_S, vals_S = [], [], []
    rows_A, cols_A, vals_A = [], [], []
    rows_Q, cols_Q, vals_Q = [], [], []
    load_r = np.zeros(n_v)
    load_l = np.zeros(n_v)
    load_p = np.zeros(n_v)
    load_a = np.zeros(n_v) if with_advection else None

    comp_tables = [
        [ab.table_of(s) for s in c.space.spaces] for c in cx.velocity.components
    ]
    ptables = [ab.table_of(s) for s in cx.pressure.space.spaces]

    els = ab.element_grid()
    nel_total = els[0].size
    nq_total = ab.nquad ** d
    step = ab.batch_size(nq_total)

    for start in range(0, nel_total, step):
        sl = slice(start, min(start + step, nel_total))
        eidx = [e[sl] for e in els]
        ne = eidx[0].size

        # quadrature points and weights (tensor product, C order)
        nodes = [comp_tables[0][k].nodes[eidx[k]] for k in range(d)]
        wts = [comp_tables[0][k].weights[eidx[k]] for k in range(d)]
        if d == 2:
            XI = np.stack([
                np.broadcast_to(nodes[0][:, :, None], (ne, ab.nquad, ab.nquad)),
                np.broadcast_to(nodes[1][:, None, :], (ne, ab.nquad, ab.nquad)),
            ], axis=-1).reshape(ne, nq_total, d)
            WQ = (wts[0][:, :, None] * wts[1][:, None, :]).reshape(ne, nq_total)
        else:
            XI = np.stack([
                np.broadcast_to(nodes[0][:, :, None, None], (ne,) + (ab.nquad,) * 3),
                np.broadcast_to(nodes[1][:, None, :, None], (ne,) + (ab.nquad,) * 3),
                np.broadcast_to(nodes[2][:, None, None, :], (ne,) + (ab.nquad,) * 3),
            ], axis=-1).reshape(ne, nq_total, d)
            WQ = (wts[0][:, :, None, None] * wts[1][:, None, :, None]
                  * wts[2][:, None, None, :]).reshape(ne, nq_total)

        J, detJ, Jinv, W, dW = ab.geometry_arrays(XI)
        wdet = WQ * detJ

        batches = []
        for comp in range(d):
            tabs = comp_tables[comp]
            dir_tables = [(tabs[k].values[eidx[k]], tabs[k].derivs[eidx[k]]) for k in range(d)]
            dir_first = [tabs[k].first[eidx[k]] for k in range(d)]
            batches.append(ab.component_batch(comp, dir_tables, dir_first, Jinv, W, dW))

        if with_advection:
            a_field = solution.advection_field(XI)

        u_exact = solution.velocity(XI)
        lap_exact = solution.laplacian(XI)
        gp_exact = solution.pressure_gradient(XI)
        adv_exact = solution.advection(XI) / solution.advection_scale if with_advection else None

        for bf in batches:
            _scatter_vec(load_r, bf.rows, np.einsum("eqfi,eqi,eq->ef", bf.values, u_exact, wdet))
            _scatter_vec(load_l, bf.rows, np.einsum("eqfi,eqi,eq->ef", bf.values, lap_exact, wdet))
            _scatter_vec(load_p, bf.rows, np.einsum("eqfi,eqi,eq->ef", bf.values, gp_exact, wdet))
            if with_advection:
                _scatter_vec(load_a, bf.rows,
                             np.einsum("eqfi,eqi,eq->ef", bf.values, adv_exact, wdet))

        for bf in batches:
            for bg in batches:
                mloc = np.einsum("eqfi,eqgi,eq->efg", bf.values, bg.values, wdet)
                _scatter(rows_M, cols_M, vals_M, bf.rows, bg.rows, mloc)
                sloc = np.einsum("eqfim,eqgim,eq->efg", bf.gradients, bg.gradients, wdet)
                _scatter(rows_S, cols_S, vals_S, bf.rows, bg.rows, sloc)
                if with_advection:
                    adg = np.einsum("eqk,eqgik->eqgi", a_field, bg.gradients)
                    aloc = np.einsum("eqfi,eqgi,eq->efg", bf.values, adg, wdet)
                    _scatter(rows_A, cols_A, vals_A, bf.rows, bg.rows, aloc)

        # pressure quadrature mass with parametric values and 1/detJ weight
        pdir_tables = [(ptables[k].values[eidx[k]], ptables[k].derivs[eidx[k]]) for k in range(d)]
        if d == 2:
            pv = np.einsum("eiP,ejQ->ePQij", pdir_tables[0][0], pdir_tables[1][0])
        else:
            pv = np.einsum("eiP,ejQ,ekR->ePQRijk", pdir_tables[0][0], pdir_tables[1][0],
                           pdir_tables[2][0])
        nlocp = int(np.prod(pv.shape[1 + d:]))
        pv = pv.reshape(ne, nq_total, nlocp)
        qloc = np.einsum("eqf,eqg,eq->efg", pv, pv, WQ / detJ)
        pdims = cx.pressure.space.dims
        firsts = [ptables[k].first[eidx[k]] for k in range(d)]
        locs = [firsts[k][:, None] + np.arange(cx.pressure.space.degrees[k] + 1)[None, :]
                for k in range(d)]
        if d == 2:
            pflat = locs[0][:, :, None] * pdims[1] + locs[1][:, None, :]
        else:
            pflat = ((locs[0][:, :, None, None] * pdims[1] + locs[1][:, None, :, None])
                     * pdims[2] + locs[2][:, None, None, :])
        pflat = pflat.reshape(ne, nlocp)
        _scatter(rows_Q, cols_Q, vals_Q, pflat, pflat, qloc)

    # ---- boundary faces (Nitsche terms, viscosity factored out) -------------
    for n_dir in range(d):
        for side in (0, 1):
            _assemble_face(ab, comp_tables, n_dir, side, c_penalty,
                           rows_S, cols_S, vals_S)

    n_q = cx.n_pressure
    parts.M = sps.coo_matrix(
        (np.concatenate(vals_M), (np.concatenate(rows_M), np.concatenate(cols_M))),
        shape=(n_v, n_v)).tocsr()
    parts.SN = sps.coo_matrix(
        (np.concatenate(vals_S), (np.concatenate(rows_S), np.concatenate(cols_S))),
        shape=(n_v, n_v)).tocsr()
    if with_advection:
        parts.ADV = sps.coo_matrix(
            (np.concatenate(vals_A), (np.concatenate(rows_A), np.concatenate(cols_A))),
            shape=(n_v, n_v)).tocsr()
    Mq = sps.coo_matrix(
        (np.concatenate(vals_Q), (np.concatenate(rows_Q), np.concatenate(cols_Q))),
        shape=(n_q, n_q)).tocsr()
    D = cx.div_op()
    parts.B = sps.csr_matrix(D.T @ Mq)
    parts.m = cx.pressure_integrals()
    parts.load_reaction = load_r
    parts.load_laplacian = load_l
    parts.load_pressure = load_p
    parts.load_advection = load_a
    return parts


def _face_elements(ab, n_dir, side):
    """Span-index arrays of the elements adjacent to one boundary face."""
    d = ab.dim
    nel = ab.cx.nel_per_dir
    tang = [k for k in range(d) if k != n_dir]
    grids = np.meshgrid(*[np.arange(nel)] * (d - 1), indexing="ij")
    eidx = [None] * d
    for t, g in zip(tang, grids):
        eidx[t] = g.ravel()
    ne = grids[0].size if grids else 1
    eidx[n_dir] = np.full(ne, 0 if side == 0 else nel - 1, dtype=np.int64)
    return eidx, tang


def _assemble_face(ab, comp_tables, n_dir, side, c_penalty, rows_S, cols_S, vals_S):
    """Nitsche boundary contributions of one face into the SN accumulator."""
    cx, geo, d = ab.cx, ab.geo, ab.dim
    eidx, tang = _face_elements(ab, n_dir, side)
    ne = eidx[0].size
    coord = 0.0 if side == 0 else 1.0

    # quadrature grid on the face: tangential Gauss points, normal pinned
    t_tabs = [comp_tables[0][k] for k in range(d)]
    nq_face = ab.nquad ** (d - 1)
    if d == 2:
        t = tang[0]
        nodes_t = t_tabs[t].nodes[eidx[t]]
        W_t = t_tabs[t].weights[eidx[t]]
        XI = np.empty((ne, ab.nquad, d))
        XI[..., t] = nodes_t
        XI[..., n_dir] = coord
        XI = XI.reshape(ne, nq_face, d)
        WQ = W_t.reshape(ne, nq_face)
    else:
        t1, t2 = tang
        nodes1 = t_tabs[t1].nodes[eidx[t1]]
        nodes2 = t_tabs[t2].nodes[eidx[t2]]
        XI = np.empty((ne, ab.nquad, ab.nquad, d))
        XI[..., t1] = nodes1[:, :, None]
        XI[..., t2] = nodes2[:, None, :]
        XI[..., n_dir] = coord
        XI = XI.reshape(ne, nq_face, d)
        WQ = (t_tabs[t1].weights[eidx[t1]][:, :, None]
              * t_tabs[t2].weights[eidx[t2]][:, None, :]).reshape(ne, nq_face)

    J, detJ, Jinv, W, dW = ab.geometry_arrays(XI)

    # surface measure and outward unit normal
    if d == 2:
        measure = np.linalg.norm(J[..., :, tang[0]], axis=-1)
    else:
        crossv = np.cross(J[..., :, tang[0]], J[..., :, tang[1]])
        measure = np.linalg.norm(crossv, axis=-1)
    nvec = Jinv[..., n_dir, :]
    nvec = nvec / np.linalg.norm(nvec, axis=-1, keepdims=True)
    if side == 0:
        nvec = -nvec
    ws = WQ * measure

    # wall-normal element size per boundary element
    h = _wall_normal_sizes(ab, eidx, tang, n_dir, side)

    # physical basis values/gradients on the face for each component
    batches = []
    for comp in range(d):
        tabs = comp_tables[comp]
        dir_tables = []
        dir_first = []
        for k in range(d):
            if k == n_dir:
                space = cx.velocity.components[comp].space.spaces[k]
                f0, v0, d0 = point_table(space, [coord])
                vals = np.broadcast_to(v0.T[None, :, :], (ne, v0.shape[1], 1))
                ders = np.broadcast_to(d0.T[None, :, :], (ne, d0.shape[1], 1))
                dir_tables.append((vals, ders))
                dir_first.append(np.full(ne, f0[0], dtype=np.int64))
            else:
                dir_tables.append((tabs[k].values[eidx[k]], tabs[k].derivs[eidx[k]]))
                dir_first.append(tabs[k].first[eidx[k]])
        batches.append(ab.component_batch(comp, dir_tables, dir_first, Jinv, W, dW))

    pen = c_penalty / h[:, None]
    for bf in batches:
        for bg in batches:
            gn_g = np.einsum("eqgim,eqm->eqgi", bg.gradients, nvec)
            gn_f = np.einsum("eqfim,eqm->eqfi", bf.gradients, nvec)
            loc = (-np.einsum("eqfi,eqgi,eq->efg", bf.values, gn_g, ws)
                   - np.einsum("eqfi,eqgi,eq->efg", gn_f, bg.values, ws)
                   + np.einsum("eqfi,eqgi,eq->efg", bf.values, bg.values, ws * pen))
            _scatter(rows_S, cols_S, vals_S, bf.rows, bg.rows, loc)


def _wall_normal_sizes(ab, eidx, tang, n_dir, side):
    """Physical thickness of the first element layer, per boundary element.

    Measured between the boundary-face midpoint and the opposite-face
    midpoint of the element, projected onto the boundary unit normal.
    """
    cx, geo, d = ab.cx, ab.geo, ab.dim
    breaks = cx.velocity.components[0].space.spaces[0].breakpoints
    ne = eidx[0].size
    mid = np.empty((ne, d))
    opp = np.empty((ne, d))
    for t in tang:
        centers = 0.5 * (breaks[eidx[t]] + breaks[eidx[t] + 1])
        mid[:, t] = centers
        opp[:, t] = centers
    mid[:, n_dir] = 0.0 if side == 0 else 1.0
    opp[:, n_dir] = breaks[1] if side == 0 else breaks[-2]
    x_mid = geo.map_point(mid)
    x_opp = geo.map_point(opp)
    Jm = geo.jacobian(mid)
    nvec = np.linalg.inv(Jm)[..., n_dir, :]
    nvec = nvec / np.linalg.norm(nvec, axis=-1, keepdims=True)
    if side == 0:
        nvec = -nvec
    return np.abs(np.einsum("ei,ei->e", x_opp - x_mid, nvec))


def nitsche_h(geo, cx, n_dir, side, element):
    """Wall-normal mesh size of one boundary element.

    Parameters
    ----------
    n_dir : int
        Parametric direction normal to the face.
    side : 0 or 1
        Face at coordinate 0 or 1.
    element : tuple
        Tangential span indices of the boundary element (d-1 entries).
    """
    ab = _Assembler(cx, geo, None)
    eidx, tang = _face_elements(ab, n_dir, side)
    element = tuple(np.atleast_1d(element))
    nel = cx.nel_per_dir
    flat = 0
    for t in element:
        flat = flat * nel + int(t)
    h = _wall_normal_sizes(ab, [e[flat:flat + 1] for e in eidx], tang, n_dir, side)
    return float(h[0])


# ---------------------------------------------------------------------------
# saddle system


class SaddleSystem:
    """Augmented operator [[A, -B, 0], [B^T, 0, m], [0, m^T, 0]] and load."""

    def __init__(self, A, B, m, load, params):
        self.A = A
        self.B = B
        self.m = m
        self.params = params
        self.n_v = A.shape[0]
        self.n_q = B.shape[1]
        mcol = sps.csr_matrix(m.reshape(-1, 1))
        self.K = sps.bmat(
            [[A, -B, None],
             [B.T, None, mcol],
             [None, mcol.T, None]], format="csr")
        self.F = np.concatenate([load, np.zeros(self.n_q + 1)])

    @property
    def size(self):
        return self.n_v + self.n_q + 1

    def split(self, U):
        """(velocity, pressure, multiplier) views of an augmented vector."""
        return U[:self.n_v], U[self.n_v:self.n_v + self.n_q], U[-1]

    def residual(self, U):
        return self.F - self.K @ U

    def residual_norm(self, U):
        return float(np.linalg.norm(self.residual(U)))


def make_system(parts, params):
    """Combine assembled parts into the operator for given parameters."""
    A = params.sigma * parts.M + params.nu * parts.SN
    load = (params.sigma * parts.load_reaction - params.nu * parts.load_laplacian
            + parts.load_pressure)
    if params.kind == "oseen":
        if parts.ADV is None:
            raise ValueError("parts were assembled without the advection block")
        A = A + parts.ADV
        load = load + parts.load_advection
    return SaddleSystem(sps.csr_matrix(A), parts.B, parts.m, load, params)


def assemble(cx, geo, params, solution, nquad=None):
    """One-shot assembly of the saddle system for a manufactured problem."""
    parts = assemble_parts(
        cx, geo, solution,
        c_penalty=params.c_penalty if params.c_penalty is not None else default_penalty(cx.p),
        nquad=nquad,
        with_advection=params.kind == "oseen")
    if params.kind == "oseen" and params.advection_scale is None:
        params.advection_scale = solution.advection_scale
    return make_system(parts, params)


def residual(system, U):
    return system.residual(U)


def residual_norm(system, U):
    return system.residual_norm(U)


# ---------------------------------------------------------------------------
# diagnostics


def velocity_l2_error(cx, geo, solution, u_active, nquad=None):
    """L2 norm of u_h - u_exact over the physical domain."""
    ab = _Assembler(cx, geo, (nquad or cx.p + 1) + 1)
    d = cx.dim
    comp_tables = [[ab.table_of(s) for s in c.space.spaces] for c in cx.velocity.components]
    els = ab.element_grid()
    nq_total = ab.nquad ** d
    step = ab.batch_size(nq_total)
    total = 0.0
    for start in range(0, els[0].size, step):
        sl = slice(start, min(start + step, els[0].size))
        eidx = [e[sl] for e in els]
        ne = eidx[0].size
        XI, WQ = _batch_points(ab, comp_tables[0], eidx, ne)
        J, detJ, Jinv, W, dW = ab.geometry_arrays(XI)
        uh = np.zeros((ne, nq_total, d))
        for comp in range(d):
            tabs = comp_tables[comp]
            dir_tables = [(tabs[k].values[eidx[k]], tabs[k].derivs[eidx[k]]) for k in range(d)]
            dir_first = [tabs[k].first[eidx[k]] for k in range(d)]
            bf = ab.component_batch(comp, dir_tables, dir_first, Jinv, W, dW)
            coeffs = np.where(bf.rows >= 0, u_active[np.clip(bf.rows, 0, None)], 0.0)
            uh += np.einsum("eqfi,ef->eqi", bf.values, coeffs)
        diff = uh - solution.velocity(XI)
        total += float(np.einsum("eqi,eqi,eq->", diff, diff, WQ * detJ))
    return np.sqrt(total)


def max_pointwise_divergence(cx, geo, u_active, nquad=None):
    """Max of |div u_h| over all quadrature points of the physical domain."""
    ab = _Assembler(cx, geo, nquad)
    d = cx.dim
    dq = cx.div_op() @ u_active
    ptables = [ab.table_of(s) for s in cx.pressure.space.spaces]
    els = ab.element_grid()
    nq_total = ab.nquad ** d
    step = ab.batch_size(nq_total)
    worst = 0.0
    for start in range(0, els[0].size, step):
        sl = slice(start, min(start + step, els[0].size))
        eidx = [e[sl] for e in els]
        ne = eidx[0].size
        XI, WQ = _batch_points(ab, ptables, eidx, ne)
        detJ = geo.det_jacobian(XI)
        if d == 2:
            pv = np.einsum("eiP,ejQ->ePQij", ptables[0].values[eidx[0]],
                           ptables[1].values[eidx[1]])
        else:
            pv = np.einsum("eiP,ejQ,ekR->ePQRijk", ptables[0].values[eidx[0]],
                           ptables[1].values[eidx[1]], ptables[2].values[eidx[2]])
        nlocp = int(np.prod(pv.shape[1 + d:]))
        pv = pv.reshape(ne, nq_total, nlocp)
        pdims = cx.pressure.space.dims
        firsts = [ptables[k].first[eidx[k]] for k in range(d)]
        locs = [firsts[k][:, None] + np.arange(cx.pressure.space.degrees[k] + 1)[None, :]
                for k in range(d)]
        if d == 2:
            pflat = locs[0][:, :, None] * pdims[1] + locs[1][:, None, :]
        else:
            pflat = ((locs[0][:, :, None, None] * pdims[1] + locs[1][:, None, :, None])
                     * pdims[2] + locs[2][:, None, None, :])
        pflat = pflat.reshape(ne, nlocp)
        div_param = np.einsum("eqf,ef->eq", pv, dq[pflat])
        worst = max(worst, float(np.max(np.abs(div_param / detJ))))
    return worst


def _batch_points(ab, tabs, eidx, ne):
    d = ab.dim
    nq = ab.nquad
    nodes = [tabs[k].nodes[eidx[k]] for k in range(d)]
    wts = [tabs[k].weights[eidx[k]] for k in range(d)]
    if d == 2:
        XI = np.stack([
            np.broadcast_to(nodes[0][:, :, None], (ne, nq, nq)),
            np.broadcast_to(nodes[1][:, None, :], (ne, nq, nq)),
        ], axis=-1).reshape(ne, nq * nq, d)
        WQ = (wts[0][:, :, None] * wts[1][:, None, :]).reshape(ne, nq * nq)
    else:
        XI = np.stack([
            np.broadcast_to(nodes[0][:, :, None, None], (ne, nq, nq, nq)),
            np.broadcast_to(nodes[1][:, None, :, None], (ne, nq, nq, nq)),
            np.broadcast_to(nodes[2][:, None, None, :], (ne, nq, nq, nq)),
        ], axis=-1).reshape(ne, nq ** 3, d)
        WQ = (wts[0][:, :, None, None] * wts[1][:, None, :, None]
              * wts[2][:, None, None, :]).reshape(ne, nq ** 3)
    return XI, WQ


def dump_system(system, path_prefix):
    """Write the augmented operator and load in Matrix Market format."""
    from scipy.io import mmwrite
    mmwrite(f"{path_prefix}_K.mtx", system.K)
    mmwrite(f"{path_prefix}_F.mtx", sps.csr_matrix(system.F.reshape(-1, 1)))
    return f"{path_prefix}_K.mtx", f"{path_prefix}_F.mtx"
