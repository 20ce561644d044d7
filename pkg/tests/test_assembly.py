"""Assembly tests: block structure, the independent quadrature oracle for B,
Nitsche mesh sizes, coercivity, and discretization accuracy of direct solves.
"""

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from compatmg.assembly import (
    ProblemParams,
    _Assembler,
    _batch_points,
    assemble,
    assemble_parts,
    make_system,
    max_pointwise_divergence,
    nitsche_h,
    residual,
    residual_norm,
    velocity_l2_error,
)
from compatmg.complexes import build_complex
from compatmg.geometry import (
    INNER_RADIUS,
    OUTER_RADIUS,
    identity_cube,
    identity_square,
    quarter_annulus,
)
from compatmg.manufactured import manufactured_solution


@pytest.fixture(scope="module")
def square_sys():
    cx = build_complex(2, 2, 2)
    geo = identity_square()
    sol = manufactured_solution("square")
    parts = assemble_parts(cx, geo, sol)
    system = make_system(parts, ProblemParams(sigma=1.0, nu=1.0))
    return cx, geo, sol, parts, system


def direct_solve(system):
    return spla.spsolve(system.K.tocsc(), system.F)


class TestBlockStructure:
    def test_stokes_A_symmetry(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        A = system.A
        asym = abs(A - A.T).max()
        assert asym / abs(A).max() < 1e-12

    def test_sign_pattern(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        K = system.K.toarray()
        n_v, n_q = system.n_v, system.n_q
        np.testing.assert_allclose(K[:n_v, n_v:n_v + n_q], -parts.B.toarray(), atol=0)
        np.testing.assert_allclose(K[n_v:n_v + n_q, :n_v], parts.B.toarray().T, atol=0)
        np.testing.assert_allclose(K[n_v:n_v + n_q, -1], parts.m, atol=0)
        np.testing.assert_allclose(K[-1, n_v:n_v + n_q], parts.m, atol=0)
        assert K[-1, -1] == 0.0
        assert np.all(K[:n_v, -1] == 0.0)

    def test_constant_pressure_mode_on_square(self, square_sys):
        # on the identity map constants lie in the pressure space and pair to
        # the boundary flux, which vanishes for v.n = 0
        cx, geo, sol, parts, system = square_sys
        flux = parts.B @ np.ones(system.n_q)
        assert np.max(np.abs(flux)) < 1e-14

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError):
            assemble_parts(build_complex(2, 2, 1), identity_cube(),
                           manufactured_solution("square"))

    def test_insufficient_quadrature_raises(self):
        with pytest.raises(ValueError):
            assemble_parts(build_complex(2, 2, 1), identity_square(),
                           manufactured_solution("square"), nquad=2)


class TestDivergenceOracle:
    @pytest.mark.parametrize("domain,dim,level", [
        ("square", 2, 2), ("annulus", 2, 2), ("cube", 3, 1),
    ])
    def test_B_matches_direct_quadrature(self, domain, dim, level):
        """v^T B q == quadrature of (div v_h) q_h, by an independent path.

        The oracle evaluates the physical divergence through the trace of the
        assembled physical gradients (not through the coefficient divergence
        operator used to build B) and the physical pressure through the
        parametric values divided by det J.
        """
        cx = build_complex(dim, 2, level)
        sol = manufactured_solution(domain)
        geo = sol.geometry
        parts = assemble_parts(cx, geo, sol)
        ab = _Assembler(cx, geo, cx.p + 1)
        comp_tables = [[ab.table_of(s) for s in c.space.spaces]
                       for c in cx.velocity.components]
        ptables = [ab.table_of(s) for s in cx.pressure.space.spaces]
        els = ab.element_grid()
        ne = els[0].size
        XI, WQ = _batch_points(ab, comp_tables[0], els, ne)
        J, detJ, Jinv, W, dW = ab.geometry_arrays(XI)

        rng = np.random.default_rng(77)
        for trial in range(10):
            v = rng.uniform(-1, 1, cx.n_velocity)
            q = rng.uniform(-1, 1, cx.n_pressure)
            lhs = float(v @ (parts.B @ q))

            div_v = np.zeros(XI.shape[:2])
            for comp in range(dim):
                tabs = comp_tables[comp]
                dir_tables = [(tabs[k].values[els[k]], tabs[k].derivs[els[k]])
                              for k in range(dim)]
                dir_first = [tabs[k].first[els[k]] for k in range(dim)]
                bf = ab.component_batch(comp, dir_tables, dir_first, Jinv, W, dW)
                coeffs = np.where(bf.rows >= 0, v[np.clip(bf.rows, 0, None)], 0.0)
                div_v += np.einsum("eqfii,ef->eq", bf.gradients, coeffs)

            if dim == 2:
                pv = np.einsum("eiP,ejQ->ePQij", ptables[0].values[els[0]],
                               ptables[1].values[els[1]])
            else:
                pv = np.einsum("eiP,ejQ,ekR->ePQRijk", ptables[0].values[els[0]],
                               ptables[1].values[els[1]], ptables[2].values[els[2]])
            nloc = int(np.prod(pv.shape[1 + dim:]))
            pv = pv.reshape(ne, -1, nloc)
            pdims = cx.pressure.space.dims
            firsts = [ptables[k].first[els[k]] for k in range(dim)]
            locs = [firsts[k][:, None] + np.arange(cx.p)[None, :] for k in range(dim)]
            if dim == 2:
                pflat = locs[0][:, :, None] * pdims[1] + locs[1][:, None, :]
            else:
                pflat = ((locs[0][:, :, None, None] * pdims[1]
                          + locs[1][:, None, :, None]) * pdims[2]
                         + locs[2][:, None, None, :])
            q_h = np.einsum("eqf,ef->eq", pv, q[pflat.reshape(ne, nloc)]) / detJ
            rhs = float(np.einsum("eq,eq,eq->", div_v, q_h, WQ * detJ))
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


class TestNitscheH:
    def test_square_level3(self):
        cx = build_complex(2, 2, 3)
        geo = identity_square()
        assert nitsche_h(geo, cx, 0, 0, (3,)) == pytest.approx(1 / 8, abs=1e-15)

    def test_cube_level2_all_faces(self):
        cx = build_complex(3, 2, 2)
        geo = identity_cube()
        for n_dir in range(3):
            for side in (0, 1):
                assert nitsche_h(geo, cx, n_dir, side, (1, 2)) == pytest.approx(
                    0.25, abs=1e-15)

    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_annulus_radial_layer(self, level):
        cx = build_complex(2, 2, level)
        geo = quarter_annulus()
        expected = (OUTER_RADIUS - INNER_RADIUS) / 2 ** level
        # inner circle is the face at radial coordinate 0 (normal dir 1)
        h = nitsche_h(geo, cx, 1, 0, (0,))
        assert h == pytest.approx(expected, abs=1e-12)

    def test_annulus_angular_layer_scales_with_radius(self):
        cx = build_complex(2, 2, 2)
        geo = quarter_annulus()
        h = nitsche_h(geo, cx, 0, 0, (0,))
        # angular layer thickness is roughly r * (pi/2) / nel, within the arc
        r_mid = INNER_RADIUS + 0.125 * (OUTER_RADIUS - INNER_RADIUS)
        approx = r_mid * (np.pi / 2) / 4
        assert 0.5 * approx < h < 1.5 * approx


class TestResidual:
    def test_exact_solve_residual(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        U = direct_solve(system)
        assert residual_norm(system, U) / np.linalg.norm(system.F) < 1e-12

    def test_zero_guess_residual_is_load(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        np.testing.assert_array_equal(residual(system, np.zeros(system.size)), system.F)


class TestDirectSolution:
    def test_pointwise_divergence_free(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        U = direct_solve(system)
        u = U[:system.n_v]
        assert max_pointwise_divergence(cx, geo, u) < 1e-10 * max(
            1.0, np.abs(u).max())

    def test_pressure_zero_mean_and_multiplier(self, square_sys):
        cx, geo, sol, parts, system = square_sys
        U = direct_solve(system)
        _, p, lam = system.split(U)
        assert abs(parts.m @ p) < 1e-14
        assert abs(lam) < 1e-12

    def test_annulus_divergence_free(self):
        cx = build_complex(2, 2, 2)
        sol = manufactured_solution("annulus")
        system = assemble(cx, sol.geometry, ProblemParams(sigma=1.0, nu=1.0), sol)
        U = direct_solve(system)
        u = U[:system.n_v]
        assert max_pointwise_divergence(cx, sol.geometry, u) < 1e-10 * max(
            1.0, np.abs(u).max())

    def test_oseen_assembly_is_nonsymmetric_and_solvable(self):
        cx = build_complex(2, 2, 2)
        sol = manufactured_solution("square")
        params = ProblemParams(sigma=10.0, nu=0.01, kind="oseen",
                               advection_scale=sol.advection_scale)
        system = assemble(cx, sol.geometry, params, sol)
        A = system.A
        assert abs(A - A.T).max() / abs(A).max() > 1e-6
        U = direct_solve(system)
        assert residual_norm(system, U) / np.linalg.norm(system.F) < 1e-10


class TestCoercivity:
    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_A_positive_definite(self, level):
        cx = build_complex(2, 2, level)
        sol = manufactured_solution("square")
        system = assemble(cx, sol.geometry, ProblemParams(sigma=1.0, nu=1.0), sol)
        eigs = np.linalg.eigvalsh(system.A.toarray())
        assert eigs.min() > 0


class TestConvergence:
    @staticmethod
    @pytest.fixture(scope="class")
    def square_errors():
        sol = manufactured_solution("square")
        geo = identity_square()
        errs = []
        for lvl in (3, 4, 5):
            cx = build_complex(2, 2, lvl)
            system = assemble(cx, geo, ProblemParams(sigma=1.0, nu=1.0), sol)
            U = direct_solve(system)
            errs.append(velocity_l2_error(cx, geo, sol, U[:system.n_v]))
        return errs

    def test_rates_in_band(self, square_errors):
        rates = [np.log2(square_errors[i] / square_errors[i + 1]) for i in range(2)]
        assert all(1.9 <= r <= 3.1 for r in rates), f"rates {rates}"
