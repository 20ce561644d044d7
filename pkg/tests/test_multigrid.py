"""Multigrid tests: hierarchy identities, subdomain structure, smoother
behavior (including cross-validation of the compiled sweep against a plain
numpy reference), divergence preservation, and solve-driver contracts."""

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from compatmg.assembly import ProblemParams
from compatmg.geometry import identity_cube, identity_square
from compatmg.manufactured import manufactured_solution
from compatmg.multigrid import (
    HierarchyScaffold,
    SmootherConfig,
    build_hierarchy,
    enumerate_subdomains,
    gradient_patches,
)
from compatmg.complexes import build_complex
from compatmg.smoothers import (
    lu_factor_batch,
    lu_solve_batch,
    multiplicative_sweep_reference,
)


@pytest.fixture(scope="module")
def square_hier():
    sol = manufactured_solution("square")
    sc = HierarchyScaffold(2, 2, 2, identity_square(), sol)
    return sc.realize(ProblemParams(sigma=1.0, nu=1.0))


@pytest.fixture(scope="module")
def cube_hier():
    sol = manufactured_solution("cube")
    sc = HierarchyScaffold(3, 2, 1, identity_cube(), sol)
    return sc.realize(ProblemParams(sigma=1.0, nu=1.0))


class TestBatchedLU:
    def test_factor_solve_roundtrip(self):
        rng = np.random.default_rng(0)
        mats = rng.standard_normal((50, 9, 9)) + 3 * np.eye(9)
        rhs = rng.standard_normal((50, 9))
        lu, piv = lu_factor_batch(mats)
        x = lu_solve_batch(lu, piv, rhs)
        np.testing.assert_allclose(
            np.einsum("bij,bj->bi", mats, x), rhs, atol=1e-10)

    def test_singular_detection(self):
        mats = np.zeros((3, 4, 4))
        mats[:] = np.eye(4)
        mats[1] = 0.0
        with pytest.raises(RuntimeError, match="entry 1"):
            lu_factor_batch(mats)


class TestHierarchy:
    def test_galerkin_identity(self, square_hier):
        hier = square_hier
        for lvl in (1, 2):
            level = hier.levels[lvl]
            K_coarse = hier.levels[lvl - 1].K
            G = (level.P.T @ (level.K @ level.P)).toarray()
            diff = np.max(np.abs(K_coarse.toarray() - G))
            assert diff < 1e-13 * max(1.0, np.abs(G).max())

    def test_prolongation_reproduces_functions(self, square_hier):
        hier = square_hier
        level = hier.levels[2]
        coarse_cx = hier.levels[1].cx
        fine_cx = level.cx
        rng = np.random.default_rng(8)
        Uc = rng.uniform(-1, 1, hier.levels[1].K.shape[0])
        Uf = level.P @ Uc
        # sample the pressure field (full space, simplest to evaluate)
        n_vc, n_vf = coarse_cx.n_velocity, fine_cx.n_velocity
        pc = Uc[n_vc:n_vc + coarse_cx.n_pressure]
        pf = Uf[n_vf:n_vf + fine_cx.n_pressure]
        for xi in rng.uniform(0, 1, size=(100, 2)):
            vc = coarse_cx.pressure.space.eval_field(pc, xi)
            vf = fine_cx.pressure.space.eval_field(pf, xi)
            assert abs(vc - vf) < 1e-12
        # velocity components transfer the same way
        uc = np.zeros(coarse_cx.velocity.n_full)
        uc[coarse_cx.velocity.active_cols()] = Uc[:n_vc]
        uf = np.zeros(fine_cx.velocity.n_full)
        uf[fine_cx.velocity.active_cols()] = Uf[:n_vf]
        offs_c = coarse_cx.velocity.full_offsets
        offs_f = fine_cx.velocity.full_offsets
        for comp in range(2):
            cc = uc[offs_c[comp]:offs_c[comp + 1]]
            cf = uf[offs_f[comp]:offs_f[comp + 1]]
            for xi in rng.uniform(0, 1, size=(30, 2)):
                vc = coarse_cx.velocity.components[comp].space.eval_field(cc, xi)
                vf = fine_cx.velocity.components[comp].space.eval_field(cf, xi)
                assert abs(vc - vf) < 1e-12

    def test_restriction_is_adjoint(self, square_hier):
        hier = square_hier
        level = hier.levels[2]
        rng = np.random.default_rng(9)
        x = rng.standard_normal(level.K.shape[0])
        y = rng.standard_normal(hier.levels[1].K.shape[0])
        lhs = (level.P.T @ x) @ y
        rhs = x @ (level.P @ y)
        assert abs(lhs - rhs) < 1e-13 * max(1.0, abs(lhs))

    def test_multiplier_transfer_is_identity(self, square_hier):
        P = square_hier.levels[1].P
        col = P.getcol(P.shape[1] - 1).toarray().ravel()
        assert col[-1] == 1.0
        assert np.count_nonzero(col) == 1


class TestSubdomains:
    def test_count_and_sizes_2d(self):
        cx = build_complex(2, 2, 1)
        sd = enumerate_subdomains(cx)
        assert sd.n_sub == 4
        assert sd.rows.shape == (4, 8)
        for s in range(sd.n_sub):
            assert len(set(sd.rows[s])) == 8

    def test_local_div_rank_three(self):
        # each subdomain's 4-dim velocity maps onto the 3-dim zero-mean
        # pressure space: the local divergence block has rank exactly 3
        cx = build_complex(2, 2, 2)
        sd = enumerate_subdomains(cx)
        D = cx.div_op().toarray()
        for s in range(sd.n_sub):
            block = D[np.ix_(sd.pressure_flats(s), sd.velocity_rows(s))]
            assert np.linalg.matrix_rank(block, tol=1e-10) == 3

    def test_cover(self):
        # every element lies inside at least one generator support
        for cx in (build_complex(2, 2, 2), build_complex(3, 2, 1)):
            sd = enumerate_subdomains(cx)
            nel = cx.nel_per_dir
            h = 1.0 / nel
            covered = np.zeros((nel,) * cx.dim, dtype=bool)
            for s in range(sd.n_sub):
                lo, hi = sd.generator_support(s)
                lo_idx = np.round(lo / h).astype(int)
                hi_idx = np.round(hi / h).astype(int)
                covered[tuple(slice(a, b) for a, b in zip(lo_idx, hi_idx))] = True
            assert covered.all()

    def test_lexicographic_order_2d(self):
        cx = build_complex(2, 2, 2)
        sd = enumerate_subdomains(cx)
        assert sd.generators == sorted(sd.generators)

    def test_3d_counts(self):
        cx = build_complex(3, 2, 1)
        sd = enumerate_subdomains(cx)
        # one generator per active vector-potential basis function
        assert sd.n_sub == cx.potential.n_active == 36
        assert sd.rows.shape[1] == 8

    def test_gradient_patches_structure(self):
        cx = build_complex(3, 2, 1)
        groups = gradient_patches(cx)
        total = sum(g.n_sub for g in groups)
        assert total > 0
        for g in groups:
            assert g.rows.shape[1] == g.n_vel_local + g.border.shape[1]
            # interior patches carry the full 12 + 8 local complex
        largest = max(g.rows.shape[1] for g in groups)
        assert largest == 20

    def test_gradient_patches_2d_rejected(self):
        with pytest.raises(ValueError):
            gradient_patches(build_complex(2, 2, 1))


class TestSmoother:
    def test_exact_solution_is_fixed_point(self, square_hier):
        hier = square_hier
        K, F = hier.finest.K, hier.system.F
        Ustar = spla.spsolve(K.tocsc(), F)
        for kind in ("multiplicative", "additive"):
            U = Ustar.copy()
            hier.smooth(hier.n_levels, U, F, SmootherConfig(kind=kind), steps=1)
            assert np.max(np.abs(U - Ustar)) < 1e-12 * max(1.0, np.abs(Ustar).max())

    @pytest.mark.parametrize("kind", ["multiplicative", "additive"])
    def test_divergence_preserved_by_sweeps(self, square_hier, kind):
        hier = square_hier
        U = hier.initial_guess(3)
        F = hier.system.F
        for _ in range(4):
            hier.smooth(hier.n_levels, U, F, SmootherConfig(kind=kind), steps=1)
            assert hier.divergence_norm(U) < 1e-12

    @pytest.mark.parametrize("kind", ["multiplicative", "additive"])
    def test_divergence_preserved_3d(self, cube_hier, kind):
        hier = cube_hier
        U = hier.initial_guess(4)
        F = hier.system.F
        for _ in range(3):
            hier.smooth(hier.n_levels, U, F, SmootherConfig(kind=kind), steps=1)
            assert hier.divergence_norm(U) < 1e-12

    def test_additive_contracts_residual(self, square_hier):
        hier = square_hier
        U = hier.initial_guess(5)
        F = hier.system.F
        K = hier.finest.K
        r_before = np.linalg.norm(F - K @ U)
        hier.smooth(hier.n_levels, U, F, SmootherConfig(kind="additive", eta=0.5), steps=1)
        assert np.linalg.norm(F - K @ U) < r_before

    def test_multiplicative_strictly_decreases_residual(self, square_hier):
        hier = square_hier
        U = hier.initial_guess(6)
        F = hier.system.F
        K = hier.finest.K
        r_before = np.linalg.norm(F - K @ U)
        hier.smooth(hier.n_levels, U, F, SmootherConfig(), steps=1)
        assert np.linalg.norm(F - K @ U) < r_before

    def test_kernel_matches_reference(self, square_hier):
        hier = square_hier
        level = hier.finest
        F = hier.system.F
        U1 = hier.initial_guess(7)
        U2 = U1.copy()
        group = level.groups[0]
        r1 = F - level.K @ U1
        indptr, indices, data = level.csc_arrays()
        from compatmg.smoothers import multiplicative_sweep
        multiplicative_sweep(group.rows, group.lu, group.piv, indptr, indices,
                             data, U1, r1)
        r2 = F - level.K @ U2
        multiplicative_sweep_reference(group.rows, group.lu, group.piv,
                                       level.K, U2, r2)
        np.testing.assert_allclose(U1, U2, rtol=0, atol=1e-12)
        np.testing.assert_allclose(r1, r2, rtol=0, atol=1e-10)

    def test_multiplier_untouched(self, square_hier):
        hier = square_hier
        U = hier.initial_guess(8)
        lam = U[-1]
        hier.smooth(hier.n_levels, U, hier.system.F, SmootherConfig(), steps=2)
        assert U[-1] == lam

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SmootherConfig(kind="jacobi")
        with pytest.raises(ValueError):
            SmootherConfig(eta=1.5)
        with pytest.raises(ValueError):
            SmootherConfig(nu1=-1)


class TestVCycle:
    def test_degenerate_hierarchy_is_direct_solve(self):
        sol = manufactured_solution("square")
        hier = build_hierarchy(2, 2, 0, identity_square(), sol,
                               ProblemParams(sigma=1.0, nu=1.0))
        U = np.zeros(hier.finest.K.shape[0])
        hier.v_cycle(U, hier.system.F, SmootherConfig())
        rel = np.linalg.norm(hier.system.F - hier.finest.K @ U)
        assert rel / np.linalg.norm(hier.system.F) < 1e-12

    def test_divergence_free_across_cycles(self, square_hier):
        hier = square_hier
        U = hier.initial_guess(10)
        F = hier.system.F
        for _ in range(5):
            hier.v_cycle(U, F, SmootherConfig())
            scale = max(1.0, np.abs(U[:hier.finest.cx.n_velocity]).max())
            assert hier.divergence_norm(U) < 1e-11 * scale

    def test_monotone_residual_history(self, square_hier):
        res = square_hier.solve(SmootherConfig(), seed=0)
        hist = res.residual_history
        assert all(hist[i + 1] < hist[i] for i in range(len(hist) - 1))

    def test_solve_reaches_tolerance(self, square_hier):
        res = square_hier.solve(SmootherConfig(), tol=1e-6, seed=0)
        assert res.converged
        assert res.final_rel_residual <= 1e-6

    def test_solve_deterministic(self, square_hier):
        a = square_hier.solve(SmootherConfig(), seed=11)
        b = square_hier.solve(SmootherConfig(), seed=11)
        assert a.cycles == b.cycles
        assert a.residual_history == b.residual_history
        np.testing.assert_array_equal(a.U, b.U)

    def test_non_convergence_flagged(self, square_hier):
        res = square_hier.solve(SmootherConfig(), tol=1e-30, max_cycles=3, seed=0)
        assert not res.converged
        assert res.cycles == 3
        assert len(res.residual_history) == 4

    def test_matches_direct_solve(self, square_hier):
        hier = square_hier
        res = hier.solve(SmootherConfig(), tol=1e-12, max_cycles=60, seed=0)
        Ustar = spla.spsolve(hier.finest.K.tocsc(), hier.system.F)
        rel = np.linalg.norm(res.U - Ustar) / np.linalg.norm(Ustar)
        assert rel < 1e-8


class TestCycleCounts:
    """Smoke comparison against the benchmark study at desk scale."""

    def test_square_counts_small_levels(self):
        sol = manufactured_solution("square")
        expected = {1: 3, 2: 5, 3: 5}  # multiplicative V(1,2), Da = 1
        for nl, target in expected.items():
            sc = HierarchyScaffold(2, 2, nl, identity_square(), sol)
            hier = sc.realize(ProblemParams(sigma=1.0, nu=1.0))
            res = hier.solve(SmootherConfig(), seed=0)
            assert res.converged
            assert abs(res.cycles - target) <= 2

    def test_cube_counts_small_levels(self):
        sol = manufactured_solution("cube")
        for nl in (1, 2):
            sc = HierarchyScaffold(3, 2, nl, identity_cube(), sol)
            hier = sc.realize(ProblemParams(sigma=1.0, nu=1.0))
            res = hier.solve(SmootherConfig(), seed=0)
            assert res.converged
            assert res.cycles <= 3
