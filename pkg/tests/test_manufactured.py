"""Finite-difference oracles for the manufactured solutions.

Physical derivatives are validated against parametric central differences
composed with the exact inverse Jacobian; this pre-build check guards every
closed-form derivative the load assembly consumes.
"""

import numpy as np
import pytest

from compatmg.manufactured import manufactured_solution
from compatmg.splines import gauss_legendre

FD_STEP = 1e-6


def chain_rule_fd(sol, piece, xi):
    """d(piece)/dx_j via parametric central differences and J^{-1}."""
    geo = sol.geometry
    d = sol.dim
    Jinv = np.linalg.inv(geo.jacobian(xi))
    parts = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = FD_STEP
        parts.append((piece(xi + e) - piece(xi - e)) / (2 * FD_STEP))
    dpiece_dxi = np.stack(parts, axis=-1)  # (..., k)
    return np.einsum("...k,...kj->...j", dpiece_dxi, Jinv)


@pytest.fixture(scope="module", params=["square", "annulus", "cube", "cylinder"])
def sol(request):
    return manufactured_solution(request.param)


def interior_points(dim, n, seed=0):
    return np.random.default_rng(seed).uniform(0.05, 0.95, size=(n, dim))


class TestDerivativeBuildingBlocks:
    def test_velocity_gradient_matches_fd(self, sol):
        pts = interior_points(sol.dim, 100)
        G = sol.velocity_gradient(pts)
        for i in range(sol.dim):
            fd = chain_rule_fd(sol, lambda x, i=i: sol.velocity(x)[..., i], pts)
            scale = max(1.0, np.max(np.abs(G[..., i, :])))
            assert np.max(np.abs(G[..., i, :] - fd)) / scale < 1e-5

    def test_laplacian_matches_fd_of_gradient(self, sol):
        pts = interior_points(sol.dim, 100, seed=1)
        d = sol.dim
        lap = sol.laplacian(pts)
        Jinv = np.linalg.inv(sol.geometry.jacobian(pts))
        acc = np.zeros_like(lap)
        for k in range(d):
            e = np.zeros(d)
            e[k] = FD_STEP
            dG = (sol.velocity_gradient(pts + e)
                  - sol.velocity_gradient(pts - e)) / (2 * FD_STEP)
            # d gradu[i, j] / dx_j = sum_k d gradu[i, j]/dxi_k * Jinv[k, j]
            acc += np.einsum("nij,nj->ni", dG, Jinv[:, k, :])
        scale = max(1.0, np.max(np.abs(lap)))
        assert np.max(np.abs(lap - acc)) / scale < 1e-5

    def test_pressure_gradient_matches_fd(self, sol):
        pts = interior_points(sol.dim, 100, seed=2)
        gp = sol.pressure_gradient(pts)
        fd = chain_rule_fd(sol, sol.pressure, pts)
        scale = max(1.0, np.max(np.abs(gp)))
        assert np.max(np.abs(gp - fd)) / scale < 1e-5

    def test_advection_is_u_dot_grad_u(self, sol):
        pts = interior_points(sol.dim, 50, seed=3)
        u = sol.velocity(pts)
        G = sol.velocity_gradient(pts)
        direct = np.einsum("...k,...ik->...i", u, G)
        np.testing.assert_allclose(sol.advection(pts), direct, rtol=1e-12, atol=1e-12)


class TestSolutionInvariants:
    def test_divergence_free(self, sol):
        pts = interior_points(sol.dim, 200, seed=4)
        div = np.trace(sol.velocity_gradient(pts), axis1=-2, axis2=-1)
        assert np.max(np.abs(div)) < 1e-10

    def test_pressure_zero_mean(self, sol):
        xg, wg = gauss_legendre(20)
        axes = [xg] * sol.dim
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w = wg
        for _ in range(sol.dim - 1):
            w = np.multiply.outer(w, wg)
        det = sol.geometry.det_jacobian(grid)
        mean = np.sum(sol.pressure(grid) * det * w)
        assert abs(mean) < 1e-8

    def test_no_slip_boundary(self, sol):
        # the exact velocity vanishes on the whole boundary
        rng = np.random.default_rng(5)
        for k in range(sol.dim):
            for side in (0.0, 1.0):
                pts = rng.uniform(0, 1, size=(20, sol.dim))
                pts[:, k] = side
                assert np.max(np.abs(sol.velocity(pts))) < 1e-12

    def test_advection_field_unit_scale(self, sol):
        assert sol.advection_scale > 0
        pts = interior_points(sol.dim, 500, seed=6)
        speeds = np.linalg.norm(sol.advection_field(pts), axis=-1)
        assert speeds.max() <= 1.0 + 1e-12

    def test_advection_field_divergence_free(self, sol):
        pts = interior_points(sol.dim, 100, seed=7)
        div = np.trace(sol.velocity_gradient(pts), axis1=-2, axis2=-1) / sol.advection_scale
        assert np.max(np.abs(div)) < 1e-10


class TestForcing:
    def test_reduces_to_pressure_gradient(self, sol):
        pts = interior_points(sol.dim, 20, seed=8)
        f = sol.forcing(pts, sigma=0.0, nu=0.0)
        np.testing.assert_allclose(f, sol.pressure_gradient(pts), atol=1e-14)

    def test_linear_combination(self, sol):
        pts = interior_points(sol.dim, 20, seed=9)
        f = sol.forcing(pts, sigma=3.0, nu=0.25, with_advection=True)
        expected = (3.0 * sol.velocity(pts) - 0.25 * sol.laplacian(pts)
                    + sol.pressure_gradient(pts) + sol.advection(pts) / sol.advection_scale)
        np.testing.assert_allclose(f, expected, rtol=1e-13, atol=1e-13)


def test_cube_laplacian_divergence_free():
    # div and Laplacian commute for the cube solution, so the viscous part of
    # the forcing is divergence-free as well
    sol = manufactured_solution("cube")
    pts = interior_points(3, 60, seed=10)
    div = np.zeros(len(pts))
    for j in range(3):
        fd = chain_rule_fd(sol, lambda x, j=j: sol.laplacian(x)[..., j], pts)
        div += fd[..., j]
    assert np.max(np.abs(div)) < 1e-4 * max(1.0, np.max(np.abs(sol.laplacian(pts))))
