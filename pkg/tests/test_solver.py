import numpy as np
import pytest

from conftest import dense_latent_system, dense_scale_system, rel_err
from nupimage.model import ChainScales, HyperParams, LatentField, ObservationField
from nupimage.nup import GaussianMessage
from nupimage.solver import (CGDivergenceError, QuadraticProblem, UnanchoredFieldError, build_latent_operator,
                             build_r_field_operator, cg_solve, dot)


def matrix_problem(a, b, x0=None):
    return QuadraticProblem(lambda x: a @ x, b, np.zeros_like(b) if x0 is None else x0, np.diag(a).copy())


def random_scales(rng, shape2d):
    return ChainScales(*(rng.uniform(0.2, 2.0, shape2d) for _ in range(2)),
                       *(rng.uniform(0.5, 3.0, shape2d) for _ in range(2)),
                       *(rng.uniform(0.1, 1.0, shape2d) for _ in range(2)))


def random_obs(rng, h, w, c):
    return ObservationField(rng.random((h, w, c)), rng.uniform(0.5, 2.0, (h, w)))


class TestCG:
    def test_identity_one_iteration(self, rng):
        b = rng.normal(size=6)
        res = cg_solve(matrix_problem(np.eye(6), b))
        np.testing.assert_allclose(res.x, b)
        assert res.iterations == 1

    def test_diagonal(self):
        res = cg_solve(matrix_problem(np.diag([1.0, 2.0]), np.array([1.0, 2.0])))
        np.testing.assert_allclose(res.x, [1.0, 1.0])

    def test_random_spd(self, rng):
        m = rng.normal(size=(8, 8))
        a = m @ m.T + 0.5 * np.eye(8)
        b = rng.normal(size=8)
        res = cg_solve(matrix_problem(a, b), tol=1e-12, max_iters=100)
        assert rel_err(res.x, np.linalg.solve(a, b)) <= 1e-8
        assert res.residual <= 1e-12

    def test_max_iters_reported(self, rng):
        m = rng.normal(size=(30, 30))
        a = m @ m.T + 1e-3 * np.eye(30)
        res = cg_solve(matrix_problem(a, rng.normal(size=30)), tol=1e-14, max_iters=3)
        assert res.iterations == 3 and res.residual > 1e-14

    def test_zero_rhs(self):
        res = cg_solve(matrix_problem(np.eye(3), np.zeros(3)))
        assert res.iterations == 0 and not res.x.any()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self):
        a = np.eye(3)
        a[0, 0] = np.inf
        with pytest.raises(CGDivergenceError):
            cg_solve(matrix_problem(a, np.ones(3)))

    def test_deterministic(self, rng):
        m = rng.normal(size=(20, 20))
        a = m @ m.T + np.eye(20)
        b = rng.normal(size=20)
        r1 = cg_solve(matrix_problem(a, b))
        r2 = cg_solve(matrix_problem(a, b))
        assert np.array_equal(r1.x, r2.x)

    def test_energy_never_increases(self, rng):
        m = rng.normal(size=(15, 15))
        a = m @ m.T + 0.1 * np.eye(15)
        prob = matrix_problem(a, rng.normal(size=15), rng.normal(size=15))
        for iters in (1, 2, 5, 50):
            assert prob.energy(cg_solve(prob, 1e-10, iters).x) <= prob.energy(prob.x0) + 1e-12

    def test_dot(self):
        assert dot(np.arange(4.0), np.ones(4)) == 6.0


class TestLatentOperator:
    @pytest.mark.parametrize("h,w,c", [(3, 3, 1), (4, 5, 1), (3, 4, 3)])
    def test_matches_dense_assembly(self, rng, h, w, c):
        obs = random_obs(rng, h, w, c)
        scales = random_scales(rng, (h, w))
        prob = build_latent_operator(obs, scales)
        a, b = dense_latent_system(obs, scales)
        applied = np.column_stack([prob.apply(e) for e in np.eye(prob.dimension)])
        np.testing.assert_allclose(applied, a, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(prob.rhs, b, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(prob.diagonal, np.diag(a), rtol=1e-12)

    def test_targets_match_dense_assembly(self, rng):
        obs = random_obs(rng, 4, 4, 3)
        scales = random_scales(rng, (4, 4))
        targets = {o: rng.normal(size=(4, 4, 3)) for o in ("row", "col")}
        prob = build_latent_operator(obs, scales, targets=targets)
        _, b = dense_latent_system(obs, scales, targets=targets)
        np.testing.assert_allclose(prob.rhs, b, rtol=1e-12, atol=1e-12)

    def test_cap_applies_to_zero_variance(self, rng):
        obs = random_obs(rng, 4, 4, 1)
        s = random_scales(rng, (4, 4))
        scales = ChainScales(np.zeros((4, 4)), s.sigma_u2_col, np.full((4, 4), 1e9), s.r_col,
                             s.sigma_d2_row, s.sigma_d2_col)
        prob = build_latent_operator(obs, scales, cap_ratio=50.0)
        a, _ = dense_latent_system(obs, scales, cap_ratio=50.0)
        applied = np.column_stack([prob.apply(e) for e in np.eye(prob.dimension)])
        np.testing.assert_allclose(applied, a, rtol=1e-12, atol=1e-9)

    def test_separate_level_step_cap(self, rng):
        obs = random_obs(rng, 4, 4, 1)
        s = random_scales(rng, (4, 4))
        scales = ChainScales(np.zeros((4, 4)), np.zeros((4, 4)), np.full((4, 4), 1e9), s.r_col,
                             s.sigma_d2_row, s.sigma_d2_col)
        prob = build_latent_operator(obs, scales, cap_ratio=50.0, u_cap_ratio=1e4)
        a, _ = dense_latent_system(obs, scales, cap_ratio=50.0, u_cap_ratio=1e4)
        applied = np.column_stack([prob.apply(e) for e in np.eye(prob.dimension)])
        np.testing.assert_allclose(applied, a, rtol=1e-12, atol=1e-9)

    def test_symmetric_and_linear(self, rng):
        obs = random_obs(rng, 6, 5, 3)
        prob = build_latent_operator(obs, random_scales(rng, (6, 5)))
        x, y = rng.normal(size=(2, prob.dimension))
        assert abs(dot(prob.apply(x), y) - dot(x, prob.apply(y))) <= 1e-10 * abs(dot(prob.apply(x), y))
        np.testing.assert_allclose(prob.apply(2 * x - 3 * y), 2 * prob.apply(x) - 3 * prob.apply(y), atol=1e-10)

    @pytest.mark.parametrize("c", [1, 3])
    def test_solution_matches_dense_solve(self, rng, c):
        obs = random_obs(rng, 5, 5, c)
        scales = random_scales(rng, (5, 5))
        res = cg_solve(build_latent_operator(obs, scales), 1e-12, 5000)
        a, b = dense_latent_system(obs, scales)
        assert rel_err(res.x, np.linalg.solve(a, b)) <= 1e-8

    def test_gradient_matches_finite_differences(self, rng):
        obs = random_obs(rng, 4, 4, 1)
        scales = random_scales(rng, (4, 4))
        prob = build_latent_operator(obs, scales)
        op = prob.operator
        x = rng.normal(size=prob.dimension)
        grad = prob.apply(x) - prob.rhs
        h = 1e-6
        fd = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h
            jp = op.objective(LatentField.unpack(x + e, obs.shape))
            jm = op.objective(LatentField.unpack(x - e, obs.shape))
            fd[k] = (jp - jm) / (2 * h)
        assert rel_err(grad, fd) <= 1e-5

    def test_data_term_dominates(self, rng):
        obs = ObservationField.uniform(rng.random((4, 4)), 0.1)
        huge = np.full((4, 4), 1e300)
        scales = ChainScales(huge, huge, np.full((4, 4), 1e-12), np.full((4, 4), 1e-12), huge, huge)
        res = cg_solve(build_latent_operator(obs, scales), 1e-12, 500)
        np.testing.assert_allclose(res.x[:16], obs.values.ravel(), atol=1e-9)

    def test_ramp_is_zero_cost(self):
        ramp = np.tile(np.linspace(0.1, 0.9, 6), (5, 1))[:, :, None]
        obs = ObservationField.uniform(ramp, 1 / 30)
        start = LatentField(ramp, np.full_like(ramp, 0.8 / 5), np.zeros_like(ramp))
        scales = ChainScales.initial((5, 6), HyperParams(sigma_z=1 / 30))
        prob = build_latent_operator(obs, scales, start)
        res = cg_solve(prob, 1e-8, 100)
        assert res.iterations == 0
        np.testing.assert_allclose(res.x, start.pack(), atol=1e-15)

    def test_transpose_equivariance(self, rng):
        obs = random_obs(rng, 5, 7, 1)
        scales = random_scales(rng, (5, 7))
        x = LatentField.unpack(cg_solve(build_latent_operator(obs, scales), 1e-12, 5000).x, obs.shape)
        xt = LatentField.unpack(cg_solve(build_latent_operator(obs.transpose(), scales.transpose()),
                                         1e-12, 5000).x, (7, 5, 1))
        back = xt.transpose()
        for f in ("y", "d_row", "d_col"):
            np.testing.assert_allclose(getattr(back, f), getattr(x, f), rtol=1e-9, atol=1e-10)

    def test_objective_descends(self, rng):
        obs = random_obs(rng, 6, 6, 3)
        prob = build_latent_operator(obs, random_scales(rng, (6, 6)))
        for iters in (1, 3, 20):
            assert prob.energy(cg_solve(prob, 1e-8, iters).x) <= prob.energy(prob.x0) + 1e-12


class TestScaleFieldOperator:
    def test_matches_dense_assembly(self, rng):
        w = rng.uniform(0.1, 2, (4, 5))
        xi = rng.normal(size=(4, 5))
        sr, sc = rng.uniform(0.1, 2, (2, 4, 5))
        prob = build_r_field_operator(GaussianMessage(w, xi), sr, sc)
        a, b = dense_scale_system(w, xi, sr, sc)
        applied = np.column_stack([prob.apply(e) for e in np.eye(20)])
        np.testing.assert_allclose(applied, a, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(prob.rhs, b)
        np.testing.assert_allclose(prob.diagonal, np.diag(a), rtol=1e-12)

    def test_random_field_solve(self, rng):
        w = rng.uniform(0.1, 2, (4, 4))
        xi = rng.normal(size=(4, 4))
        sr, sc = rng.uniform(0.1, 2, (2, 4, 4))
        res = cg_solve(build_r_field_operator(GaussianMessage(w, xi), sr, sc), 1e-13, 500)
        a, b = dense_scale_system(w, xi, sr, sc)
        assert rel_err(res.x, np.linalg.solve(a, b)) <= 1e-8

    def test_decoupled_limit(self, rng):
        w = rng.uniform(0.5, 2, (4, 4))
        xi = rng.normal(size=(4, 4))
        big = np.full((4, 4), 1e30)
        res = cg_solve(build_r_field_operator(GaussianMessage(w, xi), big, big), 1e-13, 500)
        np.testing.assert_allclose(res.x, (xi / w).ravel(), rtol=1e-12)

    def test_uniform_messages_give_constant_field(self, rng):
        w = np.full((5, 4), 0.7)
        sr, sc = rng.uniform(0, 2, (2, 5, 4))
        res = cg_solve(build_r_field_operator(GaussianMessage(w, 0.7 * 3.0 * np.ones((5, 4))), sr, sc), 1e-13, 500)
        np.testing.assert_allclose(res.x, 3.0, rtol=1e-10)

    def test_zero_increment_variance_is_capped(self, rng):
        w = rng.uniform(0.5, 2, (3, 3))
        xi = rng.normal(size=(3, 3))
        zero = np.zeros((3, 3))
        prob = build_r_field_operator(GaussianMessage(w, xi), zero, zero, cap_ratio=10.0)
        a, _ = dense_scale_system(w, xi, zero, zero, cap_ratio=10.0)
        applied = np.column_stack([prob.apply(e) for e in np.eye(9)])
        np.testing.assert_allclose(applied, a, rtol=1e-12)

    def test_unanchored(self):
        with pytest.raises(UnanchoredFieldError):
            build_r_field_operator(GaussianMessage(np.zeros((3, 3)), np.zeros((3, 3))), np.ones((3, 3)), np.ones((3, 3)))
