import numpy as np
import pytest

from sparsepose.bcd import solve_bcd
from sparsepose.em import EmReport, expected_pose, posterior_means, q_value, solve_em
from sparsepose.types import GridGeometry, HeatMapStack, ModelParams, project_sequence_model

from conftest import random_estimate
from oracles import expected_loss_on_grid, grid_posterior_mean


def _inside_estimate(rng, n=4, p=6, k=3):
    """Random estimate whose projections stay well inside the unit box."""
    est = random_estimate(rng, n=n, p=p, k=k)
    return est.with_coeffs(0.15 * est.C / np.abs(est.C).sum(axis=0, keepdims=True))


def _delta_maps(points, H, W):
    n, _, p = points.shape
    geom = GridGeometry(H, W)
    maps = np.zeros((n, p, H, W))
    centers = np.empty_like(points)
    for t in range(n):
        cells = geom.cell_of(points[t].T)
        for j, c in enumerate(cells):
            maps[t, j].flat[c] = 1.0
            centers[t, :, j] = geom.cell_centers()[c]
    return HeatMapStack(maps), centers


def _gaussian_map(m, tau, H, W):
    xs = (np.arange(W) + 0.5) / W
    ys = (np.arange(H) + 0.5) / H
    X, Y = np.meshgrid(xs, ys)
    h = np.exp(-0.5 * tau * ((X - m[0]) ** 2 + (Y - m[1]) ** 2))
    return h / h.sum()


class TestPosteriorMeans:
    def test_uniform_map_returns_center(self):
        H = W = 64
        maps = np.full((1, 3, H, W), 1.0 / (H * W))
        mu = np.array([[[0.3, 0.5, 0.62], [0.4, 0.5, 0.71]]])
        means, bad = posterior_means(maps, mu, 4e4)
        assert not bad.any()
        assert np.max(np.abs(means - mu)) <= 0.5 / 64

    def test_uniform_map_at_box_center_any_precision(self):
        maps = np.full((1, 1, 10, 10), 0.01)
        means, _ = posterior_means(maps, np.full((1, 2, 1), 0.5), 4.0)
        np.testing.assert_allclose(means[0, :, 0], [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("nu", [4.0, 1e3, 1e8])
    def test_delta_map(self, nu):
        maps = np.zeros((1, 1, 8, 8))
        maps[0, 0, 2, 5] = 1.0
        means, bad = posterior_means(maps, np.array([[[0.9], [0.05]]]), nu)
        assert not bad.any()
        np.testing.assert_allclose(means[0, :, 0], [5.5 / 8, 2.5 / 8], atol=1e-14)

    def test_gaussian_product(self):
        nu = 400.0
        m, mu = np.array([0.42, 0.55]), np.array([0.50, 0.47])
        h = _gaussian_map(m, nu, 256, 256)
        means, _ = posterior_means(h[None, None], mu[None, :, None], nu)
        np.testing.assert_allclose(means[0, :, 0], 0.5 * (m + mu), atol=1e-3)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        h = rng.random((7, 9)) ** 4
        h /= h.sum()
        mu = rng.uniform(0, 1, 2)
        means, _ = posterior_means(h[None, None], mu[None, :, None], 30.0)
        np.testing.assert_allclose(means[0, :, 0], grid_posterior_mean(h, mu, 30.0), atol=1e-13)

    def test_far_center_underflow_is_finite(self):
        maps = np.zeros((1, 1, 16, 16))
        maps[0, 0, 0, 0] = 1e-30
        maps[0, 0, 15, 15] = 1.0 - 1e-30
        means, bad = posterior_means(maps, np.array([[[-50.0], [-50.0]]]), 1e6)
        assert np.all(np.isfinite(means)) and not bad.any()
        np.testing.assert_allclose(means[0, :, 0], [0.5 / 16, 0.5 / 16])

    def test_empty_map_falls_back(self):
        maps = np.zeros((1, 2, 4, 4))
        maps[0, 1, 1, 1] = 1.0
        mu = np.array([[[0.2, 0.7], [0.3, 0.9]]])
        means, bad = posterior_means(maps, mu, 4.0)
        assert bad.tolist() == [[True, False]]
        np.testing.assert_array_equal(means[0, :, 0], mu[0, :, 0])


class TestExpectedPose:
    def test_uniform_maps_give_projection(self, rng):
        est = _inside_estimate(rng)
        maps = HeatMapStack(np.full((4, 6, 64, 64), 1.0 / 4096))
        out = expected_pose(maps, est, 4e4)
        assert np.max(np.abs(out.coords - project_sequence_model(est))) <= 0.5 / 64

    def test_shape_mismatch(self, rng):
        est = random_estimate(rng)
        with pytest.raises(ValueError):
            expected_pose(HeatMapStack(np.full((4, 5, 2, 2), 0.25)), est, 4.0)

    def test_requires_stack(self, rng):
        with pytest.raises(TypeError):
            expected_pose(np.zeros((4, 6, 2, 2)), random_estimate(rng), 4.0)


class TestQValue:
    def test_perfect_fit_zero_prior(self, rng):
        est = random_estimate(rng)
        W = project_sequence_model(est)
        assert q_value(est, W, ModelParams(alpha=0, beta=0, gamma=0)) == pytest.approx(0.0, abs=1e-20)

    def test_decreases_with_prior_weight(self, rng):
        est = random_estimate(rng)
        W = project_sequence_model(est)
        qs = [q_value(est, W, ModelParams(alpha=a, beta=b, gamma=g)) for a, b, g in [(0.1, 1, 0.1), (0.2, 2, 0.2), (1, 5, 1)]]
        assert qs[0] > qs[1] > qs[2]

    def test_expected_loss_differs_by_constant(self, rng):
        nu = 50.0
        prev = _inside_estimate(rng, n=2, p=3)
        maps = rng.random((2, 3, 24, 24)) ** 3
        maps = HeatMapStack.normalized(maps)
        EW = expected_pose(maps, prev, nu).coords
        mu_prev = project_sequence_model(prev)
        params = ModelParams(alpha=0, beta=0, gamma=0, nu=nu)
        gaps = []
        for _ in range(10):
            theta = _inside_estimate(rng, n=2, p=3)
            grid = expected_loss_on_grid(maps.maps, mu_prev, project_sequence_model(theta), nu)
            gaps.append(grid + q_value(theta, EW, params))
        assert np.var(gaps, ddof=1) <= 1e-10


class TestSolveEm:
    def test_delta_maps_reduce_to_known_2d(self, rng):
        truth = _inside_estimate(rng, n=5, p=6, k=3)
        maps, centers = _delta_maps(project_sequence_model(truth), 64, 64)
        start = truth.with_coeffs(truth.C * 0.8)
        params = ModelParams(m_step_apg_rel_tol=0.0)
        est, EW, report = solve_em(maps, start, params)
        assert report.converged and report.em_iterations <= 2
        np.testing.assert_array_equal(EW.coords, centers)
        ref, _ = solve_bcd(start, centers, params)
        np.testing.assert_allclose(est.C, ref.C, atol=1e-12)
        np.testing.assert_allclose(est.R, ref.R, atol=1e-12)

    def test_uniform_maps_terminate(self, rng):
        est0 = _inside_estimate(rng)
        maps = HeatMapStack(np.full((4, 6, 16, 16), 1.0 / 256))
        est, EW, report = solve_em(maps, est0, ModelParams(em_max_iters=10))
        assert report.termination_reason in {"tolerance", "max_iters"}
        assert report.converged == (report.termination_reason == "tolerance")
        assert np.all(np.isfinite(EW.coords)) and np.all(np.isfinite(est.C))
        assert len(report.expected_pose_shift_trace) == report.em_iterations - 1

    def test_report(self):
        with pytest.raises(ValueError):
            EmReport(0, [], [], False)
        d = EmReport(1, [-1.0], [], True, "tolerance").as_dict()
        assert d["em_iterations"] == 1 and d["q_trace"] == [-1.0]
