import numpy as np
import pytest

from sparsepose.objective import (
    coeff_smoothness,
    data_loss,
    grad_coeffs,
    grad_rotations,
    laplacian_apply,
    objective,
    prior,
)
from sparsepose.types import (
    CameraTrajectory,
    CoeffSequence,
    ModelParams,
    Pose2DSequence,
    PoseDictionary,
    SequenceEstimate,
    project_sequence_model,
)

from conftest import random_estimate, random_observations
from oracles import fd_grad_coeffs, fd_rot_directional, loss_direct, prior_direct


def _single_joint(C=((1.0,),), R=None, T=((0.0, 0.0),)):
    atoms = np.zeros((len(C), 3, 1))
    atoms[:, 0, 0] = 1.0
    C = np.array(C, dtype=float)
    n = C.shape[1]
    R = np.tile(np.eye(3), (n, 1, 1)) if R is None else R
    return SequenceEstimate(CoeffSequence(C), CameraTrajectory(R, np.array(T, dtype=float)), PoseDictionary(atoms))


class TestDataLoss:
    def test_perfect_fit(self, rng):
        est = random_estimate(rng)
        assert data_loss(est, project_sequence_model(est), 4.0) == pytest.approx(0.0, abs=1e-25)

    def test_hand_value(self):
        est = _single_joint(C=((0.0,),))
        W = np.array([[[0.3], [0.4]]])
        assert data_loss(est, W, 4.0) == pytest.approx(0.5, rel=1e-15)

    def test_linear_in_nu(self, rng):
        est = random_estimate(rng)
        W = random_observations(rng, 4, 6)
        assert data_loss(est, W, 8.0) == pytest.approx(2.0 * data_loss(est, W, 4.0), rel=1e-14)

    def test_matches_loop_oracle(self, rng):
        est = random_estimate(rng, n=5, p=7, k=4)
        W = random_observations(rng, 5, 7)
        ref = loss_direct(est.C, est.R, est.T, est.B, W.coords, 4.0)
        assert data_loss(est, W, 4.0) == pytest.approx(ref, rel=1e-12)

    def test_dimension_mismatch(self, rng):
        est = random_estimate(rng, n=4, p=6)
        with pytest.raises(ValueError, match="dimension mismatch"):
            data_loss(est, np.zeros((4, 2, 5)), 4.0)


class TestPrior:
    def test_constant_sequence(self):
        est = _single_joint(C=((2.0, 2.0, 2.0),), T=np.zeros((3, 2)))
        assert prior(est, ModelParams()) == pytest.approx(0.1 * 6.0)

    def test_hand_value(self):
        est = _single_joint(C=((1.0, 3.0),), T=np.zeros((2, 2)))
        assert prior(est, ModelParams(alpha=0.1, beta=5.0)) == pytest.approx(10.4, rel=1e-15)

    def test_zero(self):
        est = _single_joint(C=((0.0, 0.0),), T=np.zeros((2, 2)))
        assert prior(est, ModelParams()) == 0.0

    def test_only_l1_without_smoothness(self, rng):
        est = random_estimate(rng)
        p = ModelParams(alpha=0.37, beta=0.0, gamma=0.0)
        assert prior(est, p) == 0.37 * float(np.sum(np.abs(est.C)))

    def test_matches_loop_oracle(self, rng):
        est = random_estimate(rng, n=6)
        p = ModelParams(alpha=0.2, beta=3.0, gamma=0.7)
        ref = prior_direct(est.C, est.R, 0.2, 3.0, 0.7)
        assert prior(est, p) == pytest.approx(ref, rel=1e-12)


class TestBreakdown:
    def test_total_is_sum(self, rng):
        est = random_estimate(rng)
        b = objective(est, random_observations(rng, 4, 6), ModelParams())
        assert b.total == pytest.approx(b.loss + b.l1_term + b.coeff_smooth_term + b.rot_smooth_term, rel=1e-12)
        assert min(b.loss, b.l1_term, b.coeff_smooth_term, b.rot_smooth_term) >= 0
        assert set(b.as_dict()) == {"loss", "l1_term", "coeff_smooth_term", "rot_smooth_term", "total"}


class TestLaplacian:
    def test_matches_explicit_matrix(self, rng):
        n = 6
        D = np.diff(np.eye(n), axis=0)
        X = rng.standard_normal((3, n))
        np.testing.assert_allclose(laplacian_apply(X, axis=1), X @ D.T @ D, atol=1e-14)

    def test_energy(self, rng):
        C = rng.standard_normal((2, 5))
        assert coeff_smoothness(C) == pytest.approx(0.5 * float(np.vdot(C, laplacian_apply(C, 1))))


class TestGradCoeffs:
    def test_stationary_at_perfect_fit(self, rng):
        est = random_estimate(rng)
        g = grad_coeffs(est, project_sequence_model(est), ModelParams(beta=0.0))
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, p, k = rng.integers(1, 10), rng.integers(1, 8), rng.integers(1, 6)
        est = random_estimate(rng, n=n, p=p, k=k)
        W = random_observations(rng, n, p)
        params = ModelParams(beta=2.5)
        g = grad_coeffs(est, W, params)
        ref = fd_grad_coeffs(est.C, est.R, est.T, est.B, W.coords, params.nu, params.beta)
        assert np.linalg.norm(g - ref) <= 1e-6 * max(np.linalg.norm(ref), 1e-12)

    def test_linear_in_observations(self, rng):
        est = random_estimate(rng)
        W1 = random_observations(rng, 4, 6).coords
        W2 = random_observations(rng, 4, 6).coords
        p = ModelParams(beta=0.0)
        g0 = grad_coeffs(est, np.zeros_like(W1), p)
        lhs = grad_coeffs(est, 2.0 * W1 - W2, p) - g0
        rhs = 2.0 * (grad_coeffs(est, W1, p) - g0) - (grad_coeffs(est, W2, p) - g0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestGradRotations:
    def test_zero_at_exact_fit(self, rng):
        est = random_estimate(rng)
        G = grad_rotations(est, project_sequence_model(est), ModelParams(gamma=0.0))
        np.testing.assert_allclose(G, 0.0, atol=1e-12)

    def test_tangent(self, rng):
        est = random_estimate(rng)
        G = grad_rotations(est, random_observations(rng, 4, 6), ModelParams())
        A = np.swapaxes(est.R, 1, 2) @ G
        np.testing.assert_allclose(A, -np.swapaxes(A, 1, 2), atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_directional_derivatives(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, p, k = rng.integers(1, 10), rng.integers(1, 8), rng.integers(1, 6)
        est = random_estimate(rng, n=n, p=p, k=k)
        W = random_observations(rng, n, p)
        params = ModelParams(gamma=1.3)
        G = grad_rotations(est, W, params)
        for _ in range(3):
            xi = rng.standard_normal((n, 3))
            Xi = np.stack([np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]]) for x, y, z in xi])
            analytic = float(np.sum(G * (est.R @ Xi)))
            ref = fd_rot_directional(est.C, est.R, est.T, est.B, W.coords, params.nu, params.gamma, xi)
            assert abs(analytic - ref) <= 1e-5 * max(abs(ref), 1.0)
