"""Penalized negative log-likelihood and its gradients.

Every solver evaluates the model through this module so that the
objective traces of the different steps are directly comparable.
"""

from dataclasses import dataclass

import numpy as np

from .rotations import skew
from .types import Pose2DSequence


@dataclass(frozen=True)
class ObjectiveBreakdown:
    loss: float
    l1_term: float
    coeff_smooth_term: float
    rot_smooth_term: float

    @property
    def total(self):
        return self.loss + self.l1_term + self.coeff_smooth_term + self.rot_smooth_term

    def as_dict(self):
        return {
            "loss": self.loss,
            "l1_term": self.l1_term,
            "coeff_smooth_term": self.coeff_smooth_term,
            "rot_smooth_term": self.rot_smooth_term,
            "total": self.total,
        }


def as_observations(observations):
    """Accept a Pose2DSequence or a raw (n, 2, p) array."""
    if isinstance(observations, Pose2DSequence):
        return observations.coords
    W = np.asarray(observations, dtype=float)
    if W.ndim != 3 or W.shape[1] != 2:
        raise ValueError(f"observations must be n x 2 x p, got {W.shape}")
    return W


def _check(estimate, W):
    n, _, p = W.shape
    if estimate.frame_count != n or estimate.dictionary.joint_count != p:
        raise ValueError(
            f"dimension mismatch: estimate has {estimate.frame_count} frames x "
            f"{estimate.dictionary.joint_count} joints, observations {n} x {p}"
        )


def residuals(estimate, observations):
    """W_t - R_t S_t - T_t 1^T for every frame, shape (n, 2, p)."""
    W = as_observations(observations)
    _check(estimate, W)
    S = estimate.shapes()
    return W - estimate.R[:, :2] @ S - estimate.T[:, :, None]


def data_loss(estimate, observations, nu):
    r = residuals(estimate, observations)
    return 0.5 * nu * float(np.sum(r * r))


def forward_diff(X, axis):
    return np.diff(X, axis=axis)


def coeff_smoothness(C):
    """0.5 * ||C D^T||_F^2 with D the forward difference over frames."""
    d = np.diff(C, axis=1)
    return 0.5 * float(np.sum(d * d))


def rotation_smoothness(R):
    """0.5 * sum_t ||Rbar_{t+1} - Rbar_t||_F^2 on the 2x3 projected blocks."""
    d = np.diff(R[:, :2, :], axis=0)
    return 0.5 * float(np.sum(d * d))


def prior(estimate, params):
    return (
        params.alpha * float(np.sum(np.abs(estimate.C)))
        + params.beta * coeff_smoothness(estimate.C)
        + params.gamma * rotation_smoothness(estimate.R)
    )


def objective(estimate, observations, params):
    """Full breakdown of loss + prior."""
    return ObjectiveBreakdown(
        loss=data_loss(estimate, observations, params.nu),
        l1_term=params.alpha * float(np.sum(np.abs(estimate.C))),
        coeff_smooth_term=params.beta * coeff_smoothness(estimate.C),
        rot_smooth_term=params.gamma * rotation_smoothness(estimate.R),
    )


def laplacian_apply(X, axis=-1):
    """D^T D applied along ``axis`` (free-boundary path-graph Laplacian)."""
    X = np.swapaxes(X, axis, -1)
    out = np.zeros_like(X)
    d = X[..., 1:] - X[..., :-1]
    out[..., :-1] -= d
    out[..., 1:] += d
    return np.swapaxes(out, axis, -1)


def grad_coeffs(estimate, observations, params):
    """Gradient of loss + coefficient smoothness w.r.t. C, shape (k, n).

    The L1 term is excluded; it is handled by the proximal step.
    """
    r = residuals(estimate, observations)  # (n, 2, p)
    PB = np.einsum("nij,kjp->nkip", estimate.R[:, :2], estimate.B)  # (n, k, 2, p)
    g = -params.nu * np.einsum("nkip,nip->kn", PB, r)
    return g + params.beta * laplacian_apply(estimate.C, axis=1)


def rotation_euclidean_grad(R, S, W, T, nu, gamma):
    """Euclidean gradient of the rotation subproblem w.r.t. full 3x3 R_t.

    Only the top two rows receive gradient, since the model uses the
    projected 2x3 block alone.
    """
    r = W - R[:, :2] @ S - T[:, :, None]
    G = np.zeros_like(R)
    G[:, :2] = -nu * r @ np.swapaxes(S, -1, -2)
    if gamma and R.shape[0] > 1:
        G[:, :2] += gamma * laplacian_apply(R[:, :2], axis=0)
    return G


def rotation_subproblem_value(R, S, W, T, nu, gamma):
    r = W - R[:, :2] @ S - T[:, :, None]
    return 0.5 * nu * float(np.sum(r * r)) + gamma * rotation_smoothness(R)


def riemannian_grad(R, G):
    """Project an ambient gradient onto the tangent spaces R_t so(3)."""
    return R @ skew(np.swapaxes(R, -1, -2) @ G)


def grad_rotations(estimate, observations, params):
    """Riemannian gradient of loss + rotation smoothness, shape (n, 3, 3).

    Each slice is a tangent vector R_t Omega_t with Omega_t skew-symmetric.
    """
    W = as_observations(observations)
    _check(estimate, W)
    G = rotation_euclidean_grad(
        estimate.R, estimate.shapes(), W, estimate.T, params.nu, params.gamma
    )
    return riemannian_grad(estimate.R, G)
