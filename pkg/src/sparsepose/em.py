"""EM over a sequence whose 2D poses are only known through heat maps.

The E-step replaces every joint location by its posterior mean under the
heat map times a Gaussian centered at the current model projection. The
M-step re-solves the penalized fit on those expected locations with the
block coordinate descent solver, warm-started from the previous estimate.
"""

from dataclasses import dataclass, field

import numpy as np

from .bcd import solve_bcd
from .objective import objective
from .types import HeatMapStack, Pose2DSequence, project_sequence_model


@dataclass(frozen=True)
class EmReport:
    em_iterations: int
    q_trace: list
    expected_pose_shift_trace: list
    converged: bool
    termination_reason: str = ""
    m_step_iterations: list = field(default_factory=list)
    fallback_count: int = 0

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be at least 1")

    def as_dict(self):
        return {
            "em_iterations": self.em_iterations,
            "q_trace": [float(q) for q in self.q_trace],
            "expected_pose_shift_trace": [float(s) for s in self.expected_pose_shift_trace],
            "converged": bool(self.converged),
            "termination_reason": self.termination_reason,
            "m_step_iterations": [int(i) for i in self.m_step_iterations],
            "fallback_count": int(self.fallback_count),
        }


def posterior_means(maps, mu, nu):
    """Grid posterior means for maps (n, p, H, W) and centers mu (n, 2, p).

    Returns (means (n, 2, p), fallback mask (n, p)). Weights are shifted by
    their maximum in the log domain; a joint whose map carries no usable
    mass falls back to its center.
    """
    n, p, H, W = maps.shape
    xs = (np.arange(W) + 0.5) / W
    ys = (np.arange(H) + 0.5) / H
    # separable Gaussian exponents, (n, p, W) and (n, p, H)
    ex = -0.5 * nu * (xs[None, None, :] - mu[:, 0, :, None]) ** 2
    ey = -0.5 * nu * (ys[None, None, :] - mu[:, 1, :, None]) ** 2
    with np.errstate(divide="ignore"):
        logw = np.log(maps) + ey[..., :, None] + ex[..., None, :]
    top = logw.max(axis=(2, 3), keepdims=True)
    ok = np.isfinite(top)
    w = np.exp(logw - np.where(ok, top, 0.0))
    w[~np.broadcast_to(ok, w.shape)] = 0.0
    Z = w.sum(axis=(2, 3))
    bad = ~(Z >= 1e-300) | ~ok[..., 0, 0]
    Zs = np.where(bad, 1.0, Z)
    mx = np.einsum("npyx,x->np", w, xs) / Zs
    my = np.einsum("npyx,y->np", w, ys) / Zs
    out = np.stack([mx, my], axis=1)
    out = np.where(bad[:, None, :], mu, out)
    return out, bad


def expected_pose(heatmaps, previous, nu, return_fallbacks=False):
    """E[W] under the heat maps and the Gaussian centered at the projection
    of ``previous``."""
    if not isinstance(heatmaps, HeatMapStack):
        raise TypeError("heatmaps must be a HeatMapStack")
    if heatmaps.frame_count != previous.frame_count or heatmaps.joint_count != previous.dictionary.joint_count:
        raise ValueError("heat maps and estimate disagree on frames or joints")
    means, bad = posterior_means(heatmaps.maps, project_sequence_model(previous), nu)
    out = Pose2DSequence(means)
    return (out, bad) if return_fallbacks else out


def q_value(estimate, expected, params):
    """-L(theta; E[W]) - R(theta): the theta-dependent part of Q."""
    return -objective(estimate, expected, params).total


def solve_em(heatmaps, initial, params):
    """Alternate E-steps and warm-started M-steps.

    Stops once the largest change of E[W] between successive E-steps falls
    below ``params.em_tol`` or after ``params.em_max_iters`` iterations.
    M-steps stop each coefficient solve once its KKT residual has dropped
    by ``params.m_step_apg_rel_tol`` (floored at ``params.apg_tol``); every
    step still never increases the objective.
    """
    m_params = params.replace(apg_rel_tol=params.m_step_apg_rel_tol)
    est = initial
    prev = None
    q_trace, shifts, m_iters = [], [], []
    fallbacks = 0
    converged = False
    reason = "max_iters"
    expected = None
    it = 0
    for it in range(1, params.em_max_iters + 1):
        expected, bad = expected_pose(heatmaps, est, params.nu, return_fallbacks=True)
        fallbacks += int(bad.sum())
        if prev is not None:
            shift = float(np.max(np.abs(expected.coords - prev.coords)))
            shifts.append(shift)
            if shift < params.em_tol:
                q_trace.append(q_value(est, expected, params))
                converged, reason = True, "tolerance"
                break
        est, rep = solve_bcd(est, expected, m_params)
        m_iters.append(rep.iterations)
        q_trace.append(q_value(est, expected, params))
        prev = expected
    report = EmReport(
        em_iterations=it,
        q_trace=q_trace,
        expected_pose_shift_trace=shifts,
        converged=converged,
        termination_reason=reason,
        m_step_iterations=m_iters,
        fallback_count=fallbacks,
    )
    return est, expected, report
