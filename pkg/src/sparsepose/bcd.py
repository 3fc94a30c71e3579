"""Block coordinate descent for the penalized MLE with known 2D poses.

One outer cycle updates the coefficients (convex lasso-type subproblem,
accelerated proximal gradient), then the rotations (Riemannian gradient
descent on SO(3)^n with Armijo backtracking), then the translations
(closed form). Each step is non-increasing in the objective.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .objective import (
    as_observations,
    objective,
    riemannian_grad,
    rotation_euclidean_grad,
    rotation_subproblem_value,
)
from .rotations import expm, hat, so3_defect, vee
from .types import CameraTrajectory, CoeffSequence, SequenceEstimate

log = logging.getLogger(__name__)


def soft_threshold(x, t):
    """Proximal map of t*|.|; exactly zero inside [-t, t]."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def kkt_residual(C, grad, alpha):
    """Largest violation of 0 in grad + alpha * d|C|, entrywise."""
    C = np.asarray(C)
    on = C != 0
    r = np.where(on, np.abs(grad + alpha * np.sign(C)), np.maximum(np.abs(grad) - alpha, 0.0))
    return float(np.max(r)) if r.size else 0.0


@dataclass
class LassoProblem:
    """min_C  sum_t (0.5 c_t^T Q_t c_t - q_t^T c_t) + const
              + beta/2 ||C D^T||^2 + alpha ||C||_1

    ``Q`` is (n, k, k) (or (k, k) shared by all frames), ``q`` is (k, n).
    """

    Q: np.ndarray
    q: np.ndarray
    alpha: float
    beta: float = 0.0
    const: float = 0.0

    def hess_apply(self, C):
        if self.Q.ndim == 2:
            out = self.Q @ C
        else:
            out = (self.Q @ C.T[:, :, None])[:, :, 0].T
        if self.beta and C.shape[1] > 1:
            # path-graph Laplacian along frames, inlined for speed
            d = self.beta * (C[:, 1:] - C[:, :-1])
            out[:, :-1] -= d
            out[:, 1:] += d
        return out

    def grad(self, C):
        return self.hess_apply(C) - self.q

    def smooth(self, C, HC=None):
        HC = self.hess_apply(C) if HC is None else HC
        return float(0.5 * np.vdot(C, HC) - np.vdot(self.q, C) + self.const)

    def value(self, C, HC=None):
        return self.smooth(C, HC) + self.alpha * float(np.abs(C).sum())

    def kkt(self, C, HC=None):
        HC = self.hess_apply(C) if HC is None else HC
        return kkt_residual(C, HC - self.q, self.alpha)

    def lipschitz_estimate(self, iters=30, seed=0):
        """Power iteration on the (PSD) Hessian operator."""
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.q.shape)
        lam = 0.0
        for _ in range(iters):
            nv = np.linalg.norm(v)
            if nv == 0:
                return 1.0
            v = v / nv
            w = self.hess_apply(v)
            lam = float(np.vdot(v, w))
            v = w
        return max(lam, 1e-12)


@dataclass
class ApgResult:
    C: np.ndarray
    value: float
    kkt: float
    iterations: int
    restarts: int


def apg(problem, C0, tol=1e-7, max_iters=500, rel_tol=0.0, check_every=5):
    """FISTA with backtracking on the step and function-value restarts.

    The smooth part is quadratic, so H x is carried along with every point
    and each iteration costs one Hessian application. Accepted iterates have
    non-increasing objective; the result is never worse than ``C0``.
    Stops once the KKT residual is below ``max(tol, rel_tol * initial)``,
    tested every ``check_every`` iterations.
    """
    x = np.array(C0, dtype=float)
    Hx = problem.hess_apply(x)
    fx = problem.value(x, Hx)
    res = problem.kkt(x, Hx)
    tol = max(tol, rel_tol * res)
    if res <= tol:
        return ApgResult(x, fx, res, 0, 0)
    L = 1.05 * problem.lipschitz_estimate()
    thr = problem.alpha
    y, Hy = x, Hx
    t = 1.0
    restarts = 0
    it = 0
    for it in range(1, max_iters + 1):
        gy = Hy - problem.q
        while True:
            x_new = soft_threshold(y - gy / L, thr / L)
            Hx_new = problem.hess_apply(x_new)
            d = x_new - y
            dd = float(np.vdot(d, d))
            # quadratic upper bound: 0.5 d^T H d <= 0.5 L |d|^2
            if np.vdot(d, Hx_new - Hy) <= L * dd * (1.0 + 1e-10) or L > 1e300:
                break
            L *= 2.0
        f_new = problem.value(x_new, Hx_new)
        if f_new > fx:
            if t != 1.0:
                restarts += 1
                t = 1.0
                y, Hy = x, Hx
                continue
            # a plain proximal step descends in exact arithmetic; keep it while
            # the rise is round-off and the KKT residual still improves
            if f_new - fx > 1e-13 * max(1.0, abs(fx)) or problem.kkt(x_new, Hx_new) >= problem.kkt(x, Hx):
                break
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        m = (t - 1.0) / t_new
        y = x_new + m * (x_new - x)
        Hy = Hx_new + m * (Hx_new - Hx)
        x, Hx, fx, t = x_new, Hx_new, f_new, t_new
        if it % check_every == 0 and problem.kkt(x, Hx) <= tol:
            break
    return ApgResult(x, fx, problem.kkt(x), it, restarts)


def coeff_subproblem(estimate, observations, params):
    """Assemble the C-step as a :class:`LassoProblem`."""
    W = as_observations(observations)
    n, _, p = W.shape
    k = estimate.dictionary.size
    PB = np.einsum("nij,kjp->nkip", estimate.R[:, :2], estimate.B).reshape(n, k, 2 * p)
    Y = (W - estimate.T[:, :, None]).reshape(n, 2 * p)
    nu = params.nu
    Q = nu * PB @ np.swapaxes(PB, 1, 2)
    q = nu * np.einsum("nkm,nm->kn", PB, Y)
    return LassoProblem(Q, q, params.alpha, params.beta, const=0.5 * nu * float(np.sum(Y * Y)))


def update_coeffs(estimate, observations, params, return_info=False):
    """Global minimizer of the convex coefficient subproblem (R, T fixed)."""
    W = as_observations(observations)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(estimate.C))):
        raise ValueError("non-finite input to coefficient update")
    prob = coeff_subproblem(estimate, W, params)
    res = apg(prob, estimate.C, tol=params.apg_tol, max_iters=params.apg_max_iters,
              rel_tol=params.apg_rel_tol)
    out = CoeffSequence(res.C)
    return (out, res) if return_info else out


@dataclass
class RotationStepInfo:
    iterations: int
    grad_norm: float
    line_search_failed: bool = False


def _newton_directions(R, S, W, T, nu):
    """Per-frame Newton steps for the decoupled rotation fits.

    With R(w) = R exp(hat(w)) the residual r_j = w_j - P R exp(hat(w)) s_j - T
    has Jacobian P R hat(s_j) at w = 0, and the second-order part of exp
    adds -sym(A S^T) + tr(A S^T) I with a_j = R^T P^T r_j. Frames whose
    Hessian is not safely positive definite use the Gauss-Newton matrix.
    Returns body-frame directions (n, 3) and the directional derivatives
    of the frame losses along them.
    """
    n, _, p = S.shape
    RSh = R[:, None] @ hat(np.swapaxes(S, 1, 2))  # (n, p, 3, 3)
    J = RSh[:, :, :2, :].reshape(n, 2 * p, 3)
    res = W - R[:, :2] @ S - T[:, :, None]
    r = np.swapaxes(res, 1, 2).reshape(n, 2 * p)
    Jr = np.einsum("nmi,nm->ni", J, r)
    GN = np.swapaxes(J, 1, 2) @ J
    A = np.swapaxes(R[:, :2], 1, 2) @ res  # (n, 3, p)
    X = A @ np.swapaxes(S, 1, 2)
    M = -0.5 * (X + np.swapaxes(X, 1, 2)) + np.trace(X, axis1=1, axis2=2)[:, None, None] * np.eye(3)
    H = GN + M
    scale = np.trace(GN, axis1=1, axis2=2) + 1e-300
    ok = np.linalg.eigvalsh(H)[:, 0] > 1e-8 * scale
    H = np.where(ok[:, None, None], H, GN + 1e-10 * scale[:, None, None] * np.eye(3))
    d = -np.linalg.solve(H, Jr[:, :, None])[:, :, 0]
    return d, nu * np.sum(Jr * d, axis=1)


def minimize_rotations(R0, S, W, T, nu, gamma, grad_tol=1e-8, max_iters=100, max_backtracks=50):
    """Riemannian gradient descent on SO(3)^n with Rodrigues retraction.

    Minimizes nu/2 sum ||W_t - Rbar_t S_t - T_t||^2 + gamma/2 ||D Rbar||^2.
    Steps use Barzilai-Borwein trial lengths and Armijo backtracking. With
    gamma == 0 the frames decouple; each then takes Newton steps with its
    own Armijo backtracking and retires once its gradient is negligible.
    """
    R = np.array(R0, dtype=float)
    n = R.shape[0]
    separable = not gamma or n == 1

    def frame_values(Rm):
        r = W - Rm[:, :2] @ S - T[:, :, None]
        return 0.5 * nu * np.sum(r * r, axis=(1, 2))

    def total(Rm):
        return rotation_subproblem_value(Rm, S, W, T, nu, gamma)

    f = frame_values(R) if separable else total(R)
    curv = np.sum(S * S, axis=(1, 2)) if S.size else np.ones(n)
    if separable:
        step = 1.0 / np.maximum(nu * curv, 1e-12)
    else:
        step = 1.0 / max(nu * float(np.max(curv)) + 4.0 * gamma, 1e-12)
    prev = None
    done = np.zeros(n, dtype=bool)
    info = RotationStepInfo(0, np.inf)
    for it in range(max_iters + 1):
        G = riemannian_grad(R, rotation_euclidean_grad(R, S, W, T, nu, gamma))
        omega = vee(np.swapaxes(R, -1, -2) @ G)  # body-frame gradient, (n, 3)
        # embedded metric: ||R hat(w)||_F^2 = 2 |w|^2
        g2 = 2.0 * np.sum(omega * omega, axis=1)
        gnorm = float(np.sqrt(g2.sum()))
        info.iterations, info.grad_norm = it, gnorm
        if gnorm <= grad_tol or it == max_iters:
            break
        if separable:
            # frames at their own tolerance, or stalled at round-off, are retired
            done |= g2 <= grad_tol**2 / n
            pending = ~done
            if not pending.any():
                break
            d, slope = _newton_directions(R, S, W, T, nu)
            # predicted decrease below what f can resolve: converged to round-off
            done |= -slope <= 1e-15 * np.abs(f)
            pending = ~done
            if not pending.any():
                break
            trial = np.where(done, 0.0, 1.0)
            R_new = R.copy()
            f_new = f.copy()
            for _ in range(max_backtracks):
                if not pending.any():
                    break
                idx = np.nonzero(pending)[0]
                cand = R[idx] @ expm(trial[idx, None] * d[idx])
                r = W[idx] - cand[:, :2] @ S[idx] - T[idx, :, None]
                fc = 0.5 * nu * np.sum(r * r, axis=(1, 2))
                good = fc <= f[idx] + 1e-4 * trial[idx] * slope[idx]
                R_new[idx[good]] = cand[good]
                f_new[idx[good]] = fc[good]
                pending[idx[good]] = False
                trial[idx[~good]] *= 0.5
            if pending.any():
                # frames that could not descend keep their iterate
                if np.all(pending | done):
                    info.line_search_failed = True
                    log.warning("rotation line search failed after %d backtracks", max_backtracks)
                    break
                done |= pending
            done |= f_new >= f
            R, f = R_new, f_new
            continue
        if prev is not None:
            s = -prev[1] * prev[0]
            sy = float(np.sum(s * (omega - prev[0])))
            if sy > 0:
                step = float(np.clip(float(np.sum(s * s)) / sy, step * 1e-3, step * 1e3))
        accepted = False
        trial = step
        for _ in range(max_backtracks):
            R_new = R @ expm(-trial * omega)
            f_new = total(R_new)
            if f_new <= f - 1e-4 * trial * gnorm**2:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            info.line_search_failed = True
            log.warning("rotation line search failed after %d backtracks", max_backtracks)
            break
        prev = (omega, trial)
        step = trial
        stalled = f - f_new <= 1e-14 * abs(f)
        R, f = R_new, f_new
        if stalled:
            # further steps cannot change f beyond round-off
            break
    return R, info


def update_rotations(estimate, observations, params, return_info=False):
    """Rotation step with C and T held fixed."""
    W = as_observations(observations)
    R, info = minimize_rotations(
        estimate.R,
        estimate.shapes(),
        W,
        estimate.T,
        params.nu,
        params.gamma,
        grad_tol=params.rot_grad_tol,
        max_iters=params.rot_max_iters,
    )
    cam = CameraTrajectory(R, estimate.T)
    return (cam, info) if return_info else cam


def update_translations(estimate, observations):
    """Closed-form T_t: row means of W_t - Rbar_t S_t."""
    W = as_observations(observations)
    return np.mean(W - estimate.R[:, :2] @ estimate.shapes(), axis=2)


@dataclass
class BcdReport:
    iterations: int
    objective_trace: list
    converged: bool
    termination_reason: str
    breakdowns: list = field(default_factory=list)
    so3_defects: list = field(default_factory=list)
    rotation_line_search_failures: int = 0
    apg_max_kkt: float = 0.0

    def is_monotone(self, slack=1e-9):
        tr = self.objective_trace
        return all(b <= a + slack for a, b in zip(tr, tr[1:]))

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "objective_trace": list(self.objective_trace),
            "converged": self.converged,
            "termination_reason": self.termination_reason,
            "rotation_line_search_failures": self.rotation_line_search_failures,
            "apg_max_kkt": self.apg_max_kkt,
            "max_so3_defect": max((max(d) for d in self.so3_defects), default=0.0),
        }


def solve_bcd(initial, observations, params):
    """Cycle C -> R -> T updates until the relative decrease falls below
    ``params.bcd_tol`` or ``params.bcd_max_iters`` cycles have run."""
    W = as_observations(observations)
    est = initial
    first = objective(est, W, params)
    trace = [first.total]
    breakdowns = [first]
    defects = []
    failures = 0
    max_kkt = 0.0
    reason = "max_iters"
    it = 0
    for it in range(1, params.bcd_max_iters + 1):
        C, apg_info = update_coeffs(est, W, params, return_info=True)
        max_kkt = max(max_kkt, apg_info.kkt)
        est = est.with_coeffs(C.values)
        cam, rinfo = update_rotations(est, W, params, return_info=True)
        failures += int(rinfo.line_search_failed)
        ortho, det = so3_defect(cam.rotations)
        defects.append((float(ortho.max()), float(det.max())))
        est = est.with_rotations(cam.rotations)
        est = est.with_translations(update_translations(est, W))
        cur = objective(est, W, params)
        trace.append(cur.total)
        breakdowns.append(cur)
        prev = trace[-2]
        if prev - cur.total <= params.bcd_tol * max(abs(prev), 1e-12):
            reason = "tolerance"
            break
    report = BcdReport(
        iterations=it,
        objective_trace=trace,
        converged=reason == "tolerance",
        termination_reason=reason,
        breakdowns=breakdowns,
        so3_defects=defects,
        rotation_line_search_failures=failures,
        apg_max_kkt=max_kkt,
    )
    return est, report


def start_estimate(dictionary, C, R, T):
    return SequenceEstimate(CoeffSequence(C), CameraTrajectory(R, T), dictionary)
