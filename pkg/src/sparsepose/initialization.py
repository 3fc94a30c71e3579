"""Per-frame starting estimates for the sequence solvers.

Each frame alternates a camera fit (orthographic Procrustes seed refined on
SO(3)) against the current 3D reconstruction with a damped ridge fit of the
coefficients, starting from the dictionary mean pose. Translations follow
in closed form every round. Heat-map input uses argmax locations as
pseudo-observations and Huber reweighting to damp outlying joints.
"""

from dataclasses import dataclass, replace

import numpy as np

from .bcd import minimize_rotations
from .rotations import expm, hat
from .objective import as_observations
from .types import CameraTrajectory, CoeffSequence, SequenceEstimate


@dataclass(frozen=True)
class InitConfig:
    inner_rounds: int = 5
    robust_delta: float = 0.05
    ridge: float = 1e-4
    refine_iters: int = 50
    round_tol: float = 1e-10
    polish_iters: int = 300
    starts: int = 24
    propagate: bool = True

    def __post_init__(self):
        if self.inner_rounds < 1:
            raise ValueError("inner_rounds must be at least 1")
        if not self.robust_delta > 0:
            raise ValueError("robust_delta must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if not 1 <= self.starts <= 24:
            raise ValueError("starts must lie in [1, 24]")


def orthographic_procrustes(W, S, weights=None):
    """Rotation(s) whose top rows best align centered S with centered W.

    The 2x3 cross-covariance is padded with a zero row to 3x3 and the SVD
    solution is sign-corrected to det +1. Accepts single (2, p)/(3, p)
    arrays or stacks with a leading frame axis.
    """
    W = np.asarray(W, dtype=float)
    S = np.asarray(S, dtype=float)
    w = np.ones(S.shape[:-2] + (S.shape[-1],)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum(axis=-1, keepdims=True)
    w = w[..., None, :]
    Wc = W - (W * w).sum(axis=-1, keepdims=True)
    Sc = S - (S * w).sum(axis=-1, keepdims=True)
    M = np.zeros(S.shape[:-2] + (3, 3))
    M[..., :2, :] = (Wc * w) @ np.swapaxes(Sc, -1, -2)
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros_like(M)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = d
    return U @ D @ Vt


def huber_weights(res_norms, delta):
    r = np.asarray(res_norms, dtype=float)
    return np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))


def _weighted_translation(W, Rot, S, weights):
    r = W - Rot[:, :2] @ S
    return (r * weights[:, None, :]).sum(axis=2) / weights.sum(axis=1, keepdims=True)


def _weighted_sq(W, Rot, S, T, weights):
    r = W - Rot[:, :2] @ S - T[:, :, None]
    return np.sum(np.sum(r * r, axis=1) * weights, axis=1)


def _polish(W, B, C, Rot, T, weights, max_iters):
    """Joint Levenberg-Marquardt on (rotation, codes, translation) per frame.

    Rotations move by right multiplication with exp(hat(w)). A step is kept
    only when it lowers the weighted residual, so each frame is monotone.
    Updates ``C``, ``Rot`` and ``T`` in place.
    """
    n, _, p = W.shape
    k = B.shape[0]
    m = 3 + k + 2
    sw = np.sqrt(np.concatenate([weights, weights], axis=1))  # x rows then y rows
    mu = np.full(n, 1e-3)

    def resid(idx, C, Rot, T):
        S = np.einsum("nk,kdp->ndp", C, B)
        r = (W[idx] - Rot[:, :2] @ S - T[:, :, None]).reshape(len(idx), 2 * p) * sw[idx]
        return r, S

    everyone = np.arange(n)
    r, S = resid(everyone, C, Rot, T)
    cost = np.sum(r * r, axis=1)
    live = np.ones(n, dtype=bool)
    for _ in range(max_iters):
        a = np.nonzero(live)[0]
        if a.size == 0:
            break
        Ra, Sa = Rot[a, :2], S[a]
        J = np.zeros((a.size, 2, p, m))
        # d(model)/dw at w = 0 is -Rbar hat(s_j)
        J[..., :3] = -np.einsum("nij,npjl->nipl", Ra, hat(np.swapaxes(Sa, 1, 2)))
        J[..., 3:3 + k] = np.einsum("nij,kjp->nipk", Ra, B)
        J[:, 0, :, 3 + k] = 1.0
        J[:, 1, :, 4 + k] = 1.0
        J = J.reshape(a.size, 2 * p, m) * sw[a, :, None]
        # Marquardt scaling by diag(J^T J)
        dm = mu[a, None] * (np.einsum("nim,nim->nm", J, J) + 1e-12)
        if 2 * p < m:
            # (J^T J + M)^-1 J^T r = M^-1 J^T (J M^-1 J^T + I)^-1 r, a 2p x 2p solve
            JM = J / dm[:, None, :]
            z = np.linalg.solve(JM @ np.swapaxes(J, 1, 2) + np.eye(2 * p), r[a][:, :, None])
            step = (np.swapaxes(JM, 1, 2) @ z)[:, :, 0]
        else:
            A = np.swapaxes(J, 1, 2) @ J
            A[:, range(m), range(m)] += dm
            step = np.linalg.solve(A, np.einsum("nim,ni->nm", J, r[a])[:, :, None])[:, :, 0]
        Rn = Rot[a] @ expm(step[:, :3])
        Cn = C[a] + step[:, 3:3 + k]
        Tn = T[a] + step[:, 3 + k:]
        rn, Sn = resid(a, Cn, Rn, Tn)
        cn = np.sum(rn * rn, axis=1)
        ok = cn < cost[a]
        small = cost[a] - cn <= 1e-15 * cost[a] + 1e-30
        acc = a[ok]
        Rot[acc], C[acc], T[acc], r[acc], S[acc], cost[acc] = Rn[ok], Cn[ok], Tn[ok], rn[ok], Sn[ok], cn[ok]
        mu[acc] = np.maximum(mu[acc] / 3.0, 1e-12)
        mu[a[~ok]] *= 10.0
        live[a[(ok & small) | (mu[a] > 1e10)]] = False
    return C, Rot, T


def cube_rotations():
    """The 24 proper rotations mapping the coordinate axes onto themselves,
    identity first."""
    out = []
    for perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1), (1, 0, 2), (0, 2, 1), (2, 1, 0)):
        for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1),
                      (-1, -1, -1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)):
            M = np.zeros((3, 3))
            M[range(3), perm] = signs
            if np.linalg.det(M) > 0:
                out.append(M)
    return np.stack(out)


def _fit_frames(W, B, config, robust, R0=None):
    """Alternate camera / coefficient fits, all frames at once.

    Frames are independent; batching only vectorizes the arithmetic. With
    ``R0`` the first camera step starts from the given rotations instead
    of the Procrustes seed.
    """
    n, _, p = W.shape
    k = B.shape[0]
    C = np.full((n, k), 1.0 / k)
    weights = np.ones((n, p))
    active = np.ones(n, dtype=bool)
    Rot = np.tile(np.eye(3), (n, 1, 1)) if R0 is None else np.array(R0)
    T = np.zeros((n, 2))
    eye = np.eye(k)
    for rnd in range(config.inner_rounds):
        a = np.nonzero(active)[0]
        if a.size == 0:
            break
        Wa, wa = W[a], weights[a]
        S = np.einsum("nk,kdp->ndp", C[a], B)
        Ra = orthographic_procrustes(Wa, S, wa)
        Ta = _weighted_translation(Wa, Ra, S, wa)
        if rnd == 0 and R0 is not None:
            Ra = Rot[a].copy()
            Ta = _weighted_translation(Wa, Ra, S, wa)
        elif rnd:
            # keep the previous camera where it still fits better than the seed
            Tp = _weighted_translation(Wa, Rot[a], S, wa)
            keep = _weighted_sq(Wa, Rot[a], S, Tp, wa) < _weighted_sq(Wa, Ra, S, Ta, wa)
            Ra[keep], Ta[keep] = Rot[a][keep], Tp[keep]
        # refine on the exact weighted orthographic objective, T held fixed
        sw = np.sqrt(wa)[:, None, :]
        Ra, _ = minimize_rotations(
            Ra, S * sw, (Wa - Ta[:, :, None]) * sw, np.zeros((a.size, 2)), 1.0, 0.0,
            grad_tol=1e-12, max_iters=config.refine_iters,
        )
        Ta = _weighted_translation(Wa, Ra, S, wa)
        # damped ridge: the penalty pulls toward the previous round's codes
        A = np.einsum("nij,kjp->nkip", Ra[:, :2], B).reshape(a.size, k, 2 * p)
        y = (Wa - Ta[:, :, None]).reshape(a.size, 2 * p)
        wv = np.concatenate([wa, wa], axis=1)[:, None, :]
        A_w = A * wv
        G = A_w @ np.swapaxes(A, 1, 2)
        lam = config.ridge * np.maximum(np.trace(G, axis1=1, axis2=2) / k, 1e-12)
        rhs = (A_w @ y[:, :, None])[:, :, 0] + lam[:, None] * C[a]
        C_new = np.linalg.solve(G + lam[:, None, None] * eye, rhs[:, :, None])[:, :, 0]
        S_new = np.einsum("nk,kdp->ndp", C_new, B)
        Ta = _weighted_translation(Wa, Ra, S_new, wa)
        delta = np.linalg.norm(C_new - C[a], axis=1)
        C[a], Rot[a], T[a] = C_new, Ra, Ta
        if robust:
            r = Wa - Ra[:, :2] @ S_new - Ta[:, :, None]
            weights[a] = huber_weights(np.linalg.norm(r, axis=1), config.robust_delta)
        done = delta <= config.round_tol * np.maximum(1.0, np.linalg.norm(C_new, axis=1))
        active[a[done]] = False
    if config.polish_iters:
        C, Rot, T = _polish(W, B, C, Rot, T, weights, config.polish_iters)
    return C, Rot, T, weights


def _multi_start(W, B, config, robust):
    """Fit every frame from several rotation seeds and keep each frame's best.

    Seed 0 is the Procrustes start; the others are cube symmetries applied
    to it, so frames trapped in a flipped or turned basin get a way out.
    All seeds get a short polish; only the winners get the full one.
    """
    n, _, p = W.shape
    screen = replace(config, polish_iters=min(config.polish_iters, 20))
    C, Rot, T, w = _fit_frames(W, B, screen, robust)
    if config.starts > 1:
        seeds = cube_rotations()[:config.starts]
        m = len(seeds)
        R0 = np.einsum("nij,mjk->mnik", Rot, seeds[1:]).reshape((m - 1) * n, 3, 3)
        Wm = np.broadcast_to(W, (m - 1, n, 2, p)).reshape(-1, 2, p)
        Cm, Rm, Tm, wm = _fit_frames(Wm, B, screen, robust, R0=R0)
        C, Rot, T = (np.concatenate([x, y]) for x, y in ((C, Cm), (Rot, Rm), (T, Tm)))
        w = np.concatenate([w, wm])
        cost = _weighted_sq(np.concatenate([W, Wm]), Rot, np.einsum("nk,kdp->ndp", C, B), T, w)
        pick = np.argmin((cost / w.sum(axis=1)).reshape(m, n), axis=0) * n + np.arange(n)
        C, Rot, T, w = C[pick], Rot[pick], T[pick], w[pick]
    if config.polish_iters > screen.polish_iters:
        C, Rot, T = _polish(W, B, C, Rot, T, w, config.polish_iters)
    if config.propagate and n > 1:
        C, Rot, T = _propagate(W, B, C, Rot, T, w, config)
    return C.T, Rot, T


def _propagate(W, B, C, Rot, T, w, config):
    """Offer each frame its neighbours' fits as extra starting points.

    A frame stuck in a poor basin next to a well-fit frame usually sits
    close to that frame's pose and camera. Candidates are polished against
    the frame's own observations only and replace the current fit when its
    residual drops. Runs until no frame improves.
    """
    n, _, p = W.shape

    def frame_cost(idx, C_, R_, T_):
        S = np.einsum("nk,kdp->ndp", C_, B)
        return _weighted_sq(W[idx], R_, S, T_, w[idx]) / w[idx].sum(axis=1)

    cost = frame_cost(np.arange(n), C, Rot, T)
    changed = np.ones(n, dtype=bool)
    for _ in range(n):
        dst = np.concatenate([np.arange(1, n), np.arange(n - 1)])
        src = np.concatenate([np.arange(n - 1), np.arange(1, n)])
        use = changed[src] & (cost[src] < cost[dst])
        dst, src = dst[use], src[use]
        if dst.size == 0:
            break
        Wd, wd = W[dst], w[dst]
        Cc, Rc, Tc = C[src].copy(), Rot[src].copy(), T[src].copy()
        S = np.einsum("nk,kdp->ndp", Cc, B)
        Tc = _weighted_translation(Wd, Rc, S, wd)
        Cc, Rc, Tc = _polish(Wd, B, Cc, Rc, Tc, wd, config.polish_iters)
        cc = frame_cost(dst, Cc, Rc, Tc)
        changed[:] = False
        # the better of the two neighbour candidates wins
        for j in np.argsort(cc):
            t = dst[j]
            if cc[j] < cost[t] * (1.0 - 1e-9):
                C[t], Rot[t], T[t], cost[t] = Cc[j], Rc[j], Tc[j], cc[j]
                changed[t] = True
    return C, Rot, T


def _init(W, dictionary, config, robust):
    W = as_observations(W)
    if W.shape[2] != dictionary.joint_count:
        raise ValueError("observation joint count does not match the dictionary")
    if not np.all(np.isfinite(W)):
        raise ValueError("non-finite observations")
    spread = np.linalg.norm(W - W.mean(axis=2, keepdims=True), axis=(1, 2))
    bad = np.nonzero(spread <= 1e-12 * np.maximum(1.0, np.abs(W).max(axis=(1, 2))))[0]
    if bad.size:
        raise ValueError(f"rank-deficient frame {int(bad[0])}: all joints coincide")
    C, R, T = _multi_start(W, dictionary.atoms, config, robust)
    return SequenceEstimate(CoeffSequence(C), CameraTrajectory(R, T), dictionary)


def init_given_2d(observations, dictionary, params=None, config=None):
    """Independent per-frame estimate from known 2D poses."""
    return _init(observations, dictionary, config or InitConfig(), robust=False)


def init_from_heatmaps(heatmaps, dictionary, params=None, config=None, robust=True):
    """Argmax pseudo-observations followed by a Huber-reweighted fit."""
    W = heatmaps.argmax_locations()
    return _init(W, dictionary, config or InitConfig(), robust=robust)
