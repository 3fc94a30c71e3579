"""Evaluation protocols: root-aligned and Procrustes-aligned MPJPE, limb
length rescaling, 2D error and PCK, and per-frame perspective refinement
of the camera with the 2D and 3D poses held fixed."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .rotations import expm, hat
from .types import Pose2DSequence, Pose3D, Pose3DSequence, project_sequence_model

log = logging.getLogger(__name__)

DEFAULT_BOX_PIXELS = 256.0


def _coords(x):
    if isinstance(x, (Pose3D, Pose3DSequence, Pose2DSequence)):
        return x.coords
    return np.asarray(x, dtype=float)


def mpjpe(estimate_poses, truth, root=0):
    """Mean per-joint Euclidean error after translating both roots to the origin."""
    A = _coords(estimate_poses)
    B = _coords(truth)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    A = A - A[..., [root]]
    B = B - B[..., [root]]
    return float(np.mean(np.linalg.norm(A - B, axis=-2)))


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X):
        return self.scale * self.rotation @ X + self.translation[:, None]


def procrustes_align(a, b):
    """Best similarity transform taking ``a`` onto ``b`` (both d x p).

    Returns (transform, residual) with the residual the mean per-joint
    distance after alignment.
    """
    A = _coords(a)
    B = _coords(b)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    d, p = A.shape
    if p < 3:
        raise ValueError("procrustes alignment needs at least 3 points")
    mu_a = A.mean(axis=1, keepdims=True)
    mu_b = B.mean(axis=1, keepdims=True)
    A0, B0 = A - mu_a, B - mu_b
    if np.linalg.matrix_rank(A0, tol=1e-12 * max(1.0, np.abs(A0).max())) < 2:
        raise ValueError("degenerate point set (rank < 2)")
    U, s, Vt = np.linalg.svd(B0 @ A0.T)
    D = np.eye(d)
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    Rot = U @ D @ Vt
    scale = float(np.sum(s * np.diag(D)) / np.sum(A0 * A0))
    trans = (mu_b - scale * Rot @ mu_a).ravel()
    tf = SimilarityTransform(scale, Rot, trans)
    resid = float(np.mean(np.linalg.norm(tf.apply(A) - B, axis=0)))
    return tf, resid


def mpjpe_procrustes(estimate_poses, truth, per_frame=False):
    """Per-frame similarity-aligned MPJPE, averaged over frames."""
    A = _coords(estimate_poses)
    B = _coords(truth)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    if A.ndim == 2:
        A, B = A[None], B[None]
    errs = np.array([procrustes_align(a, b)[1] for a, b in zip(A, B)])
    return errs if per_frame else float(errs.mean())


def body_scale(poses):
    """Mean distance of the joints from their centroid, over all frames."""
    S = _coords(poses)
    return float(np.mean(np.linalg.norm(S - S.mean(axis=-1, keepdims=True), axis=-2)))


def mean_limb_length(pose, skeleton):
    S = _coords(pose)
    e = np.array(skeleton.limb_edges)
    return float(np.mean(np.linalg.norm(S[..., e[:, 0]] - S[..., e[:, 1]], axis=-2)))


def limb_rescale(pose, skeleton, target_mean_limb):
    """Scale about the root joint so the mean limb length hits the target."""
    if not target_mean_limb > 0:
        raise ValueError("target_mean_limb must be positive")
    S = _coords(pose)
    cur = mean_limb_length(S, skeleton)
    if cur <= 0:
        raise ValueError("zero-size pose cannot be rescaled")
    root = S[..., [skeleton.root]]
    out = root + (target_mean_limb / cur) * (S - root)
    return Pose3D(out) if out.ndim == 2 else Pose3DSequence(out, skeleton)


def limb_rescale_sequence(poses, skeleton, target_mean_limb):
    S = _coords(poses)
    return Pose3DSequence(
        np.stack([limb_rescale(s, skeleton, target_mean_limb).coords for s in S]), skeleton
    )


def joint_errors_2d(estimate2d, truth2d, box_pixels=DEFAULT_BOX_PIXELS):
    A = _coords(estimate2d)
    B = _coords(truth2d)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return box_pixels * np.linalg.norm(A - B, axis=-2)


def mean_2d_error(estimate2d, truth2d, box_pixels=DEFAULT_BOX_PIXELS):
    return float(np.mean(joint_errors_2d(estimate2d, truth2d, box_pixels)))


def pck(estimate2d, truth2d, threshold_pixels=10.0, box_pixels=DEFAULT_BOX_PIXELS):
    """Fraction of joints within ``threshold_pixels`` of the truth."""
    if not threshold_pixels > 0:
        raise ValueError("threshold must be positive")
    err = joint_errors_2d(estimate2d, truth2d, box_pixels)
    return float(np.mean(err <= threshold_pixels))


@dataclass
class EvalReport:
    mpjpe_root_aligned: float
    mpjpe_procrustes: float
    mean_2d_error: float
    pck: float
    box_pixels: float = DEFAULT_BOX_PIXELS
    pck_threshold: float = 10.0
    per_frame_procrustes: list = field(default_factory=list)
    per_frame_2d: list = field(default_factory=list)
    body_scale: float = float("nan")

    @property
    def relative_procrustes(self):
        return self.mpjpe_procrustes / self.body_scale

    def as_dict(self):
        return {
            "body_scale": self.body_scale,
            "relative_procrustes": self.relative_procrustes,
            "mpjpe_root_aligned": self.mpjpe_root_aligned,
            "mpjpe_procrustes": self.mpjpe_procrustes,
            "mean_2d_error": self.mean_2d_error,
            "pck": self.pck,
            "box_pixels": self.box_pixels,
            "pck_threshold": self.pck_threshold,
            "per_frame_procrustes": list(self.per_frame_procrustes),
            "per_frame_2d": list(self.per_frame_2d),
        }

    def summary(self):
        return (
            f"MPJPE (root aligned): {self.mpjpe_root_aligned:.6g}\n"
            f"MPJPE (Procrustes):   {self.mpjpe_procrustes:.6g}\n"
            f"2D error (px @ {self.box_pixels:g}): {self.mean_2d_error:.6g}\n"
            f"PCK@{self.pck_threshold:g}px:            {self.pck:.4f}\n"
            f"Procrustes / body scale: {self.relative_procrustes:.6g}"
        )


def evaluate(estimate_poses, truth_poses, estimate2d, truth2d, root=0,
             skeleton=None, target_mean_limb=None, threshold_pixels=10.0,
             box_pixels=DEFAULT_BOX_PIXELS):
    """Assemble an :class:`EvalReport`. When ``target_mean_limb`` is given
    the estimate is limb-rescaled before the root-aligned error."""
    est = _coords(estimate_poses)
    if target_mean_limb is not None:
        est = limb_rescale_sequence(est, skeleton, target_mean_limb).coords
    per_frame = mpjpe_procrustes(est, truth_poses, per_frame=True)
    err2d = joint_errors_2d(estimate2d, truth2d, box_pixels)
    return EvalReport(
        mpjpe_root_aligned=mpjpe(est, truth_poses, root),
        mpjpe_procrustes=float(per_frame.mean()),
        mean_2d_error=float(err2d.mean()),
        pck=float(np.mean(err2d <= threshold_pixels)),
        box_pixels=box_pixels,
        pck_threshold=threshold_pixels,
        per_frame_procrustes=per_frame.tolist(),
        per_frame_2d=err2d.mean(axis=-1).tolist(),
        body_scale=body_scale(truth_poses),
    )


# ---------------------------------------------------------------- perspective


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera in normalized image units: u = f * X / Z + c."""

    focal: float
    principal: tuple = (0.5, 0.5)

    @property
    def c(self):
        return np.asarray(self.principal, dtype=float)


@dataclass(frozen=True)
class PerspectiveTrajectory:
    rotations: np.ndarray  # (n, 3, 3)
    translations: np.ndarray  # (n, 3) camera-frame translations
    converged: np.ndarray = None  # (n,) bool
    warnings: tuple = ()


def perspective_project(S, Rot, t, intrinsics):
    X = Rot @ S + t[:, None]
    return intrinsics.focal * X[:2] / X[2] + intrinsics.c[:, None]


def perspective_init(S, Rot, W, intrinsics):
    """Translation from the weak-perspective fit: depth from the ratio of
    projected 3D spread to observed 2D spread."""
    P = Rot[:2] @ S
    spread3 = np.sqrt(np.mean(np.sum((P - P.mean(axis=1, keepdims=True)) ** 2, axis=0)))
    spread2 = np.sqrt(np.mean(np.sum((W - W.mean(axis=1, keepdims=True)) ** 2, axis=0)))
    s = spread2 / spread3 if spread3 > 0 else 1.0
    depth = intrinsics.focal / s
    centroid = Rot @ S.mean(axis=1)
    txy = (W.mean(axis=1) - intrinsics.c) / s - centroid[:2]
    tz = depth - centroid[2]
    return np.array([txy[0], txy[1], tz])


def _pnp_frame(S, W, Rot, t, intrinsics, max_iters, tol):
    def residual(Rm, tv):
        return (perspective_project(S, Rm, tv, intrinsics) - W).ravel()

    r = residual(Rot, t)
    err = float(r @ r)
    converged = False
    for _ in range(max_iters):
        X = Rot @ S + t[:, None]  # camera coordinates
        x, y, z = X
        f = intrinsics.focal
        p = S.shape[1]
        # d proj / d X_cam: (2p, 3) blocks
        J_X = np.zeros((p, 2, 3))
        J_X[:, 0, 0] = f / z
        J_X[:, 0, 2] = -f * x / z**2
        J_X[:, 1, 1] = f / z
        J_X[:, 1, 2] = -f * y / z**2
        # Left perturbation R <- exp(hat(w)) R: dX/dw = -hat(R s)
        RS = (Rot @ S).T  # (p, 3)
        J_w = np.einsum("pij,pjk->pik", J_X, -hat(RS))
        J = np.concatenate([J_w, J_X], axis=2).reshape(2 * p, 6)
        rr = r.reshape(2, p).T.ravel()  # match (p, 2) ordering of J
        delta, *_ = np.linalg.lstsq(J, -rr, rcond=None)
        step = 1.0
        improved = False
        for _ in range(30):
            R_new = expm(step * delta[:3]) @ Rot
            t_new = t + step * delta[3:]
            r_new = residual(R_new, t_new)
            e_new = float(r_new @ r_new)
            if e_new <= err:
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True  # no descent direction left at working precision
            break
        dec = err - e_new
        Rot, t, r, err = R_new, t_new, r_new, e_new
        if np.linalg.norm(step * delta) < tol or dec <= tol * tol * max(err, 1e-30):
            converged = True
            break
    return Rot, t, converged


def perspective_adjust(estimate, observations, intrinsics, max_iters=50, tol=1e-12):
    """Per-frame Gauss-Newton refinement of rotation and 3D translation
    under a pinhole model, 2D and 3D poses fixed. Reprojection error never
    increases; frames that hit the iteration cap keep the best iterate and
    are reported in ``warnings``."""
    W = _coords(observations)
    S_all = estimate.shapes()
    Rs, ts, conv, warns = [], [], [], []
    for t_idx in range(estimate.frame_count):
        S = S_all[t_idx]
        Rot = estimate.R[t_idx]
        t0 = perspective_init(S, Rot, W[t_idx], intrinsics)
        Rot_new, t_new, ok = _pnp_frame(S, W[t_idx], Rot, t0, intrinsics, max_iters, tol)
        if not np.all(np.isfinite(Rot_new)) or not np.all(np.isfinite(t_new)):
            Rot_new, t_new, ok = Rot, t0, False
        if not ok:
            warns.append(f"frame {t_idx}: perspective refinement hit the iteration cap")
            log.warning(warns[-1])
        Rs.append(Rot_new)
        ts.append(t_new)
        conv.append(ok)
    return PerspectiveTrajectory(np.stack(Rs), np.stack(ts), np.array(conv), tuple(warns))


def perspective_reprojection_error(S, W, trajectory, intrinsics):
    out = []
    for t_idx in range(len(S)):
        u = perspective_project(S[t_idx], trajectory.rotations[t_idx], trajectory.translations[t_idx], intrinsics)
        out.append(float(np.sum((u - W[t_idx]) ** 2)))
    return np.array(out)


def model_2d(estimate):
    return Pose2DSequence(project_sequence_model(estimate))
