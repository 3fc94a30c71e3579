"""Small SO(3) toolkit: hat/vee maps, Rodrigues exponential, logarithm,
geodesic distance and nearest-rotation projection.

All functions accept a single 3x3 matrix or a stack of shape (..., 3, 3).
"""

import numpy as np


def hat(omega):
    """Map axis-angle vectors (..., 3) to skew-symmetric matrices (..., 3, 3)."""
    omega = np.asarray(omega, dtype=float)
    x, y, z = omega[..., 0], omega[..., 1], omega[..., 2]
    K = np.zeros(omega.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -z, y
    K[..., 1, 0], K[..., 1, 2] = z, -x
    K[..., 2, 0], K[..., 2, 1] = -y, x
    return K


def vee(omega_hat):
    """Inverse of :func:`hat`; only the skew part of the input is used."""
    A = np.asarray(omega_hat, dtype=float)
    return 0.5 * np.stack(
        [A[..., 2, 1] - A[..., 1, 2], A[..., 0, 2] - A[..., 2, 0], A[..., 1, 0] - A[..., 0, 1]],
        axis=-1,
    )


def skew(A):
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def expm(omega):
    """Rodrigues formula. ``omega`` is (..., 3) axis-angle."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)[..., None, None]
    K = hat(omega)
    K2 = K @ K
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    # Taylor branches keep the map smooth near zero.
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * K2


def logm(R):
    """Axis-angle vector of a rotation, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    v = vee(R)
    sin = np.sin(theta)
    out = np.empty(R.shape[:-2] + (3,))
    small = theta < 1e-6
    near_pi = theta > np.pi - 1e-4
    regular = ~(small | near_pi)
    out[small] = v[small] * (1.0 + theta[small, None] ** 2 / 6.0)
    out[regular] = v[regular] * (theta[regular] / sin[regular])[..., None]
    if np.any(near_pi):
        # Axis from the symmetric part: R + I = 2 a a^T at theta = pi.
        for idx in zip(*np.nonzero(near_pi)) if R.ndim > 2 else [()]:
            M = R[idx]
            B = 0.5 * (M + np.eye(3))
            col = int(np.argmax(np.diag(B)))
            axis = B[:, col] / np.sqrt(max(B[col, col], 1e-300))
            # Fix the sign using the (small) skew part.
            if np.dot(axis, vee(M)) < 0:
                axis = -axis
            out[idx] = axis * theta[idx]
    return out


def geodesic_distance(R1, R2):
    """Angle (radians) of R1^T R2."""
    rel = np.swapaxes(R1, -1, -2) @ R2
    cos = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(cos)


def project_to_so3(M):
    """Closest rotation in Frobenius norm (polar factor with det +1)."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(np.shape(M))
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = d
    return U @ D @ Vt


def random_rotation(rng, size=None):
    """Haar-uniform rotation(s) via normalized Gaussian quaternions."""
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def so3_defect(R):
    """(orthogonality error ||R R^T - I||_F, |det R - 1|) per matrix."""
    R = np.asarray(R, dtype=float)
    ortho = np.linalg.norm(R @ np.swapaxes(R, -1, -2) - np.eye(3), axis=(-2, -1))
    return ortho, np.abs(np.linalg.det(R) - 1.0)


def is_rotation(R, tol=1e-9):
    ortho, det = so3_defect(R)
    return bool(np.all(ortho <= tol) and np.all(det <= tol))
