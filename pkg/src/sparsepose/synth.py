"""Ground-truthed synthetic data: dictionaries, sequences, 2D projections
and heat maps, plus controlled heat-map corruption (distractor blobs and
left/right channel swaps).

Every function draws from its own ``numpy.random.Generator`` seeded with
``(seed, stream)`` so outputs are reproducible and independent of call
order.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .rotations import expm
from .types import (
    CameraTrajectory,
    CoeffSequence,
    HeatMapStack,
    Pose2DSequence,
    Pose3DSequence,
    PoseDictionary,
    default_skeleton,
)

_STREAM_SEQUENCE = 1
_STREAM_NOISE = 2
_STREAM_CORRUPT = 3
_STREAM_DICT = 4


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 100
    active_atoms: int = 3
    coeff_scale: float = 0.9
    coeff_walk_std: float = 0.02
    camera_rotation_rate: float = 15.0  # degrees per second
    frame_rate: float = 10.0  # Hz
    noise_std_2d: float = 0.0
    grid_height: int = 32
    grid_width: int = 32
    blob_sigma: float = 1.5  # standard deviation in grid cells
    corrupt_fraction: float = 0.0
    distractor_count: int = 1
    distractor_weight: float = 1.5
    swap_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frames < 1 or self.active_atoms < 1:
            raise ValueError("frames and active_atoms must be positive")
        for name in ("coeff_walk_std", "camera_rotation_rate", "frame_rate", "noise_std_2d",
                     "blob_sigma", "distractor_weight", "coeff_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.frame_rate == 0:
            raise ValueError("frame_rate must be positive")
        for name in ("corrupt_fraction", "swap_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.grid_height < 2 or self.grid_width < 2:
            raise ValueError("heat-map grid must be at least 2 x 2")

    def as_dict(self):
        return asdict(self)


# Standing pose for :func:`default_skeleton`; x right, y down, z toward camera.
_TEMPLATE_15 = np.array(
    [
        [0.00, 0.00, 0.00],   # pelvis
        [0.00, -0.50, 0.00],  # thorax
        [0.00, -0.75, 0.02],  # head
        [0.18, -0.47, 0.00],  # l_shoulder
        [0.26, -0.20, 0.03],  # l_elbow
        [0.30, 0.05, 0.08],   # l_wrist
        [-0.18, -0.47, 0.00], # r_shoulder
        [-0.26, -0.20, 0.03], # r_elbow
        [-0.30, 0.05, 0.08],  # r_wrist
        [0.10, 0.02, 0.00],   # l_hip
        [0.11, 0.45, 0.03],   # l_knee
        [0.11, 0.88, -0.03],  # l_ankle
        [-0.10, 0.02, 0.00],  # r_hip
        [-0.11, 0.45, 0.03],  # r_knee
        [-0.11, 0.88, -0.03], # r_ankle
    ]
).T


def template_pose(skeleton=None):
    skeleton = skeleton or default_skeleton()
    if skeleton.joint_count != _TEMPLATE_15.shape[1]:
        raise ValueError("built-in template only covers the default 15-joint skeleton")
    return _TEMPLATE_15.copy()


def _children(skeleton):
    kids = {j: [] for j in range(skeleton.joint_count)}
    for a, b in skeleton.limb_edges:
        kids[a].append(b)
    return kids


def _subtree(kids, j):
    out, stack = [], [j]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(kids[v])
    return out


def articulate(pose, skeleton, rng, max_angle_deg=35.0):
    """Rotate every limb subtree about its parent joint by a random angle."""
    S = np.array(pose, dtype=float)
    kids = _children(skeleton)
    max_angle = np.deg2rad(max_angle_deg)
    for a, b in skeleton.limb_edges:
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        Rot = expm(axis * rng.uniform(-max_angle, max_angle))
        sub = _subtree(kids, b)
        S[:, sub] = S[:, [a]] + Rot @ (S[:, sub] - S[:, [a]])
    return S


def make_dictionary(k, skeleton=None, seed=0, max_angle_deg=35.0):
    """Pose-like dictionary: articulated variants of a standing template,
    root-centered and scaled to unit Frobenius norm."""
    skeleton = skeleton or default_skeleton()
    rng = _rng(seed, _STREAM_DICT)
    base = template_pose(skeleton)
    atoms = []
    for _ in range(k):
        S = articulate(base, skeleton, rng, max_angle_deg)
        S = S - S[:, [skeleton.root]]
        atoms.append(S / np.linalg.norm(S))
    return PoseDictionary(np.stack(atoms), skeleton)


def random_dictionary(k, p, seed=0):
    """Unstructured Gaussian atoms, unit-normalized. For algebraic tests."""
    rng = _rng(seed, _STREAM_DICT)
    A = rng.standard_normal((k, 3, p))
    A /= np.linalg.norm(A.reshape(k, -1), axis=1)[:, None, None]
    return PoseDictionary(A)


def generate_sequence(config, dictionary):
    """Sparse, slowly varying codes and a camera spinning about a fixed axis.

    Returns (poses, coefficients, camera). Translations center each
    projected pose in the unit box.
    """
    rng = _rng(config.seed, _STREAM_SEQUENCE)
    k = dictionary.size
    n = config.frames
    m = min(config.active_atoms, k)
    support = np.sort(rng.choice(k, size=m, replace=False))
    start = rng.uniform(0.5, 1.5, size=m)
    start *= config.coeff_scale / start.sum()
    steps = config.coeff_walk_std * rng.standard_normal((m, n))
    steps[:, 0] = 0.0
    C = np.zeros((k, n))
    C[support] = start[:, None] + np.cumsum(steps, axis=1)

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    per_frame = np.deg2rad(config.camera_rotation_rate) / config.frame_rate
    R = expm(np.arange(n)[:, None] * per_frame * axis[None, :])

    S = np.einsum("kn,kdp->ndp", C, dictionary.atoms)
    T = 0.5 - np.mean(R[:, :2] @ S, axis=2)
    return (
        Pose3DSequence(S, dictionary.skeleton),
        CoeffSequence(C),
        CameraTrajectory(R, T),
    )


def project_sequence(poses, camera, noise_std_2d=0.0, seed=0):
    """Weak-perspective images of ``poses`` plus isotropic Gaussian noise."""
    S = poses.coords if isinstance(poses, Pose3DSequence) else np.asarray(poses, dtype=float)
    W = camera.rotations[:, :2] @ S + camera.translations[:, :, None]
    if noise_std_2d > 0:
        W = W + noise_std_2d * _rng(seed, _STREAM_NOISE).standard_normal(W.shape)
    return Pose2DSequence(W)


def _blob(geometry_h, geometry_w, xy, sigma):
    """Normalized separable Gaussian on the grid centered at normalized xy."""
    xs = np.arange(geometry_w) + 0.5
    ys = np.arange(geometry_h) + 0.5
    gx = np.exp(-((xs - xy[0] * geometry_w) ** 2) / (2.0 * sigma * sigma))
    gy = np.exp(-((ys - xy[1] * geometry_h) ** 2) / (2.0 * sigma * sigma))
    m = np.outer(gy, gx)
    return m / m.sum()


def render_heatmaps(observations, config, return_clamped=False):
    """One Gaussian blob per joint and frame, std ``config.blob_sigma`` cells.

    Locations outside the unit box are clamped to its boundary first; with
    ``return_clamped`` the (n, p) boolean clamp mask is returned as well.
    """
    W = observations.coords if isinstance(observations, Pose2DSequence) else np.asarray(observations)
    n, _, p = W.shape
    H, Wd = config.grid_height, config.grid_width
    clipped = np.clip(W, 0.0, 1.0)
    clamped = np.any(clipped != W, axis=1)
    xs = np.arange(Wd) + 0.5
    ys = np.arange(H) + 0.5
    s2 = 2.0 * config.blob_sigma**2
    gx = np.exp(-((xs[None, None, :] - clipped[:, 0, :, None] * Wd) ** 2) / s2)  # (n, p, W)
    gy = np.exp(-((ys[None, None, :] - clipped[:, 1, :, None] * H) ** 2) / s2)  # (n, p, H)
    maps = gy[..., :, None] * gx[..., None, :]
    stack = HeatMapStack.normalized(maps)
    return (stack, clamped) if return_clamped else stack


@dataclass(frozen=True)
class CorruptionRecord:
    corrupted: tuple  # (frame, joint) pairs picked for corruption
    swapped: tuple = ()  # (frame, joint_a, joint_b) channel exchanges
    distractors: tuple = ()  # (frame, joint, x, y) blob centers
    mask: np.ndarray = field(default=None, compare=False)


def corrupt_heatmaps(heatmaps, config, skeleton=None):
    """Corrupt an exact number of (frame, joint) maps.

    ``round(corrupt_fraction * n * p)`` pairs are drawn without
    replacement. A picked joint that has a left/right partner has its
    channel swapped with the partner's with probability
    ``swap_probability``; otherwise ``distractor_count`` blobs of relative
    mass ``distractor_weight`` are added at uniform random positions.
    Maps are renormalized afterwards.
    """
    maps = np.array(heatmaps.maps, dtype=float)
    n, p, H, W = maps.shape
    total = n * p
    count = int(round(config.corrupt_fraction * total))
    if count == 0:
        return heatmaps, CorruptionRecord((), (), (), np.zeros((n, p), dtype=bool))
    rng = _rng(config.seed, _STREAM_CORRUPT)
    picks = np.sort(rng.choice(total, size=count, replace=False))
    mask = np.zeros((n, p), dtype=bool)
    corrupted, swapped, distractors = [], [], []
    for flat in picks:
        t, j = divmod(int(flat), p)
        mask[t, j] = True
        corrupted.append((t, j))
        partner = skeleton.partner(j) if skeleton is not None else None
        if partner is not None and rng.random() < config.swap_probability:
            maps[t, [j, partner]] = maps[t, [partner, j]]
            swapped.append((t, j, partner))
            continue
        for _ in range(config.distractor_count):
            xy = rng.uniform(0.05, 0.95, size=2)
            maps[t, j] += config.distractor_weight * maps[t, j].sum() * _blob(H, W, xy, config.blob_sigma)
            distractors.append((t, j, float(xy[0]), float(xy[1])))
    record = CorruptionRecord(tuple(corrupted), tuple(swapped), tuple(distractors), mask)
    return HeatMapStack.normalized(maps), record
