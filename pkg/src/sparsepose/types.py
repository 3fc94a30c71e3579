"""Domain types shared by every solver.

Array layout conventions (used throughout the package):

* 3D pose sequence: ``(n, 3, p)``; a single pose is ``(3, p)``.
* 2D pose sequence: ``(n, 2, p)`` in normalized image coordinates, the
  subject box mapped to the unit square. Row 0 is x (grid column
  direction), row 1 is y (grid row direction).
* dictionary atoms: ``(k, 3, p)``.
* coefficients: ``(k, n)``, column ``t`` holds the codes of frame ``t``.
* rotations: ``(n, 3, 3)`` full SO(3) elements; the weak-perspective
  projection uses their top two rows.
* translations: ``(n, 2)``.
* heat maps: ``(n, p, H, W)``.

Values are frozen dataclasses over read-only arrays. Constructors check
shapes only; :func:`validate` checks the numerical invariants and returns
a list of :class:`Violation` instead of raising.
"""

from dataclasses import dataclass, field

import numpy as np

from .rotations import so3_defect

__all__ = [
    "SkeletonSpec",
    "Pose3D",
    "Pose3DSequence",
    "Pose2DSequence",
    "PoseDictionary",
    "CoeffSequence",
    "CameraTrajectory",
    "ModelParams",
    "GridGeometry",
    "HeatMapStack",
    "SequenceEstimate",
    "Violation",
    "validate",
    "reconstruct_pose",
    "reconstruct_sequence",
    "project",
    "project_sequence_model",
    "default_skeleton",
]


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)  # always a private copy
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim} dimensions, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SkeletonSpec:
    joint_names: tuple
    limb_edges: tuple
    left_right_pairs: tuple = ()
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(str(x) for x in self.joint_names))
        object.__setattr__(
            self, "limb_edges", tuple((int(a), int(b)) for a, b in self.limb_edges)
        )
        object.__setattr__(
            self, "left_right_pairs", tuple((int(a), int(b)) for a, b in self.left_right_pairs)
        )

    @property
    def joint_count(self):
        return len(self.joint_names)

    def partner(self, joint):
        """Left/right counterpart of ``joint`` or None."""
        for a, b in self.left_right_pairs:
            if a == joint:
                return b
            if b == joint:
                return a
        return None

    def to_dict(self):
        return {
            "joint_names": list(self.joint_names),
            "limb_edges": [list(e) for e in self.limb_edges],
            "left_right_pairs": [list(e) for e in self.left_right_pairs],
            "root": self.root,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            joint_names=d["joint_names"],
            limb_edges=[tuple(e) for e in d["limb_edges"]],
            left_right_pairs=[tuple(e) for e in d.get("left_right_pairs", [])],
            root=int(d.get("root", 0)),
        )


def default_skeleton():
    """15-joint body: pelvis root, spine/neck/head, two arms, two legs."""
    names = [
        "pelvis", "thorax", "neck", "head",
        "l_shoulder", "l_elbow", "l_wrist",
        "r_shoulder", "r_elbow", "r_wrist",
        "l_hip", "l_knee", "l_ankle",
        "r_hip", "r_knee", "r_ankle",
    ]
    # Drop the neck to get 15 joints.
    names.remove("neck")
    idx = {n: i for i, n in enumerate(names)}
    edges = [
        ("pelvis", "thorax"), ("thorax", "head"),
        ("thorax", "l_shoulder"), ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"),
        ("thorax", "r_shoulder"), ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"),
        ("pelvis", "l_hip"), ("l_hip", "l_knee"), ("l_knee", "l_ankle"),
        ("pelvis", "r_hip"), ("r_hip", "r_knee"), ("r_knee", "r_ankle"),
    ]
    pairs = [
        ("l_shoulder", "r_shoulder"), ("l_elbow", "r_elbow"), ("l_wrist", "r_wrist"),
        ("l_hip", "r_hip"), ("l_knee", "r_knee"), ("l_ankle", "r_ankle"),
    ]
    return SkeletonSpec(
        joint_names=names,
        limb_edges=[(idx[a], idx[b]) for a, b in edges],
        left_right_pairs=[(idx[a], idx[b]) for a, b in pairs],
        root=idx["pelvis"],
    )


@dataclass(frozen=True)
class Pose3D:
    coords: np.ndarray

    def __post_init__(self):
        c = _frozen(self.coords, 2, "Pose3D.coords")
        if c.shape[0] != 3:
            raise ValueError(f"Pose3D.coords must be 3 x p, got {c.shape}")
        object.__setattr__(self, "coords", c)

    @property
    def joint_count(self):
        return self.coords.shape[1]


@dataclass(frozen=True)
class Pose3DSequence:
    coords: np.ndarray
    skeleton: SkeletonSpec = None

    def __post_init__(self):
        c = _frozen(self.coords, 3, "Pose3DSequence.coords")
        if c.shape[1] != 3:
            raise ValueError(f"Pose3DSequence.coords must be n x 3 x p, got {c.shape}")
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_frames(cls, frames, skeleton=None):
        return cls(np.stack([f.coords if isinstance(f, Pose3D) else f for f in frames]), skeleton)

    def __len__(self):
        return self.coords.shape[0]

    def __getitem__(self, t):
        return Pose3D(self.coords[t])

    @property
    def frames(self):
        return [Pose3D(c) for c in self.coords]

    @property
    def joint_count(self):
        return self.coords.shape[2]


@dataclass(frozen=True)
class Pose2DSequence:
    coords: np.ndarray

    def __post_init__(self):
        c = _frozen(self.coords, 3, "Pose2DSequence.coords")
        if c.shape[1] != 2:
            raise ValueError(f"Pose2DSequence.coords must be n x 2 x p, got {c.shape}")
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def joint_count(self):
        return self.coords.shape[2]


@dataclass(frozen=True)
class PoseDictionary:
    atoms: np.ndarray
    skeleton: SkeletonSpec = None

    def __post_init__(self):
        a = _frozen(self.atoms, 3, "PoseDictionary.atoms")
        if a.shape[1] != 3:
            raise ValueError(f"PoseDictionary.atoms must be k x 3 x p, got {a.shape}")
        object.__setattr__(self, "atoms", a)

    @property
    def size(self):
        return self.atoms.shape[0]

    @property
    def joint_count(self):
        return self.atoms.shape[2]

    def mean_pose(self):
        return self.atoms.mean(axis=0)


@dataclass(frozen=True)
class CoeffSequence:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 2, "CoeffSequence.values"))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class CameraTrajectory:
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotations, 3, "CameraTrajectory.rotations")
        T = _frozen(self.translations, 2, "CameraTrajectory.translations")
        if R.shape[1:] != (3, 3) or T.shape[1] != 2 or R.shape[0] != T.shape[0]:
            raise ValueError(
                f"CameraTrajectory expects (n,3,3) rotations and (n,2) translations, "
                f"got {R.shape} and {T.shape}"
            )
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "translations", T)

    def __len__(self):
        return self.rotations.shape[0]

    @classmethod
    def identity(cls, n):
        return cls(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 2)))


@dataclass(frozen=True)
class ModelParams:
    """Model weights and solver controls.

    The four weights default to the values used for every experiment in
    normalized image coordinates: sparsity 0.1, coefficient smoothness 5,
    rotation smoothness 0.5 and 2D precision 4.
    """

    alpha: float = 0.1
    beta: float = 5.0
    gamma: float = 0.5
    nu: float = 4.0
    bcd_tol: float = 1e-6
    bcd_max_iters: int = 100
    apg_tol: float = 1e-7
    apg_max_iters: int = 500
    apg_rel_tol: float = 0.0
    m_step_apg_rel_tol: float = 1e-2  # inexact C-steps inside EM
    rot_grad_tol: float = 1e-8
    rot_max_iters: int = 100
    em_tol: float = 1e-4
    em_max_iters: int = 50

    def replace(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class GridGeometry:
    """Heat-map grid over the unit square; cell (r, c) has center
    ((c + 0.5) / W, (r + 0.5) / H)."""

    height: int
    width: int

    @property
    def cell_size(self):
        return np.array([1.0 / self.width, 1.0 / self.height])

    def cell_centers(self):
        """(H*W, 2) array of (x, y) centers in row-major order."""
        ys = (np.arange(self.height) + 0.5) / self.height
        xs = (np.arange(self.width) + 0.5) / self.width
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def cell_of(self, xy):
        """Row-major cell index containing normalized point(s) ``xy`` (..., 2)."""
        xy = np.asarray(xy, dtype=float)
        col = np.clip(np.floor(xy[..., 0] * self.width), 0, self.width - 1).astype(int)
        row = np.clip(np.floor(xy[..., 1] * self.height), 0, self.height - 1).astype(int)
        return row * self.width + col


@dataclass(frozen=True)
class HeatMapStack:
    maps: np.ndarray

    def __post_init__(self):
        m = _frozen(self.maps, 4, "HeatMapStack.maps")
        object.__setattr__(self, "maps", m)

    @classmethod
    def normalized(cls, maps):
        """Build a stack whose every map sums to one."""
        maps = np.asarray(maps, dtype=float)
        total = maps.sum(axis=(-2, -1), keepdims=True)
        if np.any(total <= 0):
            raise ValueError("heat map with no mass cannot be normalized")
        return cls(maps / total)

    @property
    def geometry(self):
        return GridGeometry(self.maps.shape[2], self.maps.shape[3])

    @property
    def frame_count(self):
        return self.maps.shape[0]

    @property
    def joint_count(self):
        return self.maps.shape[1]

    def argmax_locations(self):
        """Per-map argmax cell centers as a (n, 2, p) array.

        Ties resolve to the lowest row-major index."""
        n, p, H, W = self.maps.shape
        flat = self.maps.reshape(n, p, H * W)
        idx = np.argmax(flat, axis=-1)
        centers = self.geometry.cell_centers()[idx]  # (n, p, 2)
        return np.transpose(centers, (0, 2, 1))


@dataclass(frozen=True)
class SequenceEstimate:
    coeffs: CoeffSequence
    camera: CameraTrajectory
    dictionary: PoseDictionary

    def __post_init__(self):
        if not isinstance(self.coeffs, CoeffSequence):
            object.__setattr__(self, "coeffs", CoeffSequence(self.coeffs))
        k, n = self.coeffs.shape
        if k != self.dictionary.size:
            raise ValueError(f"coefficient rows {k} != dictionary size {self.dictionary.size}")
        if n != len(self.camera):
            raise ValueError(f"coefficient frames {n} != camera frames {len(self.camera)}")

    @property
    def frame_count(self):
        return self.coeffs.shape[1]

    @property
    def C(self):
        return self.coeffs.values

    @property
    def R(self):
        return self.camera.rotations

    @property
    def T(self):
        return self.camera.translations

    @property
    def B(self):
        return self.dictionary.atoms

    def with_coeffs(self, C):
        return SequenceEstimate(CoeffSequence(C), self.camera, self.dictionary)

    def with_rotations(self, R):
        return SequenceEstimate(self.coeffs, CameraTrajectory(R, self.T), self.dictionary)

    def with_translations(self, T):
        return SequenceEstimate(self.coeffs, CameraTrajectory(self.R, T), self.dictionary)

    def shapes(self):
        """All 3D poses, (n, 3, p)."""
        return np.einsum("kn,kdp->ndp", self.C, self.B)

    def poses(self):
        return Pose3DSequence(self.shapes(), self.dictionary.skeleton)


def _check_index(t, n):
    if not (-n <= t < n) or isinstance(t, bool):
        raise IndexError(f"frame index {t} out of range for {n} frames")
    return t % n


def reconstruct_pose(estimate, t):
    """Pose of frame ``t`` as the coefficient-weighted sum of atoms."""
    t = _check_index(t, estimate.frame_count)
    return Pose3D(np.tensordot(estimate.C[:, t], estimate.B, axes=1))


def reconstruct_sequence(estimate):
    return estimate.poses()


def project(estimate, t):
    """Weak-perspective image of frame ``t``: top two rows of R_t S_t plus T_t."""
    t = _check_index(t, estimate.frame_count)
    S = reconstruct_pose(estimate, t).coords
    return estimate.R[t, :2] @ S + estimate.T[t][:, None]


def project_sequence_model(estimate):
    """(n, 2, p) model projections for all frames."""
    S = estimate.shapes()
    return estimate.R[:, :2] @ S + estimate.T[:, :, None]


@dataclass(frozen=True)
class Violation:
    invariant: str
    detail: str = field(default="", compare=False)

    def __str__(self):
        return f"{self.invariant}: {self.detail}" if self.detail else self.invariant


def _finite(arr, what, out):
    if not np.all(np.isfinite(arr)):
        out.append(Violation("non-finite values", what))


def validate(value, tol=1e-9, mass_tol=1e-6):
    """Check the invariants of any domain value.

    Returns an empty list when everything holds, otherwise one
    :class:`Violation` per broken invariant.
    """
    out = []
    if isinstance(value, SkeletonSpec):
        p = value.joint_count
        if p < 1:
            out.append(Violation("empty skeleton"))
        if not value.limb_edges:
            out.append(Violation("empty edge list"))
        for a, b in value.limb_edges:
            if not (0 <= a < p and 0 <= b < p):
                out.append(Violation("edge index out of range", f"({a}, {b})"))
            elif a == b:
                out.append(Violation("self edge", f"({a}, {b})"))
        seen = set()
        for a, b in value.left_right_pairs:
            if not (0 <= a < p and 0 <= b < p) or a == b:
                out.append(Violation("invalid left/right pair", f"({a}, {b})"))
            if a in seen or b in seen:
                out.append(Violation("left/right pairs overlap", f"({a}, {b})"))
            seen.update((a, b))
        if not 0 <= value.root < max(p, 1):
            out.append(Violation("root index out of range", str(value.root)))
    elif isinstance(value, (Pose3D, Pose3DSequence, Pose2DSequence)):
        _finite(value.coords, type(value).__name__, out)
        if isinstance(value, (Pose3DSequence, Pose2DSequence)) and len(value) < 1:
            out.append(Violation("empty sequence"))
        skel = getattr(value, "skeleton", None)
        if skel is not None and skel.joint_count != value.coords.shape[-1]:
            out.append(Violation("joint count mismatch", "pose vs skeleton"))
    elif isinstance(value, PoseDictionary):
        if value.size < 1:
            out.append(Violation("empty dictionary"))
        _finite(value.atoms, "atoms", out)
        norms = np.linalg.norm(value.atoms.reshape(value.size, -1), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            out.append(Violation("atom not unit norm", f"norms in [{norms.min():.6g}, {norms.max():.6g}]"))
        if value.skeleton is not None:
            if value.skeleton.joint_count != value.joint_count:
                out.append(Violation("joint count mismatch", "dictionary vs skeleton"))
            out.extend(validate(value.skeleton))
    elif isinstance(value, CoeffSequence):
        _finite(value.values, "coefficients", out)
    elif isinstance(value, CameraTrajectory):
        _finite(value.rotations, "rotations", out)
        _finite(value.translations, "translations", out)
        if not out:
            ortho, det = so3_defect(value.rotations)
            bad = np.nonzero((ortho > tol) | (det > tol))[0]
            if bad.size:
                out.append(Violation("not in SO(3)", f"frames {bad.tolist()}"))
    elif isinstance(value, ModelParams):
        if min(value.alpha, value.beta, value.gamma) < 0:
            out.append(Violation("negative penalty weight"))
        if not value.nu > 0:
            out.append(Violation("non-positive precision"))
        if value.bcd_max_iters < 1 or value.apg_max_iters < 1 or value.rot_max_iters < 1:
            out.append(Violation("iteration cap below one"))
    elif isinstance(value, HeatMapStack):
        n, p, H, W = value.maps.shape
        if H < 2 or W < 2:
            out.append(Violation("grid too small", f"{H}x{W}"))
        _finite(value.maps, "heat maps", out)
        if np.any(value.maps < 0):
            out.append(Violation("negative mass"))
        sums = value.maps.sum(axis=(-2, -1))
        if np.any(np.abs(sums - 1.0) > mass_tol):
            out.append(Violation("unnormalized heat map", f"sums in [{sums.min():.6g}, {sums.max():.6g}]"))
    elif isinstance(value, SequenceEstimate):
        out.extend(validate(value.coeffs))
        out.extend(validate(value.camera, tol=tol))
        _finite(value.dictionary.atoms, "atoms", out)
    else:
        raise TypeError(f"no invariants known for {type(value).__name__}")
    return out
