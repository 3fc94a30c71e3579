"""Learning a pose dictionary from a corpus of 3D poses.

Poses are root-centered and rotated onto the first one, then the
dictionary and sparse codes are fitted by alternating minimization of

    0.5 * ||X - B C||_F^2 + lam * ||C||_1,   ||B_i||_F = 1,

with ``lam = sparsity_weight * mean pose norm`` so the weight does not
depend on the corpus units.
"""

from dataclasses import dataclass, field

import numpy as np

from .bcd import LassoProblem, apg
from .types import PoseDictionary, Pose3DSequence


@dataclass(frozen=True)
class DictLearnConfig:
    atom_count: int = 64
    sparsity_weight: float = 0.02
    outer_iters: int = 50
    seed: int = 0
    tol: float = 1e-7
    code_tol: float = 1e-9
    code_max_iters: int = 2000

    def __post_init__(self):
        if self.atom_count < 1:
            raise ValueError("atom_count must be at least 1")
        if self.sparsity_weight < 0:
            raise ValueError("sparsity_weight must be non-negative")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be at least 1")


@dataclass(frozen=True)
class DictLearnResult:
    dictionary: PoseDictionary
    codes: np.ndarray  # (k, N)
    objective_trace: list = field(default_factory=list)
    reseeded: int = 0

    def relative_residual(self, corpus):
        X = _matrix(corpus)
        B = self.dictionary.atoms.reshape(self.dictionary.size, -1).T
        return float(np.linalg.norm(X - B @ self.codes) / np.linalg.norm(X))


def _coords(poses):
    return poses.coords if isinstance(poses, Pose3DSequence) else np.asarray(poses, dtype=float)


def _matrix(poses):
    S = _coords(poses)
    return S.reshape(S.shape[0], -1).T  # (3p, N)


def align_corpus(poses):
    """Root-center every pose and rotate it onto the first (no scaling)."""
    if not isinstance(poses, Pose3DSequence):
        poses = Pose3DSequence(np.asarray(poses, dtype=float))
    S = poses.coords
    if S.shape[0] < 2:
        raise ValueError("align_corpus needs at least 2 poses")
    root = poses.skeleton.root if poses.skeleton is not None else 0
    S = S - S[:, :, [root]]
    spread = np.linalg.norm(S - S.mean(axis=2, keepdims=True), axis=(1, 2))
    bad = np.nonzero(spread <= 1e-12)[0]
    if bad.size:
        raise ValueError(f"degenerate pose {int(bad[0])}: all joints coincide")
    ref = S[0]
    M = ref @ np.swapaxes(S, 1, 2)  # (N, 3, 3) cross-covariances
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    U[:, :, 2] *= np.where(d == 0, 1.0, d)[:, None]
    R = U @ Vt
    out = R @ S
    out[0] = ref
    return Pose3DSequence(out, poses.skeleton)


def _objective(X, B, C, lam):
    r = X - B @ C
    return 0.5 * float(np.sum(r * r)) + lam * float(np.abs(C).sum())


def _sparse_code(X, B, C0, lam, config):
    prob = LassoProblem(B.T @ B, B.T @ X, lam, 0.0, const=0.5 * float(np.sum(X * X)))
    return apg(prob, C0, tol=config.code_tol, max_iters=config.code_max_iters).C


def _update_atoms(X, B, C):
    """Exact block minimization over each atom in the unit ball, in turn."""
    B = B.copy()
    R = X - B @ C
    for i in range(B.shape[1]):
        ci = C[i]
        nc = float(ci @ ci)
        if nc == 0.0:
            continue
        bi = B[:, i] + R @ ci / nc
        nb = np.linalg.norm(bi)
        if nb > 1.0:
            bi = bi / nb
        R += np.outer(B[:, i] - bi, ci)
        B[:, i] = bi
    return B


def _rescale(B, C):
    """Unit-norm atoms; codes absorb the scale so B C is unchanged."""
    norms = np.linalg.norm(B, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    return B / norms, C * norms[:, None]


def learn_dictionary(corpus, config=None, return_info=False):
    """Alternate sparse coding and atom updates from seeded corpus poses.

    The objective is non-increasing across outer iterations: coding never
    worsens the codes, each atom update is an exact block minimization on
    the unit ball, and rescaling to unit norm keeps B C while shrinking the
    codes. An atom that no pose uses is re-seeded with the worst-fitted
    pose, which leaves the objective unchanged because its codes are zero.
    """
    config = config or DictLearnConfig()
    if not isinstance(corpus, Pose3DSequence):
        corpus = Pose3DSequence(np.asarray(corpus, dtype=float))
    S = corpus.coords
    N, _, p = S.shape
    k = config.atom_count
    if k > N:
        raise ValueError(f"insufficient training poses: {N} poses for {k} atoms")
    X = _matrix(corpus)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite training poses")
    lam = config.sparsity_weight * float(np.mean(np.linalg.norm(X, axis=0)))
    rng = np.random.default_rng([int(config.seed), 5])
    pick = np.sort(rng.choice(N, size=k, replace=False))
    B = X[:, pick].copy()
    nb = np.linalg.norm(B, axis=0)
    if np.any(nb == 0):
        raise ValueError("a seed pose for the dictionary is all zero")
    B /= nb
    C = np.zeros((k, N))
    trace = [_objective(X, B, C, lam)]
    reseeded = 0
    for _ in range(config.outer_iters):
        C = _sparse_code(X, B, C, lam, config)
        dead = np.nonzero(~np.any(C != 0, axis=1))[0]
        if dead.size:
            err = np.linalg.norm(X - B @ C, axis=0)
            worst = np.argsort(-err, kind="stable")[: dead.size]
            for i, j in zip(dead, worst):
                if err[j] > 0:
                    B[:, i] = X[:, j] / np.linalg.norm(X[:, j])
                    reseeded += 1
        B = _update_atoms(X, B, C)
        B, C = _rescale(B, C)
        trace.append(_objective(X, B, C, lam))
        prev, cur = trace[-2], trace[-1]
        if prev - cur <= config.tol * max(abs(prev), 1e-300):
            break
    atoms = B.T.reshape(k, 3, p)
    dictionary = PoseDictionary(atoms, corpus.skeleton)
    if return_info:
        return DictLearnResult(dictionary, C, trace, reseeded)
    return dictionary
