import numpy as np
import pytest

from sparsepose.initialization import (
    InitConfig,
    cube_rotations,
    huber_weights,
    init_from_heatmaps,
    init_given_2d,
    orthographic_procrustes,
)
from sparsepose.metrics import mpjpe_procrustes
from sparsepose.objective import objective
from sparsepose.rotations import is_rotation, random_rotation
from sparsepose.synth import (
    SynthConfig,
    generate_sequence,
    make_dictionary,
    project_sequence,
    render_heatmaps,
)
from sparsepose.types import HeatMapStack, ModelParams, Pose2DSequence, project_sequence_model, validate

from oracles import procrustes_rotation_oracle

DICT = make_dictionary(8, seed=3)
FAST = InitConfig(starts=4, polish_iters=100)


def _residual(est, W):
    return float(np.max(np.abs(project_sequence_model(est) - W)))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"inner_rounds": 0}, {"robust_delta": 0.0}, {"ridge": -1.0}, {"starts": 25}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            InitConfig(**kw)


class TestHelpers:
    def test_cube_rotations(self):
        R = cube_rotations()
        assert R.shape == (24, 3, 3)
        np.testing.assert_array_equal(R[0], np.eye(3))
        assert is_rotation(R)
        assert len({tuple(r.ravel()) for r in R}) == 24

    def test_huber(self):
        np.testing.assert_allclose(huber_weights([0.01, 0.05, 0.2], 0.05), [1.0, 1.0, 0.25])

    @pytest.mark.parametrize("seed", range(3))
    def test_procrustes_isotropic_shape(self, seed):
        # with S S^T = I the trace-maximizing rotation is the exact fit
        rng = np.random.default_rng(seed)
        S = rng.standard_normal((3, 10))
        S -= S.mean(axis=1, keepdims=True)
        vals, vecs = np.linalg.eigh(S @ S.T)
        S = vecs @ np.diag(vals**-0.5) @ vecs.T @ S
        R = random_rotation(rng)
        W = R[:2] @ S + 0.4
        got = orthographic_procrustes(W, S)
        assert is_rotation(got)
        np.testing.assert_allclose(got[:2], R[:2], atol=1e-12)
        np.testing.assert_allclose(got[:2], procrustes_rotation_oracle(W, S)[:2], atol=1e-12)


class TestInitGiven2d:
    def test_single_atom_identity_camera(self):
        W = DICT.atoms[2][:2][None] + 0.5
        est = init_given_2d(W, DICT, config=FAST)
        assert _residual(est, W) <= 1e-6

    def test_mean_pose_is_fixed_point(self):
        W = DICT.atoms.mean(axis=0)[:2][None] + 0.5
        est = init_given_2d(W, DICT, config=InitConfig(inner_rounds=1, starts=1))
        assert _residual(est, W) <= 1e-8

    def test_generated_sequence_exact(self):
        poses, _, cam = generate_sequence(SynthConfig(frames=5, seed=1), DICT)
        W = project_sequence(poses, cam)
        est = init_given_2d(W, DICT, config=FAST)
        assert _residual(est, W.coords) <= 1e-8

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_neighbour_starts_rescue_trapped_frames(self, seed):
        D = make_dictionary(16, seed=1)
        poses, _, cam = generate_sequence(SynthConfig(frames=30, seed=seed), D)
        W = project_sequence(poses, cam).coords
        res = []
        for propagate in (False, True):
            est = init_given_2d(W, D, config=InitConfig(starts=4, polish_iters=100, propagate=propagate))
            res.append(np.abs(project_sequence_model(est) - W).max(axis=(1, 2)))
        alone, shared = res
        assert alone.max() > 1e-3
        assert shared.max() <= 1e-12
        assert np.all(shared <= alone + 1e-15)

    def test_noisy_is_well_formed(self, rng):
        W = Pose2DSequence(0.5 + 0.1 * rng.standard_normal((3, 2, 15)))
        est = init_given_2d(W, DICT, config=FAST)
        assert validate(est) == []
        assert np.isfinite(objective(est, W, ModelParams()).total)

    def test_rank_deficient_frame(self):
        W = np.full((2, 2, 15), 0.5)
        W[0] += np.linspace(0, 0.1, 15)
        with pytest.raises(ValueError, match="rank-deficient frame 1"):
            init_given_2d(W, DICT)

    def test_joint_count_mismatch(self):
        with pytest.raises(ValueError):
            init_given_2d(np.zeros((1, 2, 4)), DICT)

    def test_deterministic(self, rng):
        W = 0.5 + 0.1 * rng.standard_normal((3, 2, 15))
        a = init_given_2d(W, DICT, config=FAST)
        b = init_given_2d(W, DICT, config=FAST)
        assert a.C.tobytes() == b.C.tobytes() and a.R.tobytes() == b.R.tobytes()


class TestInitFromHeatmaps:
    def test_delta_maps_match_given_2d(self):
        poses, _, cam = generate_sequence(SynthConfig(frames=3, seed=2), DICT)
        W = project_sequence(poses, cam).coords
        geom = HeatMapStack(np.zeros((1, 1, 64, 64))).geometry
        maps = np.zeros((3, 15, 64, 64))
        centers = np.empty_like(W)
        for t in range(3):
            cells = geom.cell_of(W[t].T)
            maps[t].reshape(15, -1)[np.arange(15), cells] = 1.0
            centers[t] = geom.cell_centers()[cells].T
        a = init_from_heatmaps(HeatMapStack(maps), DICT, config=FAST)
        b = init_given_2d(centers, DICT, config=FAST)
        np.testing.assert_allclose(a.C, b.C, atol=1e-8)
        np.testing.assert_allclose(a.R, b.R, atol=1e-8)

    @pytest.mark.parametrize("seed", [0, 4])
    def test_huber_damps_displaced_joint(self, seed):
        D = make_dictionary(16, seed=0)
        cfg = SynthConfig(frames=6, seed=seed, grid_height=64, grid_width=64, blob_sigma=1.0)
        poses, _, cam = generate_sequence(cfg, D)
        W = project_sequence(poses, cam).coords.copy()
        W[:, :, 13] = np.clip(W[:, :, 13] + np.array([0.3, -0.25])[None, :], 0.02, 0.98)
        maps = render_heatmaps(W, cfg)
        robust = init_from_heatmaps(maps, D, robust=True)
        plain = init_from_heatmaps(maps, D, robust=False)
        assert mpjpe_procrustes(robust.shapes(), poses.coords) < mpjpe_procrustes(plain.shapes(), poses.coords)

    def test_uniform_map_tie_break(self):
        poses, _, cam = generate_sequence(SynthConfig(frames=1, seed=5), DICT)
        maps = np.array(render_heatmaps(project_sequence(poses, cam), SynthConfig(grid_height=32, grid_width=32)).maps)
        maps[0, 4] = 1.0 / maps[0, 4].size
        stack = HeatMapStack(maps)
        np.testing.assert_allclose(stack.argmax_locations()[0, :, 4], [0.5 / 32, 0.5 / 32])
        est = init_from_heatmaps(stack, DICT, config=FAST)
        assert validate(est) == []
