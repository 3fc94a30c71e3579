import struct
import warnings

import numpy as np
import pytest

from sparsepose import io
from sparsepose.types import HeatMapStack, Pose2DSequence, Pose3DSequence, default_skeleton

from conftest import random_estimate


class TestPoseFiles:
    @pytest.mark.parametrize("cls,d", [(Pose3DSequence, 3), (Pose2DSequence, 2)])
    def test_round_trip_bit_identical(self, tmp_path, rng, cls, d):
        seq = cls(rng.standard_normal((5, d, 7)))
        path = tmp_path / "x.bin"
        io.write_poses(path, seq)
        back = io.read_poses(path)
        assert type(back) is cls
        assert back.coords.tobytes() == seq.coords.tobytes()

    def test_header_layout(self, rng):
        buf = io.encode_poses(Pose2DSequence(rng.standard_normal((2, 2, 3))))
        assert buf[:4] == b"SPP2"
        assert struct.unpack("<III", buf[4:16]) == (1, 2, 3)
        assert len(buf) == 16 + 8 * 12

    def test_truncated(self, rng):
        buf = io.encode_poses(Pose3DSequence(rng.standard_normal((2, 3, 4))))
        with pytest.raises(io.UnexpectedEnd, match="unexpected end of stream"):
            io.decode_poses(buf[:-3])
        with pytest.raises(io.UnexpectedEnd):
            io.decode_poses(buf[:10])

    def test_zero_joints(self):
        buf = b"SPP3" + struct.pack("<III", 1, 2, 0)
        with pytest.raises(io.InvalidDimensions, match="invalid dimensions"):
            io.decode_poses(buf)

    def test_bad_magic(self):
        with pytest.raises(io.MalformedHeader):
            io.decode_poses(b"NOPE" + bytes(12))

    def test_bad_version(self):
        with pytest.raises(io.MalformedHeader, match="version"):
            io.decode_poses(b"SPP3" + struct.pack("<III", 7, 1, 1) + bytes(24))

    def test_non_finite(self):
        vals = np.zeros(3)
        vals[1] = np.inf
        buf = b"SPP3" + struct.pack("<III", 1, 1, 1) + vals.astype("<f8").tobytes()
        with pytest.raises(io.NonFiniteValue):
            io.decode_poses(buf)

    def test_trailing_bytes_and_kind(self, tmp_path, rng):
        buf = io.encode_poses(Pose3DSequence(rng.standard_normal((1, 3, 2))))
        with pytest.raises(io.DimensionMismatch):
            io.decode_poses(buf + b"\0" * 8)
        with pytest.raises(io.DimensionMismatch):
            io.decode_poses(buf, dims=2)
        path = tmp_path / "p.p3d"
        path.write_bytes(buf)
        with pytest.raises(io.DimensionMismatch):
            io.read_poses(path, joints=5)

    def test_error_codes_distinct(self):
        codes = {c.code for c in (io.MalformedHeader, io.UnexpectedEnd, io.InvalidDimensions,
                                  io.DimensionMismatch, io.NonFiniteValue, io.NegativeMass)}
        assert len(codes) == 6


class TestHeatmapFiles:
    def _stack(self, rng, n=2, p=3, H=4, W=5):
        m = rng.random((n, p, H, W)).astype(np.float32).astype(float)
        return HeatMapStack(m / m.sum(axis=(2, 3), keepdims=True))

    def test_round_trip(self, tmp_path, rng):
        stack = self._stack(rng)
        path = tmp_path / "h.hm"
        io.write_heatmaps(path, stack)
        back = io.read_heatmaps(path)
        np.testing.assert_allclose(back.maps, stack.maps, rtol=1e-6)
        io.write_heatmaps(tmp_path / "h2.hm", back)
        assert (tmp_path / "h2.hm").read_bytes() == path.read_bytes()

    def test_negative_mass(self, rng):
        m = np.array(self._stack(rng).maps)
        m[1, 2, 0, 0] = -0.1
        with pytest.raises(io.NegativeMass, match="negative mass"):
            io.decode_heatmaps(io.encode_heatmaps(m))

    def test_empty_map(self):
        with pytest.raises(io.NegativeMass):
            io.decode_heatmaps(io.encode_heatmaps(np.zeros((1, 1, 2, 2))))

    def test_renormalized_with_warning(self, rng):
        m = 0.9 * np.array(self._stack(rng).maps)
        with pytest.warns(io.HeatMapRenormalized):
            back = io.decode_heatmaps(io.encode_heatmaps(m))
        np.testing.assert_allclose(back.maps.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_small_drift_quiet(self, rng):
        m = (1 + 1e-5) * np.array(self._stack(rng).maps)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            back = io.decode_heatmaps(io.encode_heatmaps(m))
        np.testing.assert_allclose(back.maps.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_truncated(self, rng):
        buf = io.encode_heatmaps(self._stack(rng))
        with pytest.raises(io.UnexpectedEnd):
            io.decode_heatmaps(buf[:-1])


class TestArchives:
    def test_dictionary_round_trip(self, tmp_path):
        from sparsepose.synth import make_dictionary

        D = make_dictionary(4, seed=2)
        io.write_dictionary(tmp_path / "d.npz", D)
        back = io.read_dictionary(tmp_path / "d.npz")
        assert back.atoms.tobytes() == D.atoms.tobytes()
        assert back.skeleton == default_skeleton()

    def test_estimate_round_trip(self, tmp_path, rng):
        est = random_estimate(rng)
        io.write_estimate(tmp_path / "e.npz", est)
        back = io.read_estimate(tmp_path / "e.npz")
        for a, b in ((est.C, back.C), (est.R, back.R), (est.T, back.T), (est.B, back.B)):
            assert a.tobytes() == b.tobytes()
        assert back.dictionary.skeleton is None

    def test_archive_bytes_stable(self, tmp_path, rng):
        est = random_estimate(rng)
        io.write_estimate(tmp_path / "a.npz", est)
        io.write_estimate(tmp_path / "b.npz", est)
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()

    def test_missing_arrays(self, tmp_path):
        np.savez(tmp_path / "bad.npz", coeffs=np.zeros((1, 1)))
        with pytest.raises(io.MalformedHeader):
            io.read_estimate(tmp_path / "bad.npz")
        with pytest.raises(io.MalformedHeader):
            io.read_dictionary(tmp_path / "bad.npz")


class TestConfig:
    def test_flat(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('alpha = 0.2\nframes = 40\nmode = "heatmaps"\n')
        assert io.read_config(path) == {"alpha": 0.2, "frames": 40, "mode": "heatmaps"}

    def test_tables_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[solver]\nalpha = 0.2\n")
        with pytest.raises(io.MalformedHeader, match="tables"):
            io.read_config(path)

    def test_syntax_error(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("alpha = = 1\n")
        with pytest.raises(io.MalformedHeader):
            io.read_config(path)
