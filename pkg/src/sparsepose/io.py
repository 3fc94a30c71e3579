"""Binary pose and heat-map files, npz archives for dictionaries and
estimates, and the flat key/value run configuration.

Pose files: 4-byte magic (``SPP3`` for 3D, ``SPP2`` for 2D), uint32
version, uint32 n, uint32 p, then n*d*p little-endian float64 values in
row-major (frame, coordinate, joint) order.

Heat-map files: magic ``SPHM``, uint32 version, uint32 n, p, H, W, then
n*p*H*W little-endian float32 values in row-major order.
"""

import json
import struct
import warnings

import numpy as np

from .types import (
    CameraTrajectory,
    CoeffSequence,
    HeatMapStack,
    Pose2DSequence,
    Pose3DSequence,
    PoseDictionary,
    SequenceEstimate,
    SkeletonSpec,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

VERSION = 1
MAGIC_3D = b"SPP3"
MAGIC_2D = b"SPP2"
MAGIC_HM = b"SPHM"


class FormatError(ValueError):
    """Base class for file format failures; ``code`` identifies the kind."""

    code = "format error"

    def __init__(self, detail=""):
        super().__init__(f"{self.code}: {detail}" if detail else self.code)
        self.detail = detail


class MalformedHeader(FormatError):
    code = "malformed header"


class UnexpectedEnd(FormatError):
    code = "unexpected end of stream"


class InvalidDimensions(FormatError):
    code = "invalid dimensions"


class DimensionMismatch(FormatError):
    code = "dimension mismatch"


class NonFiniteValue(FormatError):
    code = "non-finite value"


class NegativeMass(FormatError):
    code = "negative mass"


class HeatMapRenormalized(UserWarning):
    pass


def _read_exact(buf, offset, size):
    if offset + size > len(buf):
        raise UnexpectedEnd(f"needed {size} bytes at offset {offset}, file has {len(buf)}")
    return buf[offset:offset + size]


def _header(buf, magic, ndims):
    if len(buf) < 4:
        raise UnexpectedEnd("file shorter than its magic bytes")
    if buf[:4] != magic:
        raise MalformedHeader(f"expected magic {magic!r}, found {bytes(buf[:4])!r}")
    fields = struct.unpack("<" + "I" * (1 + ndims), _read_exact(buf, 4, 4 * (1 + ndims)))
    version, dims = fields[0], fields[1:]
    if version != VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if any(d == 0 for d in dims):
        raise InvalidDimensions(f"zero dimension in header {dims}")
    return dims, 4 + 4 * (1 + ndims)


def _payload(buf, offset, count, dtype):
    size = count * np.dtype(dtype).itemsize
    data = _read_exact(buf, offset, size)
    if offset + size != len(buf):
        raise DimensionMismatch(f"{len(buf) - offset - size} trailing bytes after the declared payload")
    values = np.frombuffer(data, dtype=dtype).astype(float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("payload contains NaN or infinity")
    return values


def _write(path, magic, dims, values, dtype):
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<" + "I" * (1 + len(dims)), VERSION, *dims))
        fh.write(np.ascontiguousarray(values, dtype=dtype).tobytes())


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def encode_poses(seq):
    """Serialize a pose sequence to bytes."""
    if isinstance(seq, Pose3DSequence):
        magic = MAGIC_3D
    elif isinstance(seq, Pose2DSequence):
        magic = MAGIC_2D
    else:
        raise TypeError("expected Pose3DSequence or Pose2DSequence")
    n, _, p = seq.coords.shape
    head = magic + struct.pack("<III", VERSION, n, p)
    return head + np.ascontiguousarray(seq.coords, dtype="<f8").tobytes()


def decode_poses(buf, dims=None):
    """Parse bytes written by :func:`encode_poses`. ``dims`` (2 or 3) pins
    the expected kind."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise UnexpectedEnd("file shorter than its magic bytes")
    magic = buf[:4]
    if magic == MAGIC_3D:
        d = 3
    elif magic == MAGIC_2D:
        d = 2
    else:
        raise MalformedHeader(f"unknown magic {magic!r}")
    if dims is not None and d != dims:
        raise DimensionMismatch(f"expected {dims}D poses, file holds {d}D poses")
    (n, p), off = _header(buf, magic, 2)
    values = _payload(buf, off, n * d * p, "<f8").reshape(n, d, p)
    return Pose3DSequence(values) if d == 3 else Pose2DSequence(values)


def write_poses(path, seq):
    with open(path, "wb") as fh:
        fh.write(encode_poses(seq))


def read_poses(path, dims=None, joints=None):
    seq = decode_poses(_read_bytes(path), dims)
    if joints is not None and seq.coords.shape[2] != joints:
        raise DimensionMismatch(f"expected {joints} joints, file has {seq.coords.shape[2]}")
    return seq


def encode_heatmaps(stack):
    maps = stack.maps if isinstance(stack, HeatMapStack) else np.asarray(stack)
    n, p, H, W = maps.shape
    head = MAGIC_HM + struct.pack("<IIIII", VERSION, n, p, H, W)
    return head + np.ascontiguousarray(maps, dtype="<f4").tobytes()


def decode_heatmaps(buf, renorm_tol=1e-3, exact_tol=1e-6):
    """Parse a heat-map stack. Maps whose mass differs from one by more
    than ``exact_tol`` are rescaled; beyond ``renorm_tol`` a
    :class:`HeatMapRenormalized` warning is issued."""
    buf = bytes(buf)
    (n, p, H, W), off = _header(buf, MAGIC_HM, 4)
    maps = _payload(buf, off, n * p * H * W, "<f4").reshape(n, p, H, W)
    if np.any(maps < 0):
        t, j = np.argwhere(maps < 0)[0][:2]
        raise NegativeMass(f"frame {t}, joint {j}")
    mass = maps.sum(axis=(2, 3))
    if np.any(mass <= 0):
        t, j = np.argwhere(mass <= 0)[0]
        raise NegativeMass(f"frame {t}, joint {j} has no mass")
    off_by = np.abs(mass - 1.0)
    if np.any(off_by > renorm_tol):
        warnings.warn(
            f"{int(np.sum(off_by > renorm_tol))} heat maps off unit mass by up to "
            f"{float(off_by.max()):.3g}; renormalized",
            HeatMapRenormalized,
            stacklevel=3,
        )
    if np.any(off_by > exact_tol):
        maps = maps / mass[:, :, None, None]
    return HeatMapStack(maps)


def write_heatmaps(path, stack):
    with open(path, "wb") as fh:
        fh.write(encode_heatmaps(stack))


def read_heatmaps(path, joints=None):
    stack = decode_heatmaps(_read_bytes(path))
    if joints is not None and stack.joint_count != joints:
        raise DimensionMismatch(f"expected {joints} joints, file has {stack.joint_count}")
    return stack


# ------------------------------------------------------------------ archives


def _skeleton_json(skeleton):
    return json.dumps(skeleton.to_dict(), sort_keys=True) if skeleton is not None else ""


def _skeleton_from(z):
    text = str(z["skeleton"]) if "skeleton" in z.files else ""
    return SkeletonSpec.from_dict(json.loads(text)) if text else None


def _savez(path, **arrays):
    # np.savez writes fixed zip timestamps, so equal content gives equal bytes
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def write_dictionary(path, dictionary):
    _savez(path, atoms=dictionary.atoms, skeleton=np.array(_skeleton_json(dictionary.skeleton)))


def read_dictionary(path):
    with np.load(path, allow_pickle=False) as z:
        if "atoms" not in z.files:
            raise MalformedHeader("dictionary archive lacks 'atoms'")
        atoms = z["atoms"]
        if atoms.ndim != 3 or atoms.shape[1] != 3 or 0 in atoms.shape:
            raise InvalidDimensions(f"atoms have shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise NonFiniteValue("dictionary atoms")
        return PoseDictionary(atoms, _skeleton_from(z))


def write_estimate(path, estimate):
    _savez(
        path,
        coeffs=estimate.C,
        rotations=estimate.R,
        translations=estimate.T,
        atoms=estimate.B,
        skeleton=np.array(_skeleton_json(estimate.dictionary.skeleton)),
    )


def read_estimate(path):
    with np.load(path, allow_pickle=False) as z:
        missing = {"coeffs", "rotations", "translations", "atoms"} - set(z.files)
        if missing:
            raise MalformedHeader(f"estimate archive lacks {sorted(missing)}")
        arrays = {k: z[k] for k in ("coeffs", "rotations", "translations", "atoms")}
        for k, v in arrays.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteValue(k)
        dictionary = PoseDictionary(arrays["atoms"], _skeleton_from(z))
        return SequenceEstimate(
            CoeffSequence(arrays["coeffs"]),
            CameraTrajectory(arrays["rotations"], arrays["translations"]),
            dictionary,
        )


def write_camera(path, camera):
    _savez(path, rotations=camera.rotations, translations=camera.translations)


# -------------------------------------------------------------------- config


def read_config(path):
    """Flat ``key = value`` file (TOML syntax, no tables)."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise MalformedHeader(f"config {path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise MalformedHeader(f"config {path}: tables are not allowed ({', '.join(nested)})")
    return data
