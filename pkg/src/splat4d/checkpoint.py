"""Model checkpoints: fixed-width binary format plus PLY inspection exports.

Checkpoint layout (all little-endian, documented byte-by-byte in
docs/formats.md):

    header, 40 bytes:
        0   4s   magic b"I4D" + ASCII version digit (currently b"I4D1")
        4   u32  mode: 0 = lite, 1 = full
        8   u64  n_gaussians
        16  f64  fps
        24  f64  video length (seconds)
        32  8x   reserved, zero
    records, 81 bytes each, one per Gaussian:
        0   f64[4]  mu (x, y, z, t)
        32  f64     log spatial scale
        40  f64     log temporal scale
        48  f64     opacity logit
        56  f64[3]  rgb
        80  u8      dynamic flag

All floats are stored raw (no activation applied), so save -> load is
bit-identical and platform-independent.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .formats import to_uint8, write_ply
from .model import GaussianModel4D, sigmoid
from .seeding import SeedCloud

MAGIC_PREFIX = b"I4D"
VERSION = 1
HEADER_SIZE = 40
RECORD_SIZE = 81

_MODES = ("lite", "full")

_RECORD_DTYPE = np.dtype(
    [
        ("mu", "<f8", (4,)),
        ("log_s_xyz", "<f8"),
        ("log_s_t", "<f8"),
        ("opacity_logit", "<f8"),
        ("rgb", "<f8", (3,)),
        ("is_dynamic", "u1"),
    ]
)
assert _RECORD_DTYPE.itemsize == RECORD_SIZE


class CheckpointError(ValueError):
    """Raised for malformed, truncated, or wrong-version checkpoint files."""


def save_checkpoint(model: GaussianModel4D, path: str | Path) -> None:
    """Write the model to `path` in the fixed-width binary format."""
    header = MAGIC_PREFIX + str(VERSION).encode("ascii")
    header += struct.pack("<I", _MODES.index(model.mode))
    header += struct.pack("<Q", model.n)
    header += struct.pack("<d", model.fps)
    header += struct.pack("<d", model.video_length)
    header += b"\x00" * (HEADER_SIZE - len(header))

    rec = np.zeros(model.n, dtype=_RECORD_DTYPE)
    rec["mu"] = model.mu
    rec["log_s_xyz"] = model.log_s_xyz
    rec["log_s_t"] = model.log_s_t
    rec["opacity_logit"] = model.opacity_logit
    rec["rgb"] = model.rgb
    rec["is_dynamic"] = model.is_dynamic

    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


def load_checkpoint(path: str | Path) -> GaussianModel4D:
    """Read a checkpoint written by save_checkpoint, bit-identically."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise CheckpointError(
            f"checkpoint truncated: {len(data)} bytes is smaller than the "
            f"{HEADER_SIZE}-byte header"
        )
    if data[:3] != MAGIC_PREFIX or not chr(data[3]).isdigit():
        raise CheckpointError(f"bad magic {data[:4]!r}; expected {MAGIC_PREFIX!r} + version")
    version = int(chr(data[3]))
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}; this build reads version {VERSION}"
        )
    mode_idx, n = struct.unpack_from("<IQ", data, 4)
    fps, video_length = struct.unpack_from("<dd", data, 16)
    if mode_idx >= len(_MODES):
        raise CheckpointError(f"unknown mode code {mode_idx}")
    expected = HEADER_SIZE + n * RECORD_SIZE
    if len(data) != expected:
        raise CheckpointError(
            f"checkpoint size mismatch: {len(data)} bytes, expected {expected} "
            f"({n} records of {RECORD_SIZE} bytes after a {HEADER_SIZE}-byte header)"
        )
    rec = np.frombuffer(data, dtype=_RECORD_DTYPE, count=n, offset=HEADER_SIZE)
    return GaussianModel4D(
        mu=rec["mu"].astype(np.float64),
        log_s_xyz=rec["log_s_xyz"].astype(np.float64),
        log_s_t=rec["log_s_t"].astype(np.float64),
        opacity_logit=rec["opacity_logit"].astype(np.float64),
        rgb=rec["rgb"].astype(np.float64),
        is_dynamic=rec["is_dynamic"].astype(bool),
        video_length=video_length,
        fps=fps,
        mode=_MODES[mode_idx],
    )


def export_model_ply(model: GaussianModel4D, path: str | Path) -> None:
    """Write an inspection-friendly PLY view of the model.

    Activated values (linear scales, sigmoid opacity, 8-bit colors) rather
    than raw parameters, so third-party point-cloud viewers show something
    meaningful. Not a round-trip format; use checkpoints for that.
    """
    colors = to_uint8(model.rgb)
    write_ply(
        path,
        [
            ("x", "float", model.mu[:, 0]),
            ("y", "float", model.mu[:, 1]),
            ("z", "float", model.mu[:, 2]),
            ("t", "float", model.mu[:, 3]),
            ("scale", "float", model.s_xyz),
            ("scale_t", "float", model.s_t),
            ("opacity", "float", sigmoid(model.opacity_logit)),
            ("red", "uchar", colors[:, 0]),
            ("green", "uchar", colors[:, 1]),
            ("blue", "uchar", colors[:, 2]),
        ],
    )


def export_seeds_ply(cloud: SeedCloud, path: str | Path) -> None:
    """Write a debug PLY of a (possibly pruned) seed cloud."""
    colors = to_uint8(cloud.colors)
    write_ply(
        path,
        [
            ("x", "float", cloud.positions[:, 0]),
            ("y", "float", cloud.positions[:, 1]),
            ("z", "float", cloud.positions[:, 2]),
            ("red", "uchar", colors[:, 0]),
            ("green", "uchar", colors[:, 1]),
            ("blue", "uchar", colors[:, 2]),
            ("t", "float", cloud.timestamps),
            ("s_t", "float", cloud.temporal_scale),
            ("motion_prob", "float", cloud.motion_prob),
        ],
    )
