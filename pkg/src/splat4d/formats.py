"""Low-level file formats: PFM float maps, PNG images, binary PLY point sets.

Everything is pinned little-endian so files written on any machine load
bit-identically on any other.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_png",
    "write_png",
    "encode_jpeg",
    "write_ply",
    "PfmError",
]


class PfmError(ValueError):
    """Malformed or truncated PFM data; message carries the byte offset."""


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PfmError(f"unexpected end of PFM header at byte {start}")
    return buf[start:pos], pos


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM into a (H, W) float64 array, top-to-bottom rows."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic == b"PF":
        raise PfmError("color PFM (PF) not supported; expected grayscale Pf at byte 0")
    if magic != b"Pf":
        raise PfmError(f"bad PFM magic {magic!r} at byte 0")
    wtok, pos = _read_token(buf, pos)
    htok, pos = _read_token(buf, pos)
    stok, pos = _read_token(buf, pos)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as e:
        raise PfmError(f"bad PFM header field near byte {pos}: {e}") from None
    if w <= 0 or h <= 0:
        raise PfmError(f"non-positive PFM dimensions {w}x{h} at byte {pos}")
    pos += 1  # single whitespace byte after the scale line
    expected = w * h * 4
    data = buf[pos : pos + expected]
    if len(data) < expected:
        raise PfmError(
            f"truncated PFM: expected {expected} payload bytes at byte {pos}, "
            f"file ends after {len(buf) - pos}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w).astype(np.float64)
    if scale < 0:
        scale = -scale
    if scale not in (0.0, 1.0):
        arr = arr * scale
    return arr[::-1].copy()  # PFM stores rows bottom-to-top


def write_pfm(path: str | Path, values: np.ndarray) -> None:
    """Write a (H, W) array as little-endian grayscale PFM."""
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 2:
        raise ValueError(f"PFM writer takes 2D arrays, got shape {v.shape}")
    h, w = v.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + v[::-1].astype("<f4").tobytes())


def read_png(path: str | Path) -> np.ndarray:
    """Read an RGB(A) PNG into (H, W, 3) float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(path: str | Path, rgb: np.ndarray) -> None:
    """Write (H, W, 3) floats in [0, 1] as 8-bit RGB PNG (rounded, clipped)."""
    arr = to_uint8(rgb)
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return (np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_jpeg(rgb: np.ndarray, quality: int = 85) -> bytes:
    """Encode (H, W, 3) floats in [0, 1] to JPEG bytes."""
    if not (1 <= quality <= 100):
        raise ValueError(f"jpeg quality must be in 1..100, got {quality}")
    out = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(out, format="JPEG", quality=int(quality))
    return out.getvalue()


def write_ply(path: str | Path, columns: list[tuple[str, str, np.ndarray]]) -> None:
    """Write a binary little-endian PLY vertex cloud.

    `columns` is a list of (property name, ply type, values); ply types are
    'float' (f4) or 'uchar' (u1). All columns must share one length.
    """
    if not columns:
        raise ValueError("PLY needs at least one property column")
    n = len(columns[0][2])
    np_types = {"float": "<f4", "uchar": "u1"}
    fields = []
    header_props = []
    for name, ply_type, values in columns:
        if ply_type not in np_types:
            raise ValueError(f"unsupported PLY type {ply_type!r}")
        if len(values) != n:
            raise ValueError("PLY columns must share one length")
        fields.append((name, np_types[ply_type]))
        header_props.append(f"property {ply_type} {name}")
    rec = np.zeros(n, dtype=fields)
    for name, ply_type, values in columns:
        rec[name] = values
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {n}",
            *header_props,
            "end_header",
            "",
        ]
    )
    Path(path).write_bytes(header.encode("ascii") + rec.tobytes())
