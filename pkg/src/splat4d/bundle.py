"""The calibrated input bundle: manifest schema, loader, and writer.

A bundle directory holds `manifest.json` plus per-frame files: RGB as PNG,
depth and motion-probability maps as grayscale little-endian PFM. Poses are
inline in the manifest as row-major 4x4 matrices. The manifest declares its
pose convention (camera-to-world or world-to-camera — loaders normalize to
camera-to-world) and the motion-map encoding (probability or logit).

See docs/formats.md for the full schema.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import read_pfm, read_png, write_pfm, write_png
from .geometry import DepthMap, Intrinsics, PoseSE3
from .motion import MotionProbMap

__all__ = ["CalibratedBundle", "load_bundle", "save_bundle", "BundleError", "MANIFEST_VERSION"]

MANIFEST_VERSION = 1


class BundleError(ValueError):
    """Bundle failed validation; message names the offending file or field."""


@dataclass(frozen=True)
class CalibratedBundle:
    """An in-memory calibrated monocular video bundle."""

    fps: float
    intrinsics: Intrinsics
    poses: tuple[PoseSE3, ...]  # camera-to-world
    images: np.ndarray  # (N, H, W, 3) float64 in [0, 1]
    depths: tuple[DepthMap | None, ...]
    motion: tuple[MotionProbMap, ...]
    timestamps: np.ndarray  # (N,) seconds

    def __post_init__(self) -> None:
        n = len(self.poses)
        if not (len(self.depths) == len(self.motion) == self.images.shape[0] == len(self.timestamps) == n):
            raise BundleError("per-frame arrays disagree on frame count")
        if n == 0:
            raise BundleError("bundle has no frames")
        if not self.fps > 0:
            raise BundleError(f"fps must be positive, got {self.fps}")
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if n > 1 and not (np.diff(ts) > 0).all():
            raise BundleError("timestamps must be strictly increasing")
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.images.shape[1:] != (h, w, 3):
            raise BundleError(
                f"images shaped {self.images.shape[1:]} do not match intrinsics {h}x{w}"
            )
        if h % 8 or w % 8:
            raise BundleError(f"bundle frames must be multiples of 8, got {w}x{h}")
        for i, (d, m) in enumerate(zip(self.depths, self.motion)):
            if d is not None and d.shape != (h, w):
                raise BundleError(f"frame {i}: depth shaped {d.shape}, expected {(h, w)}")
            if m.values.shape != (h // 8, w // 8):
                raise BundleError(
                    f"frame {i}: motion map shaped {m.values.shape}, expected {(h // 8, w // 8)}"
                )
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    @property
    def video_length(self) -> float:
        """Clip length in seconds: last timestamp plus one frame interval."""
        return float(self.timestamps[-1]) + 1.0 / self.fps

    @property
    def size(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width


def _frame_paths(i: int) -> dict[str, str]:
    return {
        "rgb": f"rgb_{i:06d}.png",
        "depth": f"depth_{i:06d}.pfm",
        "motion": f"motion_{i:06d}.pfm",
    }


def save_bundle(bundle: CalibratedBundle, out_dir: str | Path) -> Path:
    """Write a bundle directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(bundle.n_frames):
        paths = _frame_paths(i)
        write_png(out / paths["rgb"], bundle.images[i])
        depth = bundle.depths[i]
        if depth is None:
            raise BundleError(f"frame {i}: cannot save a bundle with missing depth")
        write_pfm(out / paths["depth"], depth.values)
        write_pfm(out / paths["motion"], bundle.motion[i].values)
        frames.append(
            {
                **paths,
                "pose": [float(v) for v in bundle.poses[i].matrix.ravel()],
                "t": float(bundle.timestamps[i]),
            }
        )
    k = bundle.intrinsics
    manifest = {
        "version": MANIFEST_VERSION,
        "fps": bundle.fps,
        "width": k.width,
        "height": k.height,
        "n_frames": bundle.n_frames,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "pose_convention": "c2w",
        "motion_encoding": "probability",
        "frames": frames,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path


def load_bundle(path: str | Path) -> CalibratedBundle:
    """Load and validate a bundle directory (or its manifest.json path)."""
    root = Path(path)
    manifest_path = root if root.name == "manifest.json" else root / "manifest.json"
    root = manifest_path.parent
    if not manifest_path.exists():
        raise BundleError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise BundleError(f"malformed manifest {manifest_path}: {e}") from None

    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise BundleError(f"manifest version {version} not supported (expected {MANIFEST_VERSION})")
    try:
        fps = float(manifest["fps"])
        width, height = int(manifest["width"]), int(manifest["height"])
        ki = manifest["intrinsics"]
        intr = Intrinsics(
            fx=float(ki["fx"]), fy=float(ki["fy"]), cx=float(ki["cx"]), cy=float(ki["cy"]),
            width=width, height=height,
        )
        convention = manifest["pose_convention"]
        frames = manifest["frames"]
        n_frames = int(manifest["n_frames"])
    except (KeyError, TypeError, ValueError) as e:
        raise BundleError(f"manifest {manifest_path} missing or malformed field: {e}") from None
    if convention not in ("c2w", "w2c"):
        raise BundleError(f"pose_convention must be 'c2w' or 'w2c', got {convention!r}")
    if len(frames) != n_frames:
        raise BundleError(f"manifest declares {n_frames} frames but lists {len(frames)}")
    encoding = manifest.get("motion_encoding", "probability")
    if encoding not in ("probability", "logit"):
        raise BundleError(f"motion_encoding must be 'probability' or 'logit', got {encoding!r}")

    images = np.empty((n_frames, height, width, 3), dtype=np.float64)
    poses, depths, motions, times = [], [], [], []
    for i, fr in enumerate(frames):
        for key in ("rgb", "depth", "motion"):
            p = root / fr[key]
            if not p.exists():
                raise BundleError(f"frame {i}: missing {key} file {p}")
        img = read_png(root / fr["rgb"])
        if img.shape != (height, width, 3):
            raise BundleError(
                f"frame {i}: {fr['rgb']} is {img.shape[1]}x{img.shape[0]}, expected {width}x{height}"
            )
        images[i] = img

        d = read_pfm(root / fr["depth"])
        if d.shape != (height, width):
            raise BundleError(f"frame {i}: {fr['depth']} shaped {d.shape}, expected {(height, width)}")
        finite = np.isfinite(d) & (d > 0)
        if not finite.all():
            warnings.warn(f"frame {i}: {(~finite).sum()} invalid depth pixels masked out", stacklevel=2)
        depths.append(DepthMap(d, valid=finite))

        m = read_pfm(root / fr["motion"])
        if encoding == "logit":
            m = 1.0 / (1.0 + np.exp(-m))
        if m.min() < 0.0 or m.max() > 1.0:
            raise BundleError(f"frame {i}: {fr['motion']} has probabilities outside [0, 1]")
        motions.append(MotionProbMap(m, i))

        pose_vals = np.asarray(fr["pose"], dtype=np.float64)
        if pose_vals.size != 16:
            raise BundleError(f"frame {i}: pose must have 16 entries, got {pose_vals.size}")
        pose = PoseSE3.from_matrix(pose_vals.reshape(4, 4))
        if convention == "w2c":
            pose = pose.inverse()
        poses.append(pose)
        times.append(float(fr.get("t", i / fps)))

    return CalibratedBundle(
        fps=fps,
        intrinsics=intr,
        poses=tuple(poses),
        images=images,
        depths=tuple(depths),
        motion=tuple(motions),
        timestamps=np.asarray(times),
    )
