"""Camera models, rigid transforms, and projection primitives.

Conventions: right-handed camera frame with +z forward, image origin at the
top-left corner, y down. Poses are stored camera-to-world; world-to-camera is
derived on demand. Intrinsics are zero-skew pinhole (fx, fy, cx, cy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Intrinsics",
    "PoseSE3",
    "DepthMap",
    "project",
    "back_project",
    "project_points",
    "back_project_grid",
]

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )

    @classmethod
    def from_fov_y(cls, fov_y_deg: float, width: int, height: int) -> "Intrinsics":
        """Square-pixel intrinsics with a centered principal point."""
        if not (0.0 < fov_y_deg < 180.0):
            raise ValueError(f"fov_y must be in (0, 180) degrees, got {fov_y_deg}")
        f = (height / 2.0) / np.tan(np.deg2rad(fov_y_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same camera at a different raster resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            fx=self.fx * sx, fy=self.fy * sy, cx=self.cx * sx, cy=self.cy * sy,
            width=width, height=height,
        )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid camera pose, stored camera-to-world."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) camera center in world units

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R @ R.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal within 1e-6")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation has negative determinant (reflection)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("pose matrix last row must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "PoseSE3":
        R = self.rotation.T
        return PoseSE3(R, -R @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply `other` first, then `self`."""
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @property
    def camera_center(self) -> np.ndarray:
        return self.translation

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """(R_wc, t_wc) such that x_cam = R_wc @ x_world + t_wc."""
        R = self.rotation.T
        return R, -R @ self.translation

    def transform_to_world(self, pts_cam: np.ndarray) -> np.ndarray:
        pts_cam = np.asarray(pts_cam, dtype=np.float64)
        return pts_cam @ self.rotation.T + self.translation

    def transform_to_camera(self, pts_world: np.ndarray) -> np.ndarray:
        R, t = self.world_to_camera()
        return np.asarray(pts_world, dtype=np.float64) @ R.T + t


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depths in world units with a validity mask."""

    values: np.ndarray  # (H, W) float
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2D, got shape {v.shape}")
        valid = self.valid
        if valid is None:
            valid = np.isfinite(v) & (v > 0)
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != v.shape:
                raise ValueError("valid mask shape must match depth values")
            bad = valid & ~(np.isfinite(v) & (v > 0))
            if bad.any():
                raise ValueError("valid mask marks non-finite or non-positive depths")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


def project(point_world: np.ndarray, pose: PoseSE3, K: Intrinsics) -> tuple[np.ndarray, float]:
    """Project one world point. Returns (pixel, depth_cam); depth <= 0 raises."""
    p = pose.transform_to_camera(np.asarray(point_world, dtype=np.float64).reshape(3))
    z = float(p[2])
    if z <= 0:
        raise ValueError(f"point is behind the camera (depth {z:g})")
    pixel = np.array([K.fx * p[0] / z + K.cx, K.fy * p[1] / z + K.cy])
    return pixel, z


def back_project(pixel: np.ndarray, depth: float, pose: PoseSE3, K: Intrinsics) -> np.ndarray:
    """Lift one pixel at the given depth into world coordinates."""
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    cam = np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])
    return pose.transform_to_world(cam)


def project_points(points_world: np.ndarray, pose: PoseSE3, K: Intrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns (pixels (N, 2), depths (N,), in_front (N,) bool). Pixels for points
    at or behind the camera are NaN.
    """
    cam = pose.transform_to_camera(np.asarray(points_world, dtype=np.float64))
    z = cam[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
    pixels = np.stack([u, v], axis=1)
    pixels[~in_front] = np.nan
    return pixels, z, in_front


def back_project_grid(depth: DepthMap, pose: PoseSE3, K: Intrinsics, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Lift every valid pixel of a depth map into world space.

    Returns (points (N, 3), flat pixel indices (N,) into the strided grid's
    parent image, row-major). Pixel centers are at integer coordinates.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    h, w = depth.shape
    vs, us = np.mgrid[0:h:stride, 0:w:stride]
    d = depth.values[::stride, ::stride]
    ok = depth.valid[::stride, ::stride]
    us, vs, d = us[ok], vs[ok], d[ok]
    x = (us - K.cx) * d / K.fx
    y = (vs - K.cy) * d / K.fy
    cam = np.stack([x, y, d], axis=1)
    return pose.transform_to_world(cam), (vs * w + us).astype(np.int64)
