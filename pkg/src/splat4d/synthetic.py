"""Analytic synthetic scenes: exact RGB, depth, poses, and motion maps.

Scenes are ray-cast closed forms (textured planes and spheres, flat shading),
so every channel the pipeline consumes downstream is exact: depth is the true
z-depth, masks are the true nearest-hit dynamic coverage, and the motion
probability maps are that coverage averaged over 8x8 blocks plus optional
noise. Camera paths are parametric orbits with a look-at constraint.

Textures are smooth (sinusoidal albedo) rather than hard checkers: overfit
quality then measures the optimizer, not edge ringing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import CalibratedBundle
from .geometry import DepthMap, Intrinsics, PoseSE3, project_points
from .motion import MotionProbMap

__all__ = ["SyntheticSceneSpec", "Plane", "Sphere", "generate_synthetic", "reference_spec", "load_spec"]


@dataclass(frozen=True)
class Plane:
    """Finite textured rectangle: point + normal + in-plane half extents."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    half_u: float
    half_v: float
    base_color: tuple[float, float, float]
    texture_amp: float = 0.25
    texture_freq: float = 2.0


@dataclass(frozen=True)
class Sphere:
    """Textured sphere; `velocity` (units/s) plus optional circular wobble."""

    center: tuple[float, float, float]
    radius: float
    base_color: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orbit_radius: float = 0.0
    orbit_hz: float = 0.0
    texture_amp: float = 0.2
    texture_freq: float = 3.0

    def center_at(self, t: float) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64) + np.asarray(self.velocity) * t
        if self.orbit_radius > 0:
            phase = 2 * np.pi * self.orbit_hz * t
            c = c + self.orbit_radius * np.array([np.cos(phase), 0.0, np.sin(phase)])
        return c

    @property
    def is_moving(self) -> bool:
        return any(v != 0 for v in self.velocity) or self.orbit_radius > 0


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int = 256
    height: int = 256
    fps: float = 30.0
    n_frames: int = 60
    fov_y_deg: float = 55.0
    # Orbit camera path: eye circles `target` at `cam_radius`, swept over
    # `arc_deg` across the clip, raised by `cam_lift` (world -y is up).
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cam_radius: float = 3.0
    cam_lift: float = 1.0
    arc_deg: float = 40.0
    planes: tuple[Plane, ...] = ()
    spheres: tuple[Sphere, ...] = ()
    depth_noise: float = 0.0
    motion_noise: float = 0.0

    def validate(self) -> None:
        if self.width % 8 or self.height % 8:
            raise ValueError("frame size must be a multiple of 8 for motion maps")
        if self.n_frames < 1 or self.fps <= 0:
            raise ValueError("need n_frames >= 1 and fps > 0")
        if not self.planes and not self.spheres:
            raise ValueError("scene has no geometry")
        if self.cam_radius <= 0:
            raise ValueError("degenerate camera path: radius must be positive")


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray | None = None) -> PoseSE3:
    """Camera-to-world pose looking from eye to target (+z forward, y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("degenerate camera path: eye coincides with target")
    fwd = fwd / n
    up = np.array([0.0, 1.0, 0.0]) if up is None else np.asarray(up, dtype=np.float64)
    right = np.cross(up, fwd)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        # Looking straight along the up axis: fall back to a fixed right.
        right = np.array([1.0, 0.0, 0.0])
        rn = 1.0
    right = right / rn
    down = np.cross(fwd, right)
    return PoseSE3(np.column_stack([right, down, fwd]), eye)


def _camera_pose(spec: SyntheticSceneSpec, t01: float) -> PoseSE3:
    phi = np.deg2rad((t01 - 0.5) * spec.arc_deg)
    target = np.asarray(spec.target, dtype=np.float64)
    eye = target + np.array(
        [spec.cam_radius * np.sin(phi), -spec.cam_lift, -spec.cam_radius * np.cos(phi)]
    )
    return look_at(eye, target)


def _texture(points: np.ndarray, base: tuple[float, float, float], amp: float, freq: float) -> np.ndarray:
    """Smooth per-channel albedo: base + amp * sin of three fixed plane waves."""
    k = np.array(
        [[1.0, 0.3, 0.7], [-0.5, 1.0, 0.4], [0.6, -0.8, 1.0]]
    )
    phases = np.array([0.0, 1.3, 2.6])
    waves = np.sin(freq * points @ k.T + phases)
    return np.clip(np.asarray(base) + amp * waves, 0.02, 0.98)


def _intersect_plane(origin: np.ndarray, dirs: np.ndarray, plane: Plane) -> np.ndarray:
    n = np.asarray(plane.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p0 = np.asarray(plane.point, dtype=np.float64)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((p0 - origin) @ n) / denom
    s = np.where(np.abs(denom) > 1e-12, s, np.inf)
    # In-plane bounds in an orthonormal frame of the rectangle.
    a = np.cross(n, [0.0, 0.0, 1.0] if abs(n[2]) < 0.9 else [1.0, 0.0, 0.0])
    a = a / np.linalg.norm(a)
    b = np.cross(n, a)
    hit = origin + s[..., None] * dirs
    local = hit - p0
    inside = (np.abs(local @ a) <= plane.half_u) & (np.abs(local @ b) <= plane.half_v)
    return np.where((s > 1e-6) & inside, s, np.inf)


def _intersect_sphere(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    a = np.einsum("...i,...i->...", dirs, dirs)
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        root = (-b - np.sqrt(disc)) / a
    return np.where((disc >= 0) & (root > 1e-6), root, np.inf)


def _render_frame(
    spec: SyntheticSceneSpec, pose: PoseSE3, K: Intrinsics, t: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact ray-cast of one frame: (rgb, z-depth, dynamic mask)."""
    h, w = K.height, K.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    # Rays with unit z in camera frame: the ray parameter equals z-depth.
    d_cam = np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)
    dirs = d_cam @ pose.rotation.T
    origin = pose.camera_center

    best = np.full((h, w), np.inf)
    rgb = np.zeros((h, w, 3))
    dynamic = np.zeros((h, w), dtype=bool)

    def shade(mask: np.ndarray, s: np.ndarray, base, amp, freq, moving: bool) -> None:
        nonlocal rgb, dynamic
        closer = mask & (s < best)
        if not closer.any():
            return
        pts = origin + s[closer, None] * dirs[closer]
        rgb[closer] = _texture(pts, base, amp, freq)
        best[closer] = s[closer]
        dynamic[closer] = moving

    for plane in spec.planes:
        s = _intersect_plane(origin, dirs, plane)
        shade(np.isfinite(s), s, plane.base_color, plane.texture_amp, plane.texture_freq, False)
    for sphere in spec.spheres:
        s = _intersect_sphere(origin, dirs, sphere.center_at(t), sphere.radius)
        shade(np.isfinite(s), s, sphere.base_color, sphere.texture_amp, sphere.texture_freq, sphere.is_moving)

    return rgb, best, dynamic


def generate_synthetic(
    spec: SyntheticSceneSpec, seed: int = 0
) -> tuple[CalibratedBundle, list[np.ndarray]]:
    """Build a bundle from a scene spec. Returns (bundle, exact dynamic masks).

    Deterministic per (spec, seed). Raises if a moving object stays inside the
    camera frustum for fewer than 80% of frames (degenerate trajectory) or the
    camera path is degenerate.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    K = Intrinsics.from_fov_y(spec.fov_y_deg, spec.width, spec.height)
    n = spec.n_frames
    times = np.arange(n) / spec.fps

    poses = [_camera_pose(spec, i / max(n - 1, 1)) for i in range(n)]

    movers = [s for s in spec.spheres if s.is_moving]
    for m in movers:
        visible = 0
        for pose, t in zip(poses, times):
            centers = m.center_at(float(t))[None, :]
            pix, _, ok = project_points(centers, pose, K)
            if ok[0] and 0 <= pix[0, 0] < spec.width and 0 <= pix[0, 1] < spec.height:
                visible += 1
        if visible < 0.8 * n:
            raise ValueError(
                f"moving sphere at {m.center} visible in only {visible}/{n} frames (< 80%)"
            )

    images = np.empty((n, spec.height, spec.width, 3))
    depths, motions, gt_masks = [], [], []
    h8, w8 = spec.height // 8, spec.width // 8
    for i, (pose, t) in enumerate(zip(poses, times)):
        rgb, depth, mask = _render_frame(spec, pose, K, float(t))
        if not np.isfinite(depth).all():
            raise ValueError(
                f"frame {i}: {(~np.isfinite(depth)).sum()} rays miss all geometry; "
                "the scene must cover the whole frustum"
            )
        if spec.depth_noise > 0:
            depth = depth * (1.0 + spec.depth_noise * rng.standard_normal(depth.shape))
            depth = np.maximum(depth, 1e-3)
        coverage = mask.reshape(h8, 8, w8, 8).mean(axis=(1, 3))
        if spec.motion_noise > 0:
            coverage = np.clip(coverage + spec.motion_noise * rng.standard_normal(coverage.shape), 0.0, 1.0)
        images[i] = rgb
        depths.append(DepthMap(depth))
        motions.append(MotionProbMap(coverage, i))
        gt_masks.append(mask)

    bundle = CalibratedBundle(
        fps=spec.fps,
        intrinsics=K,
        poses=tuple(poses),
        images=images,
        depths=tuple(depths),
        motion=tuple(motions),
        timestamps=times,
    )
    return bundle, gt_masks


def reference_spec(
    width: int = 256, height: int = 256, n_frames: int = 60, fps: float = 30.0
) -> SyntheticSceneSpec:
    """The reference room: three walls boxing the frustum plus one moving sphere.

    Sized so the orbiting camera always sees geometry (no ray escapes) and the
    sphere stays visible, mid-frame, and unoccluded for the whole clip.
    """
    duration = n_frames / fps
    return SyntheticSceneSpec(
        width=width,
        height=height,
        fps=fps,
        n_frames=n_frames,
        fov_y_deg=55.0,
        target=(0.0, 0.0, 0.0),
        cam_radius=3.2,
        cam_lift=0.9,
        arc_deg=36.0,
        planes=(
            # Floor (world +y is image-down, so the floor sits at +y).
            Plane(point=(0, 1.4, 0), normal=(0, 1, 0), half_u=14.0, half_v=14.0,
                  base_color=(0.45, 0.40, 0.35), texture_amp=0.22, texture_freq=1.6),
            # Back wall behind the scene.
            Plane(point=(0, 0, 3.0), normal=(0, 0, 1), half_u=14.0, half_v=14.0,
                  base_color=(0.35, 0.45, 0.55), texture_amp=0.20, texture_freq=1.3),
            # Ceiling, so upward rays also terminate.
            Plane(point=(0, -2.6, 0), normal=(0, 1, 0), half_u=16.0, half_v=16.0,
                  base_color=(0.50, 0.48, 0.42), texture_amp=0.15, texture_freq=1.1),
        ),
        spheres=(
            Sphere(center=(-0.9, 0.55, 1.1), radius=0.55,
                   base_color=(0.55, 0.35, 0.30), texture_amp=0.18, texture_freq=2.2),
            Sphere(center=(1.0, 0.9, 1.5), radius=0.45,
                   base_color=(0.30, 0.50, 0.35), texture_amp=0.18, texture_freq=2.0),
            # The mover: drifts sideways about 2.4 world units over the clip.
            Sphere(center=(-0.6, -0.35, 0.6), radius=0.38,
                   base_color=(0.75, 0.65, 0.25), texture_amp=0.12, texture_freq=2.4,
                   velocity=(1.2 / duration, 0.25 / duration, 0.0)),
        ),
    )


def load_spec(path: str | Path) -> SyntheticSceneSpec:
    """Read a scene spec from JSON (see docs/formats.md for the schema)."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed scene spec {path}: {e}") from None
    planes = tuple(Plane(**{**p, "point": tuple(p["point"]), "normal": tuple(p["normal"]),
                            "base_color": tuple(p["base_color"])}) for p in raw.pop("planes", []))
    spheres = tuple(
        Sphere(**{**s, "center": tuple(s["center"]), "base_color": tuple(s["base_color"]),
                  "velocity": tuple(s.get("velocity", (0.0, 0.0, 0.0)))})
        for s in raw.pop("spheres", [])
    )
    for key in ("target",):
        if key in raw:
            raw[key] = tuple(raw[key])
    return SyntheticSceneSpec(planes=planes, spheres=spheres, **raw)
