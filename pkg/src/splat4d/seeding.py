"""Dense back-projection and scale-adaptive voxel-grid pruning into seeds.

Every valid-depth pixel of every frame lifts to a colored 4D point. The voxel
edge follows the scene's own scale: S_v = λ · mean over frames of (mean depth
/ focal length), the average metric footprint of one pixel, so λ counts
"pixels per voxel". Static points share one global grid; dynamic points are
pruned per source frame, since merging a mover's trail across frames would
average its motion away.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .bundle import CalibratedBundle
from .geometry import back_project_grid
from .model import GaussianModel4D, inverse_sigmoid
from .motion import MotionMask, upsample_prob

__all__ = [
    "SeedCloud",
    "compute_voxel_size",
    "densify_cloud",
    "grid_prune",
    "initialize_model",
    "init_from_bundle",
    "InitSummary",
    "LAMBDA_LITE",
    "LAMBDA_FULL_STATIC",
    "INITIAL_OPACITY",
    "MIN_SUPPORT_DEFAULT",
]

LAMBDA_LITE = 4.0  # voxel factor for both regions in lite mode
LAMBDA_FULL_STATIC = 1.0  # full mode: finer static grid, dynamic unpruned
INITIAL_OPACITY = 0.1
MIN_SUPPORT_DEFAULT = 2

_COORD_BITS = 20
_COORD_OFFSET = 1 << (_COORD_BITS - 1)


@dataclass(frozen=True)
class SeedCloud:
    """Structure-of-arrays colored 4D point set."""

    positions: np.ndarray  # (N, 3) world units
    colors: np.ndarray  # (N, 3) in [0, 1]
    timestamps: np.ndarray  # (N,) seconds
    motion_prob: np.ndarray  # (N,) in [0, 1]
    is_dynamic: np.ndarray  # (N,) bool
    temporal_scale: np.ndarray  # (N,) seconds
    source_depth: np.ndarray  # (N,) camera depth at back-projection time
    frame_index: np.ndarray  # (N,) source frame, -1 after cross-frame merging

    def __post_init__(self) -> None:
        n = len(self.positions)
        for name in ("colors", "timestamps", "motion_prob", "is_dynamic", "temporal_scale", "source_depth", "frame_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")

    def __len__(self) -> int:
        return len(self.positions)

    def take(self, mask_or_idx: np.ndarray) -> "SeedCloud":
        return SeedCloud(
            self.positions[mask_or_idx],
            self.colors[mask_or_idx],
            self.timestamps[mask_or_idx],
            self.motion_prob[mask_or_idx],
            self.is_dynamic[mask_or_idx],
            self.temporal_scale[mask_or_idx],
            self.source_depth[mask_or_idx],
            self.frame_index[mask_or_idx],
        )

    @staticmethod
    def concatenate(clouds: list["SeedCloud"]) -> "SeedCloud":
        if not clouds:
            return _empty_cloud()
        return SeedCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.timestamps for c in clouds]),
            np.concatenate([c.motion_prob for c in clouds]),
            np.concatenate([c.is_dynamic for c in clouds]),
            np.concatenate([c.temporal_scale for c in clouds]),
            np.concatenate([c.source_depth for c in clouds]),
            np.concatenate([c.frame_index for c in clouds]),
        )


def _empty_cloud() -> SeedCloud:
    return SeedCloud(
        np.empty((0, 3)), np.empty((0, 3)), np.empty(0), np.empty(0),
        np.empty(0, bool), np.empty(0), np.empty(0), np.empty(0, np.int64),
    )


def compute_voxel_size(mean_depths: np.ndarray, f_hat: float, lam: float) -> float:
    """S_v = λ · mean(D̄_i / f̂): λ times the mean per-pixel metric footprint."""
    d = np.asarray(mean_depths, dtype=np.float64)
    if d.size == 0:
        raise ValueError("need at least one frame's mean depth")
    if not ((d > 0).all() and f_hat > 0 and lam > 0):
        raise ValueError("mean depths, focal length, and lambda must all be positive")
    return float(lam * np.mean(d / f_hat))


def densify_cloud(
    bundle: CalibratedBundle, masks: list[MotionMask], stride: int = 1
) -> SeedCloud:
    """One seed per valid-depth pixel of every frame (optionally strided).

    Dynamic pixels (per mask) get temporal_scale 2/fps; static pixels get the
    video length, so statics persist across the whole clip.
    """
    if len(masks) != bundle.n_frames:
        raise ValueError(f"got {len(masks)} masks for {bundle.n_frames} frames")
    h, w = bundle.size
    s_t_dynamic = 2.0 / bundle.fps
    s_t_static = bundle.video_length
    parts = []
    for i in range(bundle.n_frames):
        depth = bundle.depths[i]
        if depth is None:
            warnings.warn(f"frame {i} has no depth map; skipped", stacklevel=2)
            continue
        pts, flat = back_project_grid(depth, bundle.poses[i], bundle.intrinsics, stride=stride)
        rows, cols = flat // w, flat % w
        dyn = masks[i].values[rows, cols]
        prob = upsample_prob(bundle.motion[i], (h, w))[rows, cols]
        parts.append(
            SeedCloud(
                positions=pts,
                colors=bundle.images[i][rows, cols],
                timestamps=np.full(len(pts), bundle.timestamps[i]),
                motion_prob=prob,
                is_dynamic=dyn,
                temporal_scale=np.where(dyn, s_t_dynamic, s_t_static),
                source_depth=depth.values[rows, cols],
                frame_index=np.full(len(pts), i, dtype=np.int64),
            )
        )
    return SeedCloud.concatenate(parts)


def _voxel_keys(positions: np.ndarray, edge: float, depths: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Packed int64 voxel keys; returns (keys, per-point effective edge).

    When source depths are given (adaptive mode), the voxel widens for far
    points: the multiplier max(1, depth/median_depth) is quantized to the
    next power of two and the level is packed into the key so coarser grids
    nest and different levels never collide.
    """
    if depths is not None:
        med = float(np.median(depths))
        mult = np.maximum(depths / max(med, 1e-12), 1.0)
        level = np.clip(np.ceil(np.log2(mult)).astype(np.int64), 0, 15)
    else:
        level = np.zeros(len(positions), dtype=np.int64)
    eff_edge = edge * (2.0**level)
    coords = np.floor(positions / eff_edge[:, None]).astype(np.int64)
    shifted = coords + _COORD_OFFSET
    if shifted.min() < 0 or shifted.max() >= (1 << _COORD_BITS):
        raise ValueError(
            f"voxel coordinates exceed the {_COORD_BITS}-bit packing range; "
            "scene extent is too large for this voxel size"
        )
    keys = (level << 60) | (shifted[:, 0] << 40) | (shifted[:, 1] << 20) | shifted[:, 2]
    return keys, eff_edge


def grid_prune(
    cloud: SeedCloud,
    voxel_size: float,
    min_support: int = MIN_SUPPORT_DEFAULT,
    adaptive: bool = False,
    per_frame: bool = False,
) -> SeedCloud:
    """Replace each occupied voxel by its attribute-averaged centroid.

    Voxels holding fewer than `min_support` points are discarded as outliers.
    is_dynamic resolves by majority vote, ties toward dynamic. `per_frame`
    keys voxels by source frame as well, so points from different frames
    never merge (used for dynamic regions).
    """
    if voxel_size <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    if min_support < 1:
        raise ValueError(f"min_support must be >= 1, got {min_support}")
    if len(cloud) == 0:
        return cloud
    if per_frame:
        frames = np.unique(cloud.frame_index)
        return SeedCloud.concatenate(
            [
                _prune_one_grid(cloud.take(cloud.frame_index == f), voxel_size, min_support, adaptive)
                for f in frames
            ]
        )
    out = _prune_one_grid(cloud, voxel_size, min_support, adaptive)
    return replace(out, frame_index=np.full(len(out), -1, dtype=np.int64))


def _prune_one_grid(cloud: SeedCloud, voxel_size: float, min_support: int, adaptive: bool) -> SeedCloud:
    keys, _ = _voxel_keys(cloud.positions, voxel_size, cloud.source_depth if adaptive else None)
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)

    def avg(values: np.ndarray) -> np.ndarray:
        if values.ndim == 1:
            return np.bincount(inv, weights=values, minlength=len(uniq)) / counts
        return np.stack(
            [np.bincount(inv, weights=values[:, j], minlength=len(uniq)) for j in range(values.shape[1])],
            axis=1,
        ) / counts[:, None]

    votes = np.bincount(inv, weights=cloud.is_dynamic.astype(np.float64), minlength=len(uniq))
    keep = counts >= min_support
    frame = avg(cloud.frame_index.astype(np.float64))
    merged = SeedCloud(
        positions=avg(cloud.positions)[keep],
        colors=avg(cloud.colors)[keep],
        timestamps=avg(cloud.timestamps)[keep],
        motion_prob=avg(cloud.motion_prob)[keep],
        is_dynamic=(2 * votes >= counts)[keep],  # ties -> dynamic
        temporal_scale=avg(cloud.temporal_scale)[keep],
        source_depth=avg(cloud.source_depth)[keep],
        frame_index=np.round(frame[keep]).astype(np.int64),
    )
    return merged


def initialize_model(
    static_seeds: SeedCloud,
    dynamic_seeds: SeedCloud,
    voxel_size: float,
    fps: float,
    video_length: float,
    mode: str = "lite",
) -> GaussianModel4D:
    """Seeds to Gaussians: μ = (position, timestamp), s_t from the seed,
    s_xyz from the 3rd-nearest-neighbor distance clamped to [S_v/2, 4 S_v],
    opacity 0.1, RGB passed through.
    """
    seeds = SeedCloud.concatenate([static_seeds, dynamic_seeds])
    n = len(seeds)
    if n == 0:
        raise ValueError("cannot initialize a model from an empty seed set")

    if n >= 4:
        tree = cKDTree(seeds.positions)
        dist, _ = tree.query(seeds.positions, k=4)
        s_xyz = dist[:, 3]
    else:
        s_xyz = np.full(n, voxel_size)
    s_xyz = np.clip(s_xyz, 0.5 * voxel_size, 4.0 * voxel_size)
    s_xyz = np.maximum(s_xyz, 1e-9)

    return GaussianModel4D(
        mu=np.column_stack([seeds.positions, seeds.timestamps]),
        log_s_xyz=np.log(s_xyz),
        log_s_t=np.log(np.maximum(seeds.temporal_scale, 1e-9)),
        opacity_logit=np.full(n, float(inverse_sigmoid(np.array(INITIAL_OPACITY)))),
        rgb=np.clip(seeds.colors, 0.0, 1.0),
        is_dynamic=seeds.is_dynamic.copy(),
        video_length=video_length,
        fps=fps,
        mode=mode,
    )


@dataclass(frozen=True)
class InitSummary:
    """Point counts through the initialization pipeline, for reporting."""

    static_before: int
    static_after: int
    dynamic_before: int
    dynamic_after: int
    voxel_size_static: float
    voxel_size_dynamic: float
    # Wall-clock seconds per pipeline stage, filled by init_from_bundle.
    timings: dict[str, float] = field(default_factory=dict)
    # Pruned seeds (static then dynamic), kept only on request for debug
    # exports; not serialized with the summary.
    pruned_cloud: "SeedCloud | None" = None

    @property
    def static_reduction(self) -> float:
        return 1.0 - self.static_after / max(self.static_before, 1)

    @property
    def total_reduction(self) -> float:
        before = self.static_before + self.dynamic_before
        after = self.static_after + self.dynamic_after
        return 1.0 - after / max(before, 1)


def init_from_bundle(
    bundle: CalibratedBundle,
    masks: list[MotionMask],
    mode: str = "lite",
    stride: int = 1,
    min_support: int = MIN_SUPPORT_DEFAULT,
    adaptive: bool = False,
    keep_clouds: bool = False,
) -> tuple[GaussianModel4D, InitSummary]:
    """Full initialization: densify → split by mask → prune → Gaussians.

    Lite prunes both regions at λ = 4; full prunes statics at λ = 1 and keeps
    every dynamic seed. With keep_clouds the summary also carries the pruned
    seed cloud for debug export.
    """
    if mode not in ("lite", "full"):
        raise ValueError(f"mode must be 'lite' or 'full', got {mode!r}")
    t0 = time.perf_counter()
    cloud = densify_cloud(bundle, masks, stride=stride)
    t_densify = time.perf_counter() - t0
    if len(cloud) == 0:
        raise ValueError("bundle produced no seed points (no valid depths?)")
    mean_depths = [d.values[d.valid].mean() for d in bundle.depths if d is not None]
    f_hat = 0.5 * (bundle.intrinsics.fx + bundle.intrinsics.fy)

    lam_s = LAMBDA_LITE if mode == "lite" else LAMBDA_FULL_STATIC
    sv_static = compute_voxel_size(mean_depths, f_hat, lam_s)
    sv_dynamic = compute_voxel_size(mean_depths, f_hat, LAMBDA_LITE)

    t0 = time.perf_counter()
    static = cloud.take(~cloud.is_dynamic)
    dynamic = cloud.take(cloud.is_dynamic)
    static_pruned = grid_prune(static, sv_static, min_support, adaptive)
    if mode == "lite":
        dynamic_pruned = grid_prune(dynamic, sv_dynamic, min_support, adaptive, per_frame=True)
    else:
        dynamic_pruned = dynamic
    t_prune = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = initialize_model(
        static_pruned, dynamic_pruned, sv_static, bundle.fps, bundle.video_length, mode
    )
    t_model = time.perf_counter() - t0
    summary = InitSummary(
        static_before=len(static),
        static_after=len(static_pruned),
        dynamic_before=len(dynamic),
        dynamic_after=len(dynamic_pruned),
        voxel_size_static=sv_static,
        voxel_size_dynamic=sv_dynamic,
        timings={
            "init.densify": t_densify,
            "init.grid_prune": t_prune,
            "init.model": t_model,
        },
        pruned_cloud=(
            SeedCloud.concatenate([static_pruned, dynamic_pruned]) if keep_clouds else None
        ),
    )
    return model, summary
