"""Tiled, differentiable compositor for motion-aware isotropic 4D Gaussians.

The host side conditions each Gaussian on the requested timestamp (for an
isotropic model the spatial slice is time-invariant; time acts through a
per-splat opacity factor), projects the surviving splats with a local
affine approximation of the pinhole camera, sorts (tile, splat) entries
front to back with a single stable key sort, and hands flat arrays to the
compiled kernels. Everything runs in float64; determinism is by
construction (tile-private writes, fixed-order reductions), not by luck.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._threads import get_threads
from .geometry import Intrinsics, PoseSE3
from .model import DEFAULT_CULL_EPSILON, GaussianModel4D

TILE = _kernels.TILE
NEAR_CLIP = 0.2
COV2D_BLUR = 0.3  # pixel-space low-pass added to both eigenvalues
RADIUS_SIGMAS = 3.0
_TINY_OPACITY = 1e-300


@dataclass
class FrameImage:
    """A rendered frame: color, coverage, and expected depth per pixel."""

    rgb: np.ndarray  # (H, W, 3) float64 in [0, 1]
    alpha: np.ndarray  # (H, W) float64 in [0, 1]
    depth: np.ndarray  # (H, W) alpha-normalized expected depth, 0 where empty
    meta: dict = field(default_factory=dict)


@dataclass
class ParamGrads:
    """Loss gradients for every parameter lane, aligned with the model rows."""

    mu: np.ndarray  # (N, 4)
    log_s_xyz: np.ndarray  # (N,)
    log_s_t: np.ndarray  # (N,)
    opacity_logit: np.ndarray  # (N,)
    rgb: np.ndarray  # (N, 3)

    @staticmethod
    def zeros(n: int) -> "ParamGrads":
        return ParamGrads(
            np.zeros((n, 4)), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros((n, 3))
        )


@dataclass
class SplatProjection:
    """Per-visible-splat screen-space quantities (rows of `idx` in the model)."""

    idx: np.ndarray  # (V,) model rows that survived culling
    t_cam: np.ndarray  # (V, 3) camera-frame centers
    mean2d: np.ndarray  # (V, 2) pixel coordinates
    cov2d: np.ndarray  # (V, 3) packed (A, B, C)
    conic: np.ndarray  # (V, 3) packed inverse covariance (a, b, c)
    radius: np.ndarray  # (V,) integer pixel radius
    opacity_eff: np.ndarray  # (V,) opacity * temporal factor
    g_t: np.ndarray  # (V,) temporal factor alone
    rgb: np.ndarray  # (V, 3) clamped colors
    ratio_x: np.ndarray  # (V,) unclamped tx/tz
    ratio_y: np.ndarray  # (V,)
    inside_x: np.ndarray  # (V,) bool, frustum-ratio clamp inactive
    inside_y: np.ndarray  # (V,) bool


@dataclass
class RenderContext:
    """Everything the backward pass needs to replay a forward render."""

    model: GaussianModel4D
    pose: PoseSE3
    intrinsics: Intrinsics
    t: float
    proj: SplatProjection
    entry_splat: np.ndarray  # (E,) indices into the projection arrays
    tile_starts: np.ndarray
    tile_ends: np.ndarray
    e_mean2d: np.ndarray
    e_conic: np.ndarray
    e_opac: np.ndarray
    e_pthr: np.ndarray
    e_rgb: np.ndarray
    final_T: np.ndarray
    n_contrib: np.ndarray


def _rotate_rows(rows: np.ndarray, R: np.ndarray) -> np.ndarray:
    """rows @ R.T expanded elementwise (fixed-order sums, no BLAS dispatch)."""
    x, y, z = rows[:, 0], rows[:, 1], rows[:, 2]
    return np.stack(
        [
            R[0, 0] * x + R[0, 1] * y + R[0, 2] * z,
            R[1, 0] * x + R[1, 1] * y + R[1, 2] * z,
            R[2, 0] * x + R[2, 1] * y + R[2, 2] * z,
        ],
        axis=1,
    )


def project_splats(
    model: GaussianModel4D,
    pose: PoseSE3,
    intrinsics: Intrinsics,
    t: float,
    cull_epsilon: float = DEFAULT_CULL_EPSILON,
) -> SplatProjection:
    """Cull, condition on `t`, and project every surviving splat.

    Culling keeps splats whose temporally modulated opacity is at least
    `cull_epsilon`; the compositor independently skips any per-pixel
    contribution below 1/255, so culling at the default epsilon of 1/255
    cannot change rendered pixels.
    """
    if cull_epsilon < 0:
        raise ValueError("cull_epsilon must be >= 0")
    dt_off = t - model.mu[:, 3]
    g_all = np.exp(-0.5 * (dt_off / model.s_t) ** 2)
    o_all = model.opacity
    o_t = o_all * g_all
    keep = o_t >= cull_epsilon if cull_epsilon > 0 else np.ones(model.n, bool)

    R_wc, t_wc = pose.world_to_camera()
    mean3 = model.mu[:, :3]
    t_cam_all = _rotate_rows(mean3, R_wc) + t_wc
    keep &= t_cam_all[:, 2] > NEAR_CLIP
    idx = np.flatnonzero(keep)

    t_cam = t_cam_all[idx]
    tz = t_cam[:, 2]
    fx, fy = intrinsics.fx, intrinsics.fy
    ratio_x = t_cam[:, 0] / tz
    ratio_y = t_cam[:, 1] / tz
    mean2d = np.stack(
        [fx * ratio_x + intrinsics.cx, fy * ratio_y + intrinsics.cy], axis=1
    )

    lim_x = 1.3 * (0.5 * intrinsics.width / fx)
    lim_y = 1.3 * (0.5 * intrinsics.height / fy)
    cx_r = np.clip(ratio_x, -lim_x, lim_x)
    cy_r = np.clip(ratio_y, -lim_y, lim_y)
    inside_x = np.abs(ratio_x) <= lim_x
    inside_y = np.abs(ratio_y) <= lim_y

    # Local affine jacobian of the pinhole map, with the frustum-clamped
    # ratios; an isotropic world covariance s^2*I slices straight through
    # the camera rotation, so cov2d = s^2 * (J @ J.T) + blur*I.
    s = np.exp(model.log_s_xyz[idx])
    ja = fx / tz
    jb = fy / tz
    je = -fx * cx_r / tz
    jf = -fy * cy_r / tz
    s2 = s * s
    cov_a = s2 * (ja * ja + je * je) + COV2D_BLUR
    cov_b = s2 * (je * jf)
    cov_c = s2 * (jb * jb + jf * jf) + COV2D_BLUR
    det = cov_a * cov_c - cov_b * cov_b
    conic = np.stack([cov_c / det, -cov_b / det, cov_a / det], axis=1)

    mid = 0.5 * (cov_a + cov_c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(RADIUS_SIGMAS * np.sqrt(lam_max)).astype(np.int64)

    return SplatProjection(
        idx=idx,
        t_cam=t_cam,
        mean2d=mean2d,
        cov2d=np.stack([cov_a, cov_b, cov_c], axis=1),
        conic=conic,
        radius=radius,
        opacity_eff=o_t[idx],
        g_t=g_all[idx],
        rgb=np.clip(model.rgb[idx], 0.0, 1.0),
        ratio_x=ratio_x,
        ratio_y=ratio_y,
        inside_x=inside_x,
        inside_y=inside_y,
    )


def _build_entries(
    proj: SplatProjection, width: int, height: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Sorted (tile, splat) entries plus per-tile ranges."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y

    mx, my = proj.mean2d[:, 0], proj.mean2d[:, 1]
    r = proj.radius
    x0 = np.clip(np.floor((mx - r) / TILE).astype(np.int64), 0, tiles_x)
    x1 = np.clip(np.floor((mx + r) / TILE).astype(np.int64) + 1, 0, tiles_x)
    y0 = np.clip(np.floor((my - r) / TILE).astype(np.int64), 0, tiles_y)
    y1 = np.clip(np.floor((my + r) / TILE).astype(np.int64) + 1, 0, tiles_y)
    counts = np.maximum(x1 - x0, 0) * np.maximum(y1 - y0, 0)

    offsets = np.zeros(len(counts) + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    keys = np.empty(total, np.int64)
    entry_splat = np.empty(total, np.int64)
    if total:
        depth_bits = (
            proj.t_cam[:, 2].astype(np.float32).view(np.uint32).astype(np.int64)
        )
        _kernels.expand_entries(
            x0, y0, x1, y1, offsets[:-1], tiles_x, depth_bits, keys, entry_splat
        )
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        entry_splat = entry_splat[order]
    tile_ids = keys >> 32
    grid = np.arange(n_tiles, dtype=np.int64)
    tile_starts = np.searchsorted(tile_ids, grid, side="left")
    tile_ends = np.searchsorted(tile_ids, grid, side="right")
    return entry_splat, tile_starts, tile_ends, tiles_x, n_tiles


def _composite(
    proj: SplatProjection, intrinsics: Intrinsics
) -> tuple[FrameImage, dict]:
    width, height = intrinsics.width, intrinsics.height
    entry_splat, tile_starts, tile_ends, tiles_x, _ = _build_entries(
        proj, width, height
    )

    e_mean2d = np.ascontiguousarray(proj.mean2d[entry_splat])
    e_conic = np.ascontiguousarray(proj.conic[entry_splat])
    e_opac = np.ascontiguousarray(proj.opacity_eff[entry_splat])
    e_pthr = -np.log(255.0 * np.maximum(e_opac, _TINY_OPACITY))
    e_rgb = np.ascontiguousarray(proj.rgb[entry_splat])
    e_z = np.ascontiguousarray(proj.t_cam[entry_splat, 2])

    out_rgb = np.zeros((height, width, 3))
    out_alpha = np.zeros((height, width))
    out_zacc = np.zeros((height, width))
    out_T = np.ones((height, width))
    out_nc = np.zeros((height, width), np.int32)
    if len(entry_splat):
        _kernels.composite_forward(
            tile_starts, tile_ends,
            e_mean2d, e_conic, e_opac, e_pthr, e_rgb, e_z,
            width, height, tiles_x,
            out_rgb, out_alpha, out_zacc, out_T, out_nc,
        )
    depth = np.where(out_alpha > 1e-12, out_zacc / np.maximum(out_alpha, 1e-12), 0.0)
    frame = FrameImage(rgb=out_rgb, alpha=out_alpha, depth=depth)
    pieces = {
        "entry_splat": entry_splat,
        "tile_starts": tile_starts,
        "tile_ends": tile_ends,
        "e_mean2d": e_mean2d,
        "e_conic": e_conic,
        "e_opac": e_opac,
        "e_pthr": e_pthr,
        "e_rgb": e_rgb,
        "final_T": out_T,
        "n_contrib": out_nc,
    }
    return frame, pieces


def render(
    model: GaussianModel4D,
    pose: PoseSE3,
    intrinsics: Intrinsics,
    t: float,
    cull_epsilon: float = DEFAULT_CULL_EPSILON,
) -> FrameImage:
    """Render the scene at timestamp `t` from the given camera."""
    start = time.perf_counter()
    proj = project_splats(model, pose, intrinsics, t, cull_epsilon)
    frame, pieces = _composite(proj, intrinsics)
    frame.meta = {
        "render_ms": (time.perf_counter() - start) * 1e3,
        "survivor_count": int(len(proj.idx)),
        "n_entries": int(len(pieces["entry_splat"])),
        "t": float(t),
        "threads": get_threads(),
        "width": intrinsics.width,
        "height": intrinsics.height,
    }
    return frame


def render_training(
    model: GaussianModel4D,
    pose: PoseSE3,
    intrinsics: Intrinsics,
    t: float,
    cull_epsilon: float = DEFAULT_CULL_EPSILON,
) -> tuple[FrameImage, RenderContext]:
    """Render and keep everything the backward pass needs."""
    start = time.perf_counter()
    proj = project_splats(model, pose, intrinsics, t, cull_epsilon)
    frame, pieces = _composite(proj, intrinsics)
    frame.meta = {
        "render_ms": (time.perf_counter() - start) * 1e3,
        "survivor_count": int(len(proj.idx)),
        "n_entries": int(len(pieces["entry_splat"])),
        "t": float(t),
        "threads": get_threads(),
        "width": intrinsics.width,
        "height": intrinsics.height,
    }
    ctx = RenderContext(
        model=model,
        pose=pose,
        intrinsics=intrinsics,
        t=float(t),
        proj=proj,
        **pieces,
    )
    return frame, ctx


def render_backward(
    ctx: RenderContext,
    dL_drgb: np.ndarray,
    train_temporal: bool = False,
) -> ParamGrads:
    """Backpropagate image-space gradients to every parameter lane.

    Temporal parameters (time center and temporal scale) receive gradients
    only when `train_temporal` is set; by default they stay frozen at their
    initialization values.
    """
    model = ctx.model
    grads = ParamGrads.zeros(model.n)
    proj = ctx.proj
    V = len(proj.idx)
    dL_drgb = np.ascontiguousarray(dL_drgb, dtype=np.float64)
    if dL_drgb.shape != (ctx.intrinsics.height, ctx.intrinsics.width, 3):
        raise ValueError("dL_drgb must match the rendered image shape")
    if V == 0 or len(ctx.entry_splat) == 0:
        return grads

    entry_grads = np.zeros((len(ctx.entry_splat), 9))
    _kernels.composite_backward(
        ctx.tile_starts, ctx.tile_ends,
        ctx.e_mean2d, ctx.e_conic, ctx.e_opac, ctx.e_pthr, ctx.e_rgb,
        ctx.intrinsics.width, ctx.intrinsics.height,
        (ctx.intrinsics.width + TILE - 1) // TILE,
        dL_drgb, ctx.final_T, ctx.n_contrib,
        entry_grads,
    )

    # Merge per-entry rows back to per-splat sums; np.bincount accumulates
    # in entry order on the host thread, so the merge is deterministic.
    per = np.empty((V, 9))
    for k in range(9):
        per[:, k] = np.bincount(
            ctx.entry_splat, weights=entry_grads[:, k], minlength=V
        )
    g_mx, g_my = per[:, 0], per[:, 1]
    g_ca, g_cb, g_cc = per[:, 2], per[:, 3], per[:, 4]
    g_oeff = per[:, 5]
    g_rgb = per[:, 6:9]

    K = ctx.intrinsics
    fx, fy = K.fx, K.fy
    tz = proj.t_cam[:, 2]
    s = np.exp(model.log_s_xyz[proj.idx])
    s2 = s * s

    # conic -> cov2d: for M = inv(C), dL/dC = -M G M with G the symmetric
    # full-matrix gradient assembled from the packed (a, b, c) sums.
    a_, b_, c_ = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    gb_half = 0.5 * g_cb
    h00 = g_ca * a_ + gb_half * b_
    h01 = g_ca * b_ + gb_half * c_
    h10 = gb_half * a_ + g_cc * b_
    h11 = gb_half * b_ + g_cc * c_
    p00 = a_ * h00 + b_ * h10
    p01 = a_ * h01 + b_ * h11
    p11 = b_ * h01 + c_ * h11
    dA = -p00
    dB = -2.0 * p01
    dC = -p11

    # cov2d -> (scale, camera-frame center) through the jacobian entries.
    cx_r = np.clip(proj.ratio_x, -1.3 * (0.5 * K.width / fx), 1.3 * (0.5 * K.width / fx))
    cy_r = np.clip(proj.ratio_y, -1.3 * (0.5 * K.height / fy), 1.3 * (0.5 * K.height / fy))
    ja = fx / tz
    jb = fy / tz
    je = -fx * cx_r / tz
    jf = -fy * cy_r / tz

    ds2 = dA * (ja * ja + je * je) + dB * (je * jf) + dC * (jb * jb + jf * jf)
    grads_log_s = ds2 * 2.0 * s2

    d_ja = dA * s2 * 2.0 * ja
    d_jb = dC * s2 * 2.0 * jb
    d_je = dA * s2 * 2.0 * je + dB * s2 * jf
    d_jf = dC * s2 * 2.0 * jf + dB * s2 * je

    dtx = d_je * (-fx / tz ** 2) * proj.inside_x
    dty = d_jf * (-fy / tz ** 2) * proj.inside_y
    dtz = (
        d_ja * (-fx / tz ** 2)
        + d_jb * (-fy / tz ** 2)
        + d_je * (-2.0 * je / tz)
        + d_jf * (-2.0 * jf / tz)
    )

    # mean2d -> camera-frame center (unclamped ratios).
    dtx = dtx + g_mx * (fx / tz)
    dty = dty + g_my * (fy / tz)
    dtz = dtz - g_mx * (fx * proj.ratio_x / tz) - g_my * (fy * proj.ratio_y / tz)

    R_wc, _ = ctx.pose.world_to_camera()
    d_cam = np.stack([dtx, dty, dtz], axis=1)
    d_world = _rotate_rows(d_cam, R_wc.T)

    # Opacity chain: alpha_eff = sigmoid(logit) * g_t.
    o = model.opacity[proj.idx]
    g_t = proj.g_t
    d_o = g_oeff * g_t
    d_logit = d_o * o * (1.0 - o)

    grads.mu[proj.idx, :3] = d_world
    grads.log_s_xyz[proj.idx] = grads_log_s
    grads.opacity_logit[proj.idx] = d_logit
    clamp_pass = ((model.rgb[proj.idx] > 0.0) & (model.rgb[proj.idx] < 1.0)).astype(
        np.float64
    )
    grads.rgb[proj.idx] = g_rgb * clamp_pass

    if train_temporal:
        mu_t = model.mu[proj.idx, 3]
        s_t = model.s_t[proj.idx]
        dgt = g_oeff * o
        dt_off = ctx.t - mu_t
        grads.mu[proj.idx, 3] = dgt * g_t * dt_off / (s_t * s_t)
        grads.log_s_t[proj.idx] = dgt * g_t * (dt_off * dt_off) / (s_t * s_t)
    return grads
