"""Compiled kernels for the tiled splat compositor.

Determinism contract: every array write is either tile-private (forward
pixel outputs, per-entry gradient rows) or performed on the host thread,
and every reduction runs in a fixed sequential order, so results are
bitwise identical for any worker-thread count. fastmath stays off for the
same reason.
"""

from __future__ import annotations

import math

import numpy as np

from ._threads import numba  # noqa: F401  (bootstraps the thread env first)
from numba import njit, prange

TILE = 16
T_FLOOR = 1e-4  # transmittance below which a pixel lane freezes
ALPHA_MAX = 0.99  # per-splat opacity ceiling inside the compositor


@njit(cache=True)
def expand_entries(x0, y0, x1, y1, offsets, tiles_x, depth_bits, out_keys, out_splat):
    """Emit one (tile, splat) entry per covered tile, splat-major.

    Keys pack tile id above the float32 depth bit pattern, so one stable
    sort yields tile-major, front-to-back, submission-order-tied entries.
    """
    for i in range(x0.shape[0]):
        o = offsets[i]
        db = depth_bits[i]
        for yy in range(y0[i], y1[i]):
            row = yy * tiles_x
            for xx in range(x0[i], x1[i]):
                out_keys[o] = (np.int64(row + xx) << np.int64(32)) | db
                out_splat[o] = i
                o += 1


@njit(cache=True, parallel=True, fastmath=False)
def composite_forward(
    tile_starts,
    tile_ends,
    e_mean2d,
    e_conic,
    e_opac,
    e_pthr,
    e_rgb,
    e_z,
    width,
    height,
    tiles_x,
    out_rgb,
    out_alpha,
    out_zacc,
    out_T,
    out_nc,
):
    """Front-to-back alpha compositing over 16x16 tiles.

    A contribution that would push transmittance below T_FLOOR is skipped
    and the pixel lane freezes; out_nc records, per pixel, the 1-based
    index (within the tile's entry range) of the last applied entry.
    """
    n_tiles = tile_starts.shape[0]
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        py0 = ty * TILE
        px0 = tx * TILE
        h = min(TILE, height - py0)
        w = min(TILE, width - px0)
        npx = h * w

        T = np.empty(npx, np.float64)
        cr = np.zeros(npx, np.float64)
        cg = np.zeros(npx, np.float64)
        cb = np.zeros(npx, np.float64)
        aa = np.zeros(npx, np.float64)
        zz = np.zeros(npx, np.float64)
        nc = np.zeros(npx, np.int32)
        frozen = np.zeros(npx, np.uint8)
        for p in range(npx):
            T[p] = 1.0
        n_active = npx

        s0 = tile_starts[tile]
        s1 = tile_ends[tile]
        for e in range(s0, s1):
            if n_active == 0:
                break
            mx = e_mean2d[e, 0]
            my = e_mean2d[e, 1]
            ca = e_conic[e, 0]
            cb2 = e_conic[e, 1]
            cc = e_conic[e, 2]
            o = e_opac[e]
            pthr = e_pthr[e]
            if pthr > 0.0:
                continue  # below 1/255 everywhere
            r0 = e_rgb[e, 0]
            g0 = e_rgb[e, 1]
            b0 = e_rgb[e, 2]
            z0 = e_z[e]
            ri = np.int32(e - s0 + 1)
            # Rows/columns where power >= pthr is possible span at most
            # +-sqrt(-2*pthr*{a,c}/det) around the center; padded by a pixel,
            # with the per-pixel test below still authoritative.
            cdet = ca * cc - cb2 * cb2
            dx_max = math.sqrt(-2.0 * pthr * cc / cdet)
            dy_max = math.sqrt(-2.0 * pthr * ca / cdet)
            if mx + dx_max < np.float64(px0) - 1.0 or mx - dx_max > np.float64(px0 + w):
                continue
            yy_lo = int(math.floor(my - np.float64(py0) - dy_max)) - 1
            yy_hi = int(math.ceil(my - np.float64(py0) + dy_max)) + 1
            if yy_lo < 0:
                yy_lo = 0
            if yy_hi > h - 1:
                yy_hi = h - 1
            for yy in range(yy_lo, yy_hi + 1):
                dy = my - np.float64(py0 + yy)
                row_term = -0.5 * cc * dy * dy
                cross = -cb2 * dy
                # Columns where power >= pthr is possible lie between the
                # roots of the row's quadratic; the window is padded by a
                # pixel and the per-pixel test below stays authoritative,
                # so this is a pure skip with bit-identical results.
                disc = cross * cross + 2.0 * ca * (row_term - pthr)
                if disc < 0.0:
                    continue
                sq = math.sqrt(disc)
                xx_lo = int(math.floor(mx - np.float64(px0) - (cross + sq) / ca)) - 1
                xx_hi = int(math.ceil(mx - np.float64(px0) - (cross - sq) / ca)) + 1
                if xx_lo < 0:
                    xx_lo = 0
                if xx_hi > w - 1:
                    xx_hi = w - 1
                p_base = yy * w
                for xx in range(xx_lo, xx_hi + 1):
                    p = p_base + xx
                    if frozen[p]:
                        continue
                    dx = mx - np.float64(px0 + xx)
                    power = row_term + dx * (cross - 0.5 * ca * dx)
                    if power > 0.0 or power < pthr:
                        continue
                    alpha = o * math.exp(power)
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    test_T = T[p] * (1.0 - alpha)
                    if test_T < T_FLOOR:
                        frozen[p] = 1
                        n_active -= 1
                        continue
                    wc = T[p] * alpha
                    cr[p] += wc * r0
                    cg[p] += wc * g0
                    cb[p] += wc * b0
                    aa[p] += wc
                    zz[p] += wc * z0
                    T[p] = test_T
                    nc[p] = ri

        for p in range(npx):
            row = p // w
            py = py0 + row
            px = px0 + (p - row * w)
            out_rgb[py, px, 0] = cr[p]
            out_rgb[py, px, 1] = cg[p]
            out_rgb[py, px, 2] = cb[p]
            out_alpha[py, px] = aa[p]
            out_zacc[py, px] = zz[p]
            out_T[py, px] = T[p]
            out_nc[py, px] = nc[p]


@njit(cache=True, parallel=True, fastmath=False)
def composite_backward(
    tile_starts,
    tile_ends,
    e_mean2d,
    e_conic,
    e_opac,
    e_pthr,
    e_rgb,
    width,
    height,
    tiles_x,
    dL_drgb,
    final_T,
    n_contrib,
    entry_grads,
):
    """Reverse-order replay of the compositor, accumulating, per entry:

    [d_mean2d_x, d_mean2d_y, d_conic_a, d_conic_b, d_conic_c,
     d_opacity_eff, d_r, d_g, d_b]

    Each entry row is written by exactly one tile; pixel sums run in a
    fixed order, so the result is independent of the thread count.
    """
    n_tiles = tile_starts.shape[0]
    for tile in prange(n_tiles):
        s0 = tile_starts[tile]
        s1 = tile_ends[tile]
        if s1 <= s0:
            continue
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        py0 = ty * TILE
        px0 = tx * TILE
        h = min(TILE, height - py0)
        w = min(TILE, width - px0)
        npx = h * w

        T = np.empty(npx, np.float64)
        nc_loc = np.empty(npx, np.int32)
        dLr = np.empty(npx, np.float64)
        dLg = np.empty(npx, np.float64)
        dLb = np.empty(npx, np.float64)
        ar = np.zeros(npx, np.float64)
        ag = np.zeros(npx, np.float64)
        ab = np.zeros(npx, np.float64)
        la = np.zeros(npx, np.float64)
        lr = np.zeros(npx, np.float64)
        lg = np.zeros(npx, np.float64)
        lb = np.zeros(npx, np.float64)

        max_nc = np.int32(0)
        for p in range(npx):
            row = p // w
            py = py0 + row
            px = px0 + (p - row * w)
            T[p] = final_T[py, px]
            nc_loc[p] = n_contrib[py, px]
            if nc_loc[p] > max_nc:
                max_nc = nc_loc[p]
            dLr[p] = dL_drgb[py, px, 0]
            dLg[p] = dL_drgb[py, px, 1]
            dLb[p] = dL_drgb[py, px, 2]

        for e in range(s0 + max_nc - 1, s0 - 1, -1):
            mx = e_mean2d[e, 0]
            my = e_mean2d[e, 1]
            ca = e_conic[e, 0]
            cb2 = e_conic[e, 1]
            cc = e_conic[e, 2]
            o = e_opac[e]
            pthr = e_pthr[e]
            if pthr > 0.0:
                continue  # below 1/255 everywhere; forward skipped it too
            r0 = e_rgb[e, 0]
            g0 = e_rgb[e, 1]
            b0 = e_rgb[e, 2]
            ri = np.int32(e - s0 + 1)

            g_mx = 0.0
            g_my = 0.0
            g_ca = 0.0
            g_cb = 0.0
            g_cc = 0.0
            g_o = 0.0
            g_r = 0.0
            g_g = 0.0
            g_b = 0.0
            cdet = ca * cc - cb2 * cb2
            dx_max = math.sqrt(-2.0 * pthr * cc / cdet)
            dy_max = math.sqrt(-2.0 * pthr * ca / cdet)
            if mx + dx_max < np.float64(px0) - 1.0 or mx - dx_max > np.float64(px0 + w):
                continue
            yy_lo = int(math.floor(my - np.float64(py0) - dy_max)) - 1
            yy_hi = int(math.ceil(my - np.float64(py0) + dy_max)) + 1
            if yy_lo < 0:
                yy_lo = 0
            if yy_hi > h - 1:
                yy_hi = h - 1
            for yy in range(yy_lo, yy_hi + 1):
                dy = my - np.float64(py0 + yy)
                row_term = -0.5 * cc * dy * dy
                cross = -cb2 * dy
                disc = cross * cross + 2.0 * ca * (row_term - pthr)
                if disc < 0.0:
                    continue
                sq = math.sqrt(disc)
                xx_lo = int(math.floor(mx - np.float64(px0) - (cross + sq) / ca)) - 1
                xx_hi = int(math.ceil(mx - np.float64(px0) - (cross - sq) / ca)) + 1
                if xx_lo < 0:
                    xx_lo = 0
                if xx_hi > w - 1:
                    xx_hi = w - 1
                p_base = yy * w
                for xx in range(xx_lo, xx_hi + 1):
                    p = p_base + xx
                    if ri > nc_loc[p]:
                        continue
                    dx = mx - np.float64(px0 + xx)
                    power = row_term + dx * (cross - 0.5 * ca * dx)
                    if power > 0.0 or power < pthr:
                        continue
                    G = math.exp(power)
                    alpha = o * G
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    T[p] = T[p] / (1.0 - alpha)
                    ar[p] = la[p] * lr[p] + (1.0 - la[p]) * ar[p]
                    ag[p] = la[p] * lg[p] + (1.0 - la[p]) * ag[p]
                    ab[p] = la[p] * lb[p] + (1.0 - la[p]) * ab[p]
                    wc = alpha * T[p]
                    g_r += wc * dLr[p]
                    g_g += wc * dLg[p]
                    g_b += wc * dLb[p]
                    dalpha = (
                        (r0 - ar[p]) * dLr[p]
                        + (g0 - ag[p]) * dLg[p]
                        + (b0 - ab[p]) * dLb[p]
                    ) * T[p]
                    la[p] = alpha
                    lr[p] = r0
                    lg[p] = g0
                    lb[p] = b0
                    if alpha < ALPHA_MAX:
                        g_o += dalpha * G
                        dpw = dalpha * alpha
                        g_mx += dpw * (-(ca * dx + cb2 * dy))
                        g_my += dpw * (-(cc * dy + cb2 * dx))
                        g_ca += dpw * (-0.5 * dx * dx)
                        g_cb += dpw * (-dx * dy)
                        g_cc += dpw * (-0.5 * dy * dy)

            entry_grads[e, 0] = g_mx
            entry_grads[e, 1] = g_my
            entry_grads[e, 2] = g_ca
            entry_grads[e, 3] = g_cb
            entry_grads[e, 4] = g_cc
            entry_grads[e, 5] = g_o
            entry_grads[e, 6] = g_r
            entry_grads[e, 7] = g_g
            entry_grads[e, 8] = g_b
