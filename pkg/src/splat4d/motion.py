"""Binary static/dynamic masks from low-resolution motion-probability maps.

Pipeline: pad the sequence with pseudo-frames at both ends, bilinearly
upsample every map to full resolution, pick one global Otsu threshold over the
pooled padded sequence, then threshold each real frame. A single threshold
keeps masks temporally stable; per-frame thresholds flicker on frames with no
real motion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "MotionProbMap",
    "MotionMask",
    "upsample_prob",
    "otsu_threshold",
    "pad_pseudo_frames",
    "compute_masks",
    "dilate_mask",
    "OTSU_BINS",
    "PSEUDO_FRAME_INDEX",
]

OTSU_BINS = 256

# Frame index carried by padding maps; excluded from mask emission.
PSEUDO_FRAME_INDEX = -1


@dataclass(frozen=True)
class MotionProbMap:
    """Low-resolution per-pixel motion probabilities for one frame."""

    values: np.ndarray  # (h, w) in [0, 1]
    frame_index: int

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"motion map must be a non-empty 2D grid, got shape {v.shape}")
        if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("motion probabilities must be finite and in [0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MotionMask:
    """Full-resolution boolean mask for one frame; True marks dynamic pixels."""

    values: np.ndarray  # (H, W) bool
    frame_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=bool))


def upsample_prob(map_: MotionProbMap, target: tuple[int, int]) -> np.ndarray:
    """Bilinear align-corners upsampling to (H, W). Values stay in [0, 1]."""
    src = map_.values
    h, w = src.shape
    H, W = target
    if H < h or W < w:
        raise ValueError(f"target {target} smaller than source {src.shape}")
    if (H, W) == (h, w):
        return src.copy()

    def axis_coords(n_src: int, n_dst: int) -> np.ndarray:
        if n_dst == 1 or n_src == 1:
            return np.zeros(n_dst)
        return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)

    ys = axis_coords(h, H)
    xs = axis_coords(w, W)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    out = (
        src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + src[np.ix_(y0, x1)] * (1 - fy) * fx
        + src[np.ix_(y1, x0)] * fy * (1 - fx)
        + src[np.ix_(y1, x1)] * fy * fx
    )
    return np.clip(out, 0.0, 1.0)


def _histogram(values: np.ndarray, bins: int) -> np.ndarray:
    # Probabilities live in [0, 1]; value 1.0 belongs to the top bin.
    idx = np.minimum((values * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins).astype(np.float64)


def otsu_threshold(values: np.ndarray, bins: int = OTSU_BINS) -> float:
    """Histogram threshold maximizing between-class variance.

    Returns the bin edge k/bins (k in 1..bins-1) that maximizes
    w0*w1*(mu0-mu1)^2 over the quantized histogram, ties broken toward the
    lower edge. Pixels with value >= threshold are classed dynamic. When every
    value lands in a single bin the split is meaningless: returns a threshold
    above the maximum (all-static) and warns.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("otsu_threshold needs at least one value")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    hist = _histogram(values, bins).astype(np.int64)
    if np.count_nonzero(hist) < 2:
        warnings.warn(
            "degenerate motion histogram (single occupied bin); treating all pixels as static",
            stacklevel=2,
        )
        return float(values.max()) + 1.0 / bins
    return otsu_from_histogram(hist) / bins


def otsu_from_histogram(hist: np.ndarray) -> int:
    """Index k of the best split edge for an integer histogram.

    Between-class variance with bin-center means reduces, up to a constant
    factor, to (m0*w1 - m1*w0)^2 / (w0*w1) with integer weighted sums
    m = sum(h_j * (2j+1)). Candidates are compared in exact integer
    arithmetic so the argmax (lowest k on ties) is reproducible down to the
    last ulp regardless of summation order.
    """
    counts = [int(c) for c in hist]
    weighted = [c * (2 * j + 1) for j, c in enumerate(counts)]
    total_w = sum(counts)
    total_m = sum(weighted)
    best_k, best_num, best_den = 1, -1, 1  # bcv >= 0, so -1 loses to any candidate
    w0 = m0 = 0
    for k in range(1, len(counts)):
        w0 += counts[k - 1]
        m0 += weighted[k - 1]
        w1 = total_w - w0
        if w0 == 0 or w1 == 0:
            continue
        a = m0 * w1 - (total_m - m0) * w0
        num, den = a * a, w0 * w1
        if num * best_den > best_num * den:  # strictly greater: ties keep the lower k
            best_k, best_num, best_den = k, num, den
    return best_k


def pad_pseudo_frames(seq: list[MotionProbMap], k: int = 2) -> list[MotionProbMap]:
    """Prepend/append k pseudo-frames, each the mean of that end's nearest maps.

    The averaging window is min(5, N-1) real maps (a lone map is its own
    window), which suppresses boundary-frame noise without letting one bad
    edge frame dominate. Pseudo-frames carry PSEUDO_FRAME_INDEX so downstream
    mask emission can drop them.
    """
    if not seq:
        raise ValueError("cannot pad an empty sequence")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k == 0:
        return list(seq)
    n = len(seq)
    window = min(5, max(1, n - 1))
    head = np.mean([m.values for m in seq[:window]], axis=0)
    tail = np.mean([m.values for m in seq[-window:]], axis=0)
    pad_head = [MotionProbMap(head, PSEUDO_FRAME_INDEX)] * k
    pad_tail = [MotionProbMap(tail, PSEUDO_FRAME_INDEX)] * k
    return pad_head + list(seq) + pad_tail


def compute_masks(
    seq: list[MotionProbMap],
    target: tuple[int, int],
    k: int = 2,
    dilate_px: int = 0,
) -> tuple[list[MotionMask], float]:
    """Full procedure: pad, upsample, global Otsu, per-frame thresholding.

    Returns (masks for the real frames, the global threshold). `dilate_px`
    optionally grows each mask to counter the erosion that interpolation of
    low-resolution maps introduces at object borders.
    """
    if not seq:
        raise ValueError("cannot compute masks for an empty sequence")
    shape = seq[0].values.shape
    if any(m.values.shape != shape for m in seq):
        raise ValueError("all motion maps must share one shape")

    padded = pad_pseudo_frames(seq, k)
    upsampled = [upsample_prob(m, target) for m in padded]
    pooled = np.concatenate([u.ravel() for u in upsampled])
    threshold = otsu_threshold(pooled)

    masks = []
    for m, up in zip(padded, upsampled):
        if m.frame_index == PSEUDO_FRAME_INDEX:
            continue
        mask = up >= threshold
        if dilate_px > 0:
            mask = dilate_mask(mask, dilate_px)
        masks.append(MotionMask(mask, m.frame_index))
    return masks, threshold


def dilate_mask(mask: np.ndarray, px: int) -> np.ndarray:
    """Grow dynamic regions by `px` pixels (Chebyshev distance)."""
    if px < 0:
        raise ValueError(f"dilation must be >= 0, got {px}")
    if px == 0 or not mask.any():
        return np.asarray(mask, dtype=bool)
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=px)
