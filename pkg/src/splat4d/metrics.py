"""Image-quality metrics: PSNR and windowed SSIM, plus per-sequence reports.

Both metrics operate on linear-intensity float images in [0, 1], before any
8-bit quantization. PSNR is computed over all channels jointly; SSIM is the
mean of the local structural-similarity map, restricted to windows that lie
fully inside the image (so images smaller than the window are rejected), with
channels averaged equally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) images, got shape {a.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 100.

    MSE is taken over every pixel and channel; identical images return the
    cap rather than infinity.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1D Gaussian window of odd length `size`, normalized to sum 1."""
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable windowed mean over fully-interior windows.

    `img` is (H, W); the result is (H-size+1, W-size+1): a zero-padded 'same'
    correlation cropped to the region where the window never touches the
    border, which equals the 'valid' correlation there.
    """
    pad = (len(window) - 1) // 2
    out = correlate1d(img, window, axis=0, mode="constant", cval=0.0)
    out = correlate1d(out, window, axis=1, mode="constant", cval=0.0)
    return out[pad:-pad, pad:-pad]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Uses the standard constants C1 = 0.01^2, C2 = 0.03^2 on [0, 1] inputs
    and weighted (non-sample) moments. Only windows fully inside the image
    contribute; images smaller than the window are rejected. Multichannel
    images average the per-channel means with equal weight.
    """
    a, b = _check_pair(a, b)
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    win = gaussian_window()
    means = []
    for c in range(a.shape[2]):
        x = a[:, :, c]
        y = b[:, :, c]
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        vx = _filter_valid(x * x, win) - mx * mx
        vy = _filter_valid(y * y, win) - my * my
        cxy = _filter_valid(x * y, win) - mx * my
        s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
            (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        )
        means.append(float(s.mean()))
    return float(np.mean(means))


@dataclass
class MetricReport:
    """Per-frame PSNR/SSIM lists with their means, JSON-serializable."""

    psnr_per_frame: list[float] = field(default_factory=list)
    ssim_per_frame: list[float] = field(default_factory=list)

    @property
    def psnr(self) -> float:
        return float(np.mean(self.psnr_per_frame)) if self.psnr_per_frame else float("nan")

    @property
    def ssim(self) -> float:
        return float(np.mean(self.ssim_per_frame)) if self.ssim_per_frame else float("nan")

    @property
    def n_frames(self) -> int:
        return len(self.psnr_per_frame)

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "n_frames": self.n_frames,
            "psnr_per_frame": list(self.psnr_per_frame),
            "ssim_per_frame": list(self.ssim_per_frame),
        }


def report_metrics(renders, targets) -> MetricReport:
    """PSNR/SSIM per frame plus means over paired image sequences."""
    report = MetricReport()
    for rendered, target in zip(renders, targets, strict=True):
        report.psnr_per_frame.append(psnr(rendered, target))
        report.ssim_per_frame.append(ssim(rendered, target))
    return report
