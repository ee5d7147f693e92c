"""The motion-aware isotropic 4D Gaussian primitive.

Each primitive is a Gaussian over space-time with mean μ ∈ ℝ⁴ and covariance
diag(s_xyz², s_xyz², s_xyz², s_t²): orientation fixed to identity, one spatial
scale, one temporal scale. Rendering at time t conditions the 4D density on t;
with a diagonal covariance the conditioned 3D mean and covariance are constant
and all time dependence enters through the temporal opacity

    o_t = o · exp(−(t−μ_t)² / (2 s_t²))

which is deliberately unnormalized (peak 1): a normalized density would scale
opacity by 1/s_t and extinguish long-lived primitives.

Parameters per Gaussian: 4 (mean) + 2 (scales) + 1 (opacity) + 3 (rgb) = 10.
Opacity is stored as a logit and scales as logs so optimization keeps them in
range by construction; rgb is stored directly in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "GaussianModel4D",
    "ConditionedGaussian3D",
    "condition_at_time",
    "temporal_opacity",
    "cull_by_time",
    "rgb_from_sh0",
    "sh0_from_rgb",
    "sigmoid",
    "inverse_sigmoid",
    "PARAMS_PER_GAUSSIAN",
    "DEFAULT_CULL_EPSILON",
    "SH0_SCALE",
]

PARAMS_PER_GAUSSIAN = 10
DEFAULT_CULL_EPSILON = 1.0 / 255.0
SH0_SCALE = 0.28209479177387814  # 1 / (2 sqrt(pi)): degree-0 spherical-harmonic basis


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to stay overflow-free for large |x|.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("inverse_sigmoid requires values strictly inside (0, 1)")
    return np.log(p / (1.0 - p))


def rgb_from_sh0(sh0: np.ndarray) -> np.ndarray:
    """Degree-0 SH coefficients to plain RGB (3DGS checkpoint interop)."""
    return np.clip(0.5 + SH0_SCALE * np.asarray(sh0, dtype=np.float64), 0.0, 1.0)


def sh0_from_rgb(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH0_SCALE


@dataclass(frozen=True)
class ConditionedGaussian3D:
    """A 4D Gaussian sliced at a fixed time."""

    mean3: np.ndarray  # (3,)
    cov3: np.ndarray  # (3, 3) symmetric PSD
    effective_opacity: float
    rgb: np.ndarray  # (3,)


def condition_at_time(
    mu: np.ndarray,
    sigma: np.ndarray,
    t: float,
    opacity: float = 1.0,
    rgb: np.ndarray | None = None,
) -> ConditionedGaussian3D:
    """Condition a general 4x4-covariance Gaussian on time t.

    mean3 = μ_xyz + Σ_xyz,t Σ_tt⁻¹ (t − μ_t)
    cov3  = Σ_xyz − Σ_xyz,t Σ_tt⁻¹ Σ_t,xyz   (Schur complement)

    The isotropic model never calls this (its cross-covariance is zero, making
    the slice time-invariant); it exists for the general case and for testing
    the conditioning math against dense-sampling oracles.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(4)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (4, 4):
        raise ValueError(f"covariance must be 4x4, got {sigma.shape}")
    s_tt = float(sigma[3, 3])
    if s_tt <= 0:
        raise ValueError(f"temporal variance must be positive, got {s_tt}")
    cross = sigma[:3, 3]
    dt = t - mu[3]
    mean3 = mu[:3] + cross * (dt / s_tt)
    cov3 = sigma[:3, :3] - np.outer(cross, cross) / s_tt
    eff = float(opacity) * float(np.exp(-0.5 * dt * dt / s_tt))
    return ConditionedGaussian3D(
        mean3=mean3,
        cov3=cov3,
        effective_opacity=eff,
        rgb=np.asarray(rgb, dtype=np.float64) if rgb is not None else np.ones(3),
    )


def temporal_opacity(
    opacity: np.ndarray, mu_t: np.ndarray, s_t: np.ndarray, t: float
) -> np.ndarray:
    """o_t = o · exp(−(t−μ_t)²/(2 s_t²)), the unnormalized temporal falloff."""
    dt = t - np.asarray(mu_t, dtype=np.float64)
    s_t = np.asarray(s_t, dtype=np.float64)
    return np.asarray(opacity, dtype=np.float64) * np.exp(-0.5 * (dt / s_t) ** 2)


def cull_by_time(model: "GaussianModel4D", t: float, epsilon: float = DEFAULT_CULL_EPSILON) -> np.ndarray:
    """Indices of Gaussians whose temporal opacity at t reaches epsilon."""
    if not (0.0 <= epsilon < 1.0):
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    o_t = model.temporal_opacity(t)
    return np.flatnonzero(o_t >= epsilon if epsilon > 0 else np.ones(model.n, dtype=bool))


@dataclass
class GaussianModel4D:
    """Structure-of-arrays container for isotropic 4D Gaussians."""

    mu: np.ndarray  # (N, 4): x, y, z, t
    log_s_xyz: np.ndarray  # (N,)
    log_s_t: np.ndarray  # (N,)
    opacity_logit: np.ndarray  # (N,)
    rgb: np.ndarray  # (N, 3) in [0, 1]
    is_dynamic: np.ndarray  # (N,) bool
    video_length: float
    fps: float
    mode: str = "lite"

    def __post_init__(self) -> None:
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.log_s_xyz = np.ascontiguousarray(self.log_s_xyz, dtype=np.float64)
        self.log_s_t = np.ascontiguousarray(self.log_s_t, dtype=np.float64)
        self.opacity_logit = np.ascontiguousarray(self.opacity_logit, dtype=np.float64)
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.float64)
        self.is_dynamic = np.ascontiguousarray(self.is_dynamic, dtype=bool)
        n = self.mu.shape[0]
        if self.mu.ndim != 2 or self.mu.shape[1] != 4:
            raise ValueError(f"mu must be (N, 4), got {self.mu.shape}")
        for name in ("log_s_xyz", "log_s_t", "opacity_logit", "is_dynamic"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must be shape ({n},), got {arr.shape}")
        if self.rgb.shape != (n, 3):
            raise ValueError(f"rgb must be (N, 3), got {self.rgb.shape}")
        if self.mode not in ("lite", "full"):
            raise ValueError(f"mode must be 'lite' or 'full', got {self.mode!r}")
        if not (self.fps > 0 and self.video_length > 0):
            raise ValueError("fps and video_length must be positive")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def s_xyz(self) -> np.ndarray:
        return np.exp(self.log_s_xyz)

    @property
    def s_t(self) -> np.ndarray:
        return np.exp(self.log_s_t)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def temporal_opacity(self, t: float) -> np.ndarray:
        return temporal_opacity(self.opacity, self.mu[:, 3], self.s_t, t)

    def conditioned(self, indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Time-sliced 3D parameters: (means3 (M, 3), spatial std s_xyz (M,)).

        Isotropic fast path of the Schur-complement conditioning: the spatial/
        temporal cross-covariance is zero by construction, so the slice is the
        spatial marginal at every t.
        """
        if indices is None:
            return self.mu[:, :3], np.exp(self.log_s_xyz)
        return self.mu[indices, :3], np.exp(self.log_s_xyz[indices])

    def take(self, indices: np.ndarray) -> "GaussianModel4D":
        return replace(
            self,
            mu=self.mu[indices],
            log_s_xyz=self.log_s_xyz[indices],
            log_s_t=self.log_s_t[indices],
            opacity_logit=self.opacity_logit[indices],
            rgb=self.rgb[indices],
            is_dynamic=self.is_dynamic[indices],
        )

    def copy(self) -> "GaussianModel4D":
        return replace(
            self,
            mu=self.mu.copy(),
            log_s_xyz=self.log_s_xyz.copy(),
            log_s_t=self.log_s_t.copy(),
            opacity_logit=self.opacity_logit.copy(),
            rgb=self.rgb.copy(),
            is_dynamic=self.is_dynamic.copy(),
        )

    def float_parameter_count(self) -> int:
        """Optimizable floats per Gaussian; the storage schema pins this at 10."""
        per = self.mu.shape[1] + 1 + 1 + 1 + self.rgb.shape[1]
        assert per == PARAMS_PER_GAUSSIAN
        return per
