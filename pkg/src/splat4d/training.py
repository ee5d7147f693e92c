"""Optimization loop: photometric loss, Adam with LR schedule, diagnostics.

Training minimizes L = (1-lambda) * L1 + lambda * (1 - SSIM) between rendered
frames and bundle frames, one uniformly random frame per step, with Adam on
the five parameter arrays. The Gaussian count never changes: there is no
densification, splitting, or pruning during optimization.

The loss-side SSIM uses zero-padded same-size windows so every pixel — hence
every splat touching the frame — receives gradient; the evaluation-side
`metrics.ssim` restricts to fully-interior windows instead. Both use the
11x11 Gaussian window (sigma 1.5) and standard constants.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import psutil
from scipy.ndimage import correlate1d

from .bundle import CalibratedBundle
from .geometry import Intrinsics, PoseSE3
from .metrics import SSIM_C1, SSIM_C2, gaussian_window, psnr
from .model import DEFAULT_CULL_EPSILON, GaussianModel4D
from .motion import MotionMask, compute_masks
from .rasterizer import FrameImage, render_backward, render_training
from .seeding import init_from_bundle

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


class TrainingError(RuntimeError):
    """Raised when optimization hits a non-finite loss or parameter."""


# ---------------------------------------------------------------------------
# Photometric loss
# ---------------------------------------------------------------------------


def _filter_same(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable 'same' correlation with zero fill outside the image."""
    out = correlate1d(img, win, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, win, axis=1, mode="constant", cval=0.0)


def _ssim_same_with_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean zero-padded SSIM over (H, W, C) images and its gradient in x.

    The local score is factored as S = (A1/B1) * (A2/B2); with that
    factorization the analytic gradient cancels exactly (bitwise) at x == y,
    so an image that already matches its target produces a true zero
    gradient rather than rounding noise.
    """
    win = gaussian_window()
    n = x.size
    g = 1.0 / n  # d(mean)/d(map pixel)
    total = 0.0
    grad = np.empty_like(x)
    for c in range(x.shape[2]):
        xc = x[:, :, c]
        yc = y[:, :, c]
        m1 = _filter_same(xc, win)
        muy = _filter_same(yc, win)
        m2 = _filter_same(xc * xc, win)
        m3 = _filter_same(xc * yc, win)
        sy2 = _filter_same(yc * yc, win) - muy * muy

        a1 = 2.0 * m1 * muy + SSIM_C1
        a2 = 2.0 * (m3 - m1 * muy) + SSIM_C2
        b1 = m1 * m1 + muy * muy + SSIM_C1
        b2 = (m2 - m1 * m1) + sy2 + SSIM_C2
        p = a1 / b1
        q = a2 / b2
        s = p * q
        total += float(s.sum())

        # dS/dm1 = dP/dm1 * Q + P * dQ/dm1, with the raw windowed moments
        # m1 = W[x], m2 = W[x^2], m3 = W[xy] as the independent variables.
        dp_dm1 = 2.0 * (muy - m1 * p) / b1
        dq_dm1 = 2.0 * (m1 * q - muy) / b2
        k1 = g * (dp_dm1 * q + p * dq_dm1)
        k2 = -g * (s / b2)  # dS/dm2 = -S/B2
        k3 = g * (2.0 * (p / b2))  # dS/dm3 = 2*A1/(B1*B2) = 2P/B2
        # The window is symmetric and zero-padded, so the filter is
        # self-adjoint: pull each map-space field back to pixel space.
        grad[:, :, c] = (
            _filter_same(k1, win)
            + 2.0 * xc * _filter_same(k2, win)
            + yc * _filter_same(k3, win)
        )
    return total / n, grad


def photometric_loss(
    rendered: FrameImage | np.ndarray,
    target: np.ndarray,
    loss_lambda: float = 0.2,
) -> tuple[float, np.ndarray]:
    """L = (1-lambda)*L1 + lambda*(1 - SSIM), with the analytic image gradient.

    `rendered` may be a FrameImage (its rgb plane is used) or a raw array of
    the same shape as `target`. Returns (loss, dL/drendered).
    """
    img = rendered.rgb if isinstance(rendered, FrameImage) else np.asarray(rendered, np.float64)
    tgt = np.asarray(target, np.float64)
    if img.shape != tgt.shape:
        raise ValueError(f"image dimensions differ: {img.shape} vs {tgt.shape}")
    squeeze = img.ndim == 2
    x = img[:, :, None] if squeeze else img
    y = tgt[:, :, None] if squeeze else tgt

    n = x.size
    diff = x - y
    l1 = float(np.abs(diff).mean())
    dl1 = np.sign(diff) / n

    ssim_val, dssim = _ssim_same_with_grad(x, y)
    loss = (1.0 - loss_lambda) * l1 + loss_lambda * (1.0 - ssim_val)
    dl = (1.0 - loss_lambda) * dl1 - loss_lambda * dssim
    return loss, (dl[:, :, 0] if squeeze else dl)


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters: standard splatting defaults with a low position LR
    decayed exponentially to `position_lr_final_scale` over `max_iters`."""

    max_iters: int = 5000
    lr_position: float = 1e-5
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rgb: float = 2.5e-3
    position_lr_final_scale: float = 0.01
    loss_lambda: float = 0.2
    cull_epsilon: float = DEFAULT_CULL_EPSILON
    seed: int = 0
    mode: str = "lite"
    train_temporal: bool = False
    log_every: int = 100

    def __post_init__(self):
        for name in ("lr_position", "lr_opacity", "lr_scale", "lr_rgb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must be in [0, 1]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.cull_epsilon < 0:
            raise ValueError("cull_epsilon must be >= 0")
        if self.mode not in ("lite", "full"):
            raise ValueError(f"mode must be 'lite' or 'full', got {self.mode!r}")
        if self.position_lr_final_scale <= 0:
            raise ValueError("position_lr_final_scale must be > 0")

    def position_lr(self, iteration: int) -> float:
        """Exponential decay from lr_position to final_scale*lr_position."""
        if self.max_iters <= 0:
            return self.lr_position
        frac = iteration / self.max_iters
        return self.lr_position * self.position_lr_final_scale**frac


_SLOT_KEYS = ("position", "scale", "opacity", "rgb", "mu_t", "scale_t")


@dataclass
class TrainState:
    """Mutable optimizer state: step counter, Adam moments, RNG, history."""

    intrinsics: Intrinsics
    rng: np.random.Generator
    iteration: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    peak_rss_mb: float = 0.0
    started_at: float = field(default_factory=time.perf_counter)

    @classmethod
    def create(
        cls, model: GaussianModel4D, intrinsics: Intrinsics, seed: int
    ) -> "TrainState":
        shapes = {
            "position": (model.n, 3),
            "scale": (model.n,),
            "opacity": (model.n,),
            "rgb": (model.n, 3),
            "mu_t": (model.n,),
            "scale_t": (model.n,),
        }
        moments = {k: (np.zeros(s), np.zeros(s)) for k, s in shapes.items()}
        return cls(
            intrinsics=intrinsics,
            rng=np.random.default_rng(seed),
            moments=moments,
        )

    def elapsed(self) -> float:
        return time.perf_counter() - self.started_at

    def sample_rss(self) -> float:
        rss_mb = psutil.Process().memory_info().rss / (1024.0 * 1024.0)
        if rss_mb > self.peak_rss_mb:
            self.peak_rss_mb = rss_mb
        return rss_mb

    def add_stage_time(self, name: str, seconds: float) -> None:
        self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + seconds


def _adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    step: int,
) -> None:
    """One in-place Adam update; `step` is 1-based for bias correction."""
    m *= ADAM_BETA1
    m += (1.0 - ADAM_BETA1) * grad
    v *= ADAM_BETA2
    v += (1.0 - ADAM_BETA2) * grad * grad
    mhat = m / (1.0 - ADAM_BETA1**step)
    vhat = v / (1.0 - ADAM_BETA2**step)
    param -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Steps and loop
# ---------------------------------------------------------------------------


def _diagnostic_dump(model: GaussianModel4D, iteration: int, loss: float) -> str:
    parts = [f"iteration {iteration}: non-finite loss {loss!r}"]
    for name, arr in (
        ("mu", model.mu),
        ("log_s_xyz", model.log_s_xyz),
        ("log_s_t", model.log_s_t),
        ("opacity_logit", model.opacity_logit),
        ("rgb", model.rgb),
    ):
        bad = int(np.size(arr) - np.isfinite(arr).sum())
        if bad:
            parts.append(f"{name}: {bad} non-finite entries")
    return "; ".join(parts)


def train_step(
    model: GaussianModel4D,
    state: TrainState,
    frame: tuple[np.ndarray, PoseSE3, float],
    config: TrainConfig,
) -> tuple[TrainState, dict]:
    """Render one frame, compute loss, backpropagate, apply Adam in place.

    `frame` is (target image (H, W, 3) in [0, 1], camera pose, timestamp).
    Returns the (mutated) state and {"iter", "loss", "psnr_train"}.
    """
    image, pose, t = frame

    t0 = time.perf_counter()
    rendered, ctx = render_training(
        model, pose, state.intrinsics, t, cull_epsilon=config.cull_epsilon
    )
    state.add_stage_time("optimize.forward", time.perf_counter() - t0)

    loss, dl_img = photometric_loss(rendered, image, config.loss_lambda)
    if not np.isfinite(loss):
        raise TrainingError(_diagnostic_dump(model, state.iteration, loss))

    t0 = time.perf_counter()
    grads = render_backward(ctx, dl_img, train_temporal=config.train_temporal)
    state.add_stage_time("optimize.backward", time.perf_counter() - t0)

    t0 = time.perf_counter()
    step = state.iteration + 1  # 1-based for Adam bias correction
    pos_lr = config.position_lr(state.iteration)
    mm, vv = state.moments["position"]
    _adam_update(model.mu[:, :3], grads.mu[:, :3], mm, vv, pos_lr, step)
    mm, vv = state.moments["scale"]
    _adam_update(model.log_s_xyz, grads.log_s_xyz, mm, vv, config.lr_scale, step)
    mm, vv = state.moments["opacity"]
    _adam_update(model.opacity_logit, grads.opacity_logit, mm, vv, config.lr_opacity, step)
    mm, vv = state.moments["rgb"]
    _adam_update(model.rgb, grads.rgb, mm, vv, config.lr_rgb, step)
    if config.train_temporal:
        mm, vv = state.moments["mu_t"]
        _adam_update(model.mu[:, 3], grads.mu[:, 3], mm, vv, pos_lr, step)
        mm, vv = state.moments["scale_t"]
        _adam_update(model.log_s_t, grads.log_s_t, mm, vv, config.lr_scale, step)
    state.add_stage_time("optimize.update", time.perf_counter() - t0)

    for arr in (model.mu, model.log_s_xyz, model.log_s_t, model.opacity_logit, model.rgb):
        if not np.isfinite(arr).all():
            raise TrainingError(_diagnostic_dump(model, state.iteration, loss))

    state.iteration += 1
    state.loss_history.append(loss)
    metrics = {
        "iter": state.iteration,
        "loss": loss,
        "psnr_train": psnr(rendered.rgb, image),
    }
    return state, metrics


@dataclass
class TrainResult:
    model: GaussianModel4D
    report: dict
    state: TrainState


def train(
    bundle: CalibratedBundle,
    masks: list[MotionMask] | None = None,
    config: TrainConfig | None = None,
    model: GaussianModel4D | None = None,
    init_timings: dict[str, float] | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Initialize (unless a model is given) and optimize against the bundle.

    Frames are sampled uniformly at random with replacement from the bundle,
    one per step, driven by config.seed. Emits progress records through
    `progress` every config.log_every steps as dicts shaped like the
    line-delimited log schema {iter, loss, psnr_train, elapsed_s, rss_mb},
    and returns the trained model plus a stage-by-stage runtime/memory
    report. The Gaussian count is constant from initialization to the end.
    """
    config = config or TrainConfig()
    stages: dict[str, dict[str, float]] = {}
    proc = psutil.Process()

    def rss_mb() -> float:
        return proc.memory_info().rss / (1024.0 * 1024.0)

    t_start = time.perf_counter()
    if model is None:
        if masks is None:
            t0 = time.perf_counter()
            h, w = bundle.images.shape[1:3]
            masks, _ = compute_masks(list(bundle.motion), (h, w))
            stages["init.masks"] = {
                "seconds": time.perf_counter() - t0,
                "memory_mb": rss_mb(),
            }
        model, summary = init_from_bundle(bundle, masks, mode=config.mode)
        for name, secs in summary.timings.items():
            stages[name] = {"seconds": secs, "memory_mb": rss_mb()}
    else:
        model = model.copy()
        for name, secs in (init_timings or {}).items():
            stages[name] = {"seconds": secs, "memory_mb": rss_mb()}

    n_initial = model.n
    state = TrainState.create(model, bundle.intrinsics, config.seed)
    state.sample_rss()

    n_frames = len(bundle.images)
    last_metrics: dict = {}
    for _ in range(config.max_iters):
        idx = int(state.rng.integers(0, n_frames))
        frame = (bundle.images[idx], bundle.poses[idx], float(bundle.timestamps[idx]))
        state, last_metrics = train_step(model, state, frame, config)
        if progress is not None and (
            state.iteration % config.log_every == 0 or state.iteration == config.max_iters
        ):
            progress(
                {
                    "iter": state.iteration,
                    "loss": last_metrics["loss"],
                    "psnr_train": last_metrics["psnr_train"],
                    "elapsed_s": state.elapsed(),
                    "rss_mb": state.sample_rss(),
                }
            )

    if model.n != n_initial:
        raise TrainingError(
            f"Gaussian count changed during training: {n_initial} -> {model.n}"
        )

    state.sample_rss()
    for key in ("optimize.forward", "optimize.backward", "optimize.update"):
        stages[key] = {
            "seconds": state.stage_seconds.get(key, 0.0),
            "memory_mb": state.peak_rss_mb,
        }
    stages["total"] = {
        "seconds": time.perf_counter() - t_start,
        "memory_mb": state.peak_rss_mb,
    }

    report = {
        "n_gaussians": n_initial,
        "iters": config.max_iters,
        "mode": config.mode,
        "final_loss": last_metrics.get("loss"),
        "psnr_train_final": last_metrics.get("psnr_train"),
        "stages": stages,
        "loss_history": list(state.loss_history),
    }
    return TrainResult(model=model, report=report, state=state)
