"""Command-line entry points: synth, init, train, render, eval, serve.

Every command is deterministic given its inputs and seed, exits 0 only on
full success, 2 on input/usage errors, and 3 when training aborts on a
non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bundle import BundleError, load_bundle, save_bundle
from .checkpoint import (
    CheckpointError,
    export_seeds_ply,
    load_checkpoint,
    save_checkpoint,
)
from .formats import PfmError, write_png
from .geometry import Intrinsics, PoseSE3
from .metrics import psnr, ssim
from .motion import compute_masks
from .rasterizer import render
from .seeding import init_from_bundle
from .synthetic import generate_synthetic, load_spec
from .training import TrainConfig, TrainingError, train

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_TRAINING_FAILED = 3


def _report_path(checkpoint_path: str | Path) -> Path:
    return Path(f"{checkpoint_path}.report.json")


def _write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    bundle, _ = generate_synthetic(spec, seed=args.seed)
    out = save_bundle(bundle, args.out)
    print(f"wrote {len(bundle.images)} frames to {out}")
    return EXIT_OK


def cmd_init(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    h, w = bundle.images.shape[1:3]
    masks, threshold = compute_masks(list(bundle.motion), (h, w))
    model, summary = init_from_bundle(
        bundle, masks, mode=args.mode, keep_clouds=args.ply is not None
    )
    save_checkpoint(model, args.out)
    if args.ply is not None:
        export_seeds_ply(summary.pruned_cloud, args.ply)

    report = {
        "mode": args.mode,
        "otsu_threshold": threshold,
        "static_before": summary.static_before,
        "static_after": summary.static_after,
        "dynamic_before": summary.dynamic_before,
        "dynamic_after": summary.dynamic_after,
        "static_reduction": summary.static_reduction,
        "total_reduction": summary.total_reduction,
        "voxel_size_static": summary.voxel_size_static,
        "voxel_size_dynamic": summary.voxel_size_dynamic,
        "n_gaussians": model.n,
        "timings": summary.timings,
    }
    _write_json(_report_path(args.out), report)

    print(
        f"static seeds: {summary.static_before} -> {summary.static_after} "
        f"(reduction {summary.static_reduction:.2%})"
    )
    print(
        f"dynamic seeds: {summary.dynamic_before} -> {summary.dynamic_after} "
        f"(reduction {1.0 - summary.dynamic_after / max(summary.dynamic_before, 1):.2%})"
    )
    print(
        f"total: {summary.static_before + summary.dynamic_before} -> {model.n} "
        f"Gaussians (reduction {summary.total_reduction:.2%})"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    model = None
    init_timings: dict[str, float] = {}
    if args.init is not None:
        model = load_checkpoint(args.init)
        sidecar = _report_path(args.init)
        if sidecar.exists():
            init_timings = json.loads(sidecar.read_text()).get("timings", {})

    config = TrainConfig(
        max_iters=args.iters,
        seed=args.seed,
        mode=args.mode,
        train_temporal=args.train_temporal,
    )

    def progress(record: dict) -> None:
        print(json.dumps(record), flush=True)

    result = train(
        bundle,
        None,
        config,
        model=model,
        init_timings=init_timings,
        progress=progress,
    )
    save_checkpoint(result.model, args.out)
    _write_json(_report_path(args.out), result.report)
    print(f"wrote {args.out} ({result.model.n} Gaussians, {args.iters} iters)")
    return EXIT_OK


def _load_pose_json(path: str | Path) -> tuple[PoseSE3, dict]:
    """Read a camera-to-world pose (and optional extras) from JSON.

    Accepts a bare 16-element row-major list, a 4x4 nested list, or an
    object with a "matrix" field in either form (extra fields returned).
    """
    data = json.loads(Path(path).read_text())
    extras: dict = {}
    matrix = data
    if isinstance(data, dict):
        if "matrix" not in data:
            raise ValueError(f"pose JSON {path} has no 'matrix' field")
        matrix = data["matrix"]
        extras = {k: v for k, v in data.items() if k != "matrix"}
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.size != 16:
        raise ValueError(f"pose matrix must have 16 elements, got shape {arr.shape}")
    return PoseSE3.from_matrix(arr.reshape(4, 4)), extras


def cmd_render(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    pose, extras = _load_pose_json(args.pose)

    t = args.t
    if not 0.0 <= t <= model.video_length:
        clamped = min(max(t, 0.0), model.video_length)
        print(
            f"warning: t={t} outside [0, {model.video_length}]; clamped to {clamped}",
            file=sys.stderr,
        )
        t = clamped

    width = int(extras.get("width", args.width))
    height = int(extras.get("height", args.height))
    fov_y = float(extras.get("fov_y", args.fov_y))
    intrinsics = Intrinsics.from_fov_y(fov_y, width, height)

    frame = render(model, pose, intrinsics, t)
    write_png(args.out, frame.rgb)
    print(
        f"rendered {width}x{height} at t={t:.3f}s in {frame.meta['render_ms']:.1f} ms "
        f"({frame.meta['survivor_count']} Gaussians after culling) -> {args.out}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    bundle = load_bundle(args.bundle)
    psnr_values = []
    ssim_values = []
    for i in range(len(bundle.images)):
        frame = render(model, bundle.poses[i], bundle.intrinsics, float(bundle.timestamps[i]))
        psnr_values.append(psnr(frame.rgb, bundle.images[i]))
        ssim_values.append(ssim(frame.rgb, bundle.images[i]))
    report = {
        "scene": Path(args.bundle).name,
        "psnr": float(np.mean(psnr_values)),
        "ssim": float(np.mean(ssim_values)),
        "n_frames": len(psnr_values),
        "psnr_per_frame": psnr_values,
        "ssim_per_frame": ssim_values,
    }
    _write_json(args.out, report)
    print(f"{report['scene']}: PSNR {report['psnr']:.2f} dB, SSIM {report['ssim']:.4f}")
    return EXIT_OK


def default_viewer_dir() -> Path:
    """Built viewer assets in a source checkout (frontend/dist)."""
    return Path(__file__).resolve().parents[2] / "frontend" / "dist"


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from . import _threads
    from .server import create_app

    _threads.set_threads(_threads.default_threads())
    model = load_checkpoint(args.model)
    viewer_dir = Path(args.viewer_dir) if args.viewer_dir else default_viewer_dir()
    app = create_app(model, assets_dir=viewer_dir)
    print(f"serving {args.model} on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splat4d",
        description="Motion-aware isotropic 4D Gaussian splatting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic calibrated bundle")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", help="seed and grid-prune a Gaussian model from a bundle")
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--mode", choices=("lite", "full"), default="lite")
    p.add_argument("--out", required=True, help="output checkpoint (.i4d)")
    p.add_argument("--ply", default=None, help="optional debug PLY of the pruned seeds")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="optimize a model against a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--init", default=None, help="checkpoint to start from (else init here)")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("lite", "full"), default="lite")
    p.add_argument("--train-temporal", action="store_true")
    p.add_argument("--out", required=True, help="output checkpoint (.i4d)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one frame from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--pose", required=True, help="camera-to-world 4x4 JSON")
    p.add_argument("--t", type=float, required=True, help="timestamp in seconds")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--fov-y", type=float, default=60.0)
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against a bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the interactive viewer for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--viewer-dir", default=None, help="built viewer assets (default: frontend/dist)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING_FAILED
    except (
        BundleError,
        CheckpointError,
        PfmError,
        ValueError,
        KeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
