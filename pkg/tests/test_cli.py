"""End-to-end CLI tests: exit codes, outputs, determinism."""

import dataclasses
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from splat4d.checkpoint import load_checkpoint, save_checkpoint
from splat4d.cli import main
from splat4d.formats import read_png
from splat4d.synthetic import reference_spec


@pytest.fixture(scope="module")
def spec_file(tmp_path_factory):
    spec = reference_spec(width=48, height=48, n_frames=4, fps=30.0)
    path = tmp_path_factory.mktemp("spec") / "scene.json"
    path.write_text(json.dumps(dataclasses.asdict(spec)))
    return path


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory, spec_file):
    out = tmp_path_factory.mktemp("bundle") / "scene"
    rc = main(["synth", "--spec", str(spec_file), "--out", str(out), "--seed", "3"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def init_ckpt(tmp_path_factory, bundle_dir):
    out = tmp_path_factory.mktemp("init") / "seeds.i4d"
    rc = main(["init", "--bundle", str(bundle_dir), "--mode", "lite", "--out", str(out)])
    assert rc == 0
    return out


def dir_hashes(d: Path) -> dict[str, str]:
    return {
        str(p.relative_to(d)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(d.rglob("*"))
        if p.is_file()
    }


class TestSynth:
    def test_writes_complete_bundle(self, bundle_dir):
        assert (bundle_dir / "manifest.json").is_file()
        manifest = json.loads((bundle_dir / "manifest.json").read_text())
        assert manifest["n_frames"] == 4
        for frame in manifest["frames"]:
            for key in ("rgb", "depth", "motion"):
                assert (bundle_dir / frame[key]).is_file()

    def test_same_seed_identical_hashes(self, tmp_path, spec_file):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["synth", "--spec", str(spec_file), "--out", str(a), "--seed", "9"]) == 0
        assert main(["synth", "--spec", str(spec_file), "--out", str(b), "--seed", "9"]) == 0
        assert dir_hashes(a) == dir_hashes(b)

    def test_missing_spec_exits_2(self, tmp_path, capsys):
        rc = main(["synth", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_spec_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["synth", "--spec", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_subprocess_exit_code(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "splat4d.cli", "synth", "--spec", "/nonexistent.json",
             "--out", str(tmp_path / "o")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 2
        assert "error:" in proc.stderr


class TestInit:
    def test_prints_counts_and_reduction(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "seeds.i4d"
        ply = tmp_path / "seeds.ply"
        rc = main(
            ["init", "--bundle", str(bundle_dir), "--mode", "lite",
             "--out", str(out), "--ply", str(ply)]
        )
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "static seeds:" in stdout
        assert "reduction" in stdout
        model = load_checkpoint(out)
        assert model.n > 0
        assert ply.read_bytes().startswith(b"ply\n")
        report = json.loads(Path(f"{out}.report.json").read_text())
        assert report["n_gaussians"] == model.n
        assert 0.0 < report["static_reduction"] < 1.0
        assert set(report["timings"]) == {"init.densify", "init.grid_prune", "init.model"}

    def test_full_mode_keeps_dynamics_unpruned(self, bundle_dir, tmp_path):
        out = tmp_path / "full.i4d"
        rc = main(["init", "--bundle", str(bundle_dir), "--mode", "full", "--out", str(out)])
        assert rc == 0
        report = json.loads(Path(f"{out}.report.json").read_text())
        assert report["dynamic_after"] == report["dynamic_before"]

    def test_missing_bundle_exits_2(self, tmp_path):
        rc = main(["init", "--bundle", str(tmp_path / "missing"), "--out", str(tmp_path / "x.i4d")])
        assert rc == 2


class TestTrain:
    def test_zero_iters_checkpoint_equals_init(self, bundle_dir, init_ckpt, tmp_path):
        out = tmp_path / "trained.i4d"
        rc = main(
            ["train", "--bundle", str(bundle_dir), "--init", str(init_ckpt),
             "--iters", "0", "--out", str(out)]
        )
        assert rc == 0
        assert out.read_bytes() == init_ckpt.read_bytes()

    def test_progress_lines_and_report(self, bundle_dir, init_ckpt, tmp_path, capsys):
        out = tmp_path / "trained.i4d"
        rc = main(
            ["train", "--bundle", str(bundle_dir), "--init", str(init_ckpt),
             "--iters", "10", "--out", str(out)]
        )
        assert rc == 0
        lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("{")]
        records = [json.loads(ln) for ln in lines]
        assert records, "expected line-delimited JSON progress records"
        assert set(records[-1]) == {"iter", "loss", "psnr_train", "elapsed_s", "rss_mb"}
        report = json.loads(Path(f"{out}.report.json").read_text())
        for stage in ("optimize.forward", "optimize.backward", "total"):
            assert stage in report["stages"]

    def test_init_sidecar_timings_merged(self, bundle_dir, init_ckpt, tmp_path):
        out = tmp_path / "trained.i4d"
        rc = main(
            ["train", "--bundle", str(bundle_dir), "--init", str(init_ckpt),
             "--iters", "2", "--out", str(out)]
        )
        assert rc == 0
        report = json.loads(Path(f"{out}.report.json").read_text())
        assert "init.densify" in report["stages"]
        assert "init.grid_prune" in report["stages"]

    def test_nonfinite_model_exits_3(self, bundle_dir, tmp_path, capsys):
        bad_model = load_checkpoint_with_nan(tmp_path)
        rc = main(
            ["train", "--bundle", str(bundle_dir), "--init", str(bad_model),
             "--iters", "3", "--out", str(tmp_path / "x.i4d")]
        )
        assert rc == 3
        assert "training failed" in capsys.readouterr().err


def load_checkpoint_with_nan(tmp_path) -> Path:
    rng = np.random.default_rng(0)
    from splat4d.model import GaussianModel4D

    n = 4
    model = GaussianModel4D(
        mu=np.column_stack([rng.normal(0, 0.3, n), rng.normal(0, 0.3, n),
                            rng.uniform(2, 3, n), np.zeros(n)]),
        log_s_xyz=np.full(n, np.log(0.3)),
        log_s_t=np.zeros(n),
        opacity_logit=np.zeros(n),
        rgb=rng.uniform(0.2, 0.8, (n, 3)),
        is_dynamic=np.zeros(n, bool),
        video_length=4.0 / 30.0,
        fps=30.0,
    )
    model.rgb[0, 0] = np.nan
    path = tmp_path / "nan.i4d"
    save_checkpoint(model, path)
    return path


@pytest.fixture(scope="module")
def pose_file(bundle_dir, tmp_path_factory):
    manifest = json.loads((bundle_dir / "manifest.json").read_text())
    path = tmp_path_factory.mktemp("pose") / "pose.json"
    path.write_text(json.dumps({"matrix": manifest["frames"][0]["pose"]}))
    return path


class TestRender:
    def test_renders_png(self, init_ckpt, pose_file, tmp_path):
        out = tmp_path / "frame.png"
        rc = main(
            ["render", "--model", str(init_ckpt), "--pose", str(pose_file),
             "--t", "0.0", "--width", "48", "--height", "48", "--fov-y", "55",
             "--out", str(out)]
        )
        assert rc == 0
        img = read_png(out)
        assert img.shape == (48, 48, 3)
        assert img.max() > 0.05  # scene is actually visible

    def test_out_of_range_t_clamped_with_warning(self, init_ckpt, pose_file, tmp_path, capsys):
        out = tmp_path / "frame.png"
        rc = main(
            ["render", "--model", str(init_ckpt), "--pose", str(pose_file),
             "--t", "99.0", "--width", "32", "--height", "32", "--out", str(out)]
        )
        assert rc == 0
        assert "clamped" in capsys.readouterr().err

    def test_malformed_pose_exits_2(self, init_ckpt, tmp_path):
        bad = tmp_path / "pose.json"
        bad.write_text('{"matrix": [1, 2, 3]}')
        rc = main(
            ["render", "--model", str(init_ckpt), "--pose", str(bad),
             "--t", "0.0", "--out", str(tmp_path / "f.png")]
        )
        assert rc == 2
        bad.write_text("not json at all")
        rc = main(
            ["render", "--model", str(init_ckpt), "--pose", str(bad),
             "--t", "0.0", "--out", str(tmp_path / "f.png")]
        )
        assert rc == 2

    def test_flat_16_element_pose_accepted(self, init_ckpt, bundle_dir, tmp_path):
        manifest = json.loads((bundle_dir / "manifest.json").read_text())
        pose = tmp_path / "flat.json"
        pose.write_text(json.dumps(manifest["frames"][0]["pose"]))
        rc = main(
            ["render", "--model", str(init_ckpt), "--pose", str(pose),
             "--t", "0.0", "--width", "32", "--height", "32",
             "--out", str(tmp_path / "f.png")]
        )
        assert rc == 0


class TestEval:
    def test_eval_report_and_determinism(self, bundle_dir, init_ckpt, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert main(["eval", "--model", str(init_ckpt), "--bundle", str(bundle_dir),
                     "--out", str(a)]) == 0
        assert main(["eval", "--model", str(init_ckpt), "--bundle", str(bundle_dir),
                     "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        report = json.loads(a.read_text())
        assert set(report) == {
            "scene", "psnr", "ssim", "n_frames", "psnr_per_frame", "ssim_per_frame",
        }
        assert report["n_frames"] == 4
        assert np.isfinite(report["psnr"])

    def test_missing_model_exits_2(self, bundle_dir, tmp_path):
        rc = main(["eval", "--model", str(tmp_path / "no.i4d"), "--bundle", str(bundle_dir),
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2
