"""Websocket render-server tests: framing, validation, backpressure, identity."""

import io
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from starlette.testclient import TestClient

from splat4d.formats import encode_jpeg
from splat4d.geometry import Intrinsics, PoseSE3
from splat4d.model import GaussianModel4D, inverse_sigmoid
from splat4d.rasterizer import render
from splat4d.server import (
    HEADER_FORMAT,
    HEADER_SIZE,
    MAGIC,
    MAX_PIXELS,
    STATUS_ERROR,
    STATUS_FRAME,
    create_app,
    parse_request,
    render_response,
)

FPS = 30.0
VIDEO_LENGTH = 8 / FPS


def single_gaussian_model() -> GaussianModel4D:
    return GaussianModel4D(
        mu=np.array([[0.0, 0.0, 2.5, 0.0]]),
        log_s_xyz=np.array([np.log(0.25)]),
        log_s_t=np.array([np.log(2.0 / FPS)]),
        opacity_logit=np.array([inverse_sigmoid(0.9)]),
        rgb=np.array([[0.9, 0.4, 0.2]]),
        is_dynamic=np.array([False]),
        video_length=VIDEO_LENGTH,
        fps=FPS,
    )


def cluster_model(n: int = 20, seed: int = 11) -> GaussianModel4D:
    rng = np.random.default_rng(seed)
    return GaussianModel4D(
        mu=np.column_stack([
            rng.normal(0.0, 0.4, n),
            rng.normal(0.0, 0.4, n),
            rng.uniform(2.0, 3.0, n),
            rng.uniform(0.0, VIDEO_LENGTH, n),
        ]),
        log_s_xyz=np.log(rng.uniform(0.1, 0.3, n)),
        log_s_t=np.log(rng.uniform(0.02, 0.1, n)),
        opacity_logit=inverse_sigmoid(rng.uniform(0.4, 0.9, n)),
        rgb=rng.uniform(0.1, 0.9, (n, 3)),
        is_dynamic=rng.random(n) < 0.5,
        video_length=VIDEO_LENGTH,
        fps=FPS,
    )


IDENTITY_POSE = np.eye(4).reshape(-1).tolist()


def make_request(request_id: int, *, pose=None, t=0.0, width=64, height=64, **extra) -> bytes:
    body = {"id": request_id, "pose": pose or IDENTITY_POSE, "t": t,
            "width": width, "height": height}
    body.update(extra)
    payload = json.dumps(body).encode()
    return struct.pack("<I", len(payload)) + payload


def unpack_header(data: bytes):
    magic, request_id, status, render_ms, survivors, payload_len = struct.unpack(
        HEADER_FORMAT, data[:HEADER_SIZE]
    )
    assert len(data) == HEADER_SIZE + payload_len
    return {
        "magic": magic,
        "id": request_id,
        "status": status,
        "render_ms": render_ms,
        "survivors": survivors,
        "payload": data[HEADER_SIZE:],
    }


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app(cluster_model())) as c:
        yield c


class TestFraming:
    def test_frame_response_magic_id_and_jpeg(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(make_request(7, width=48, height=40))
            reply = unpack_header(ws.receive_bytes())
        assert reply["magic"] == MAGIC
        assert reply["id"] == 7
        assert reply["status"] == STATUS_FRAME
        assert reply["render_ms"] > 0
        img = Image.open(io.BytesIO(reply["payload"]))
        assert img.size == (48, 40)
        assert img.mode == "RGB"

    def test_single_gaussian_survivor_count(self):
        with TestClient(create_app(single_gaussian_model())) as c:
            with c.websocket_connect("/ws") as ws:
                ws.send_bytes(make_request(1, t=0.0))
                reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_FRAME
        assert reply["survivors"] == 1

    def test_served_bytes_match_direct_render(self):
        model = cluster_model(seed=3)
        pose = PoseSE3.from_matrix(np.eye(4))
        intrinsics = Intrinsics.from_fov_y(60.0, 64, 64)
        frame = render(model, pose, intrinsics, t=0.01)
        expected = encode_jpeg(frame.rgb, quality=85)
        with TestClient(create_app(model)) as c:
            with c.websocket_connect("/ws") as ws:
                ws.send_bytes(make_request(2, t=0.01))
                reply = unpack_header(ws.receive_bytes())
        assert reply["payload"] == expected

    def test_default_fov_overridable(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(make_request(3, fov_y=100.0))
            wide = unpack_header(ws.receive_bytes())
            ws.send_bytes(make_request(4, fov_y=30.0))
            narrow = unpack_header(ws.receive_bytes())
        assert wide["status"] == narrow["status"] == STATUS_FRAME
        assert wide["payload"] != narrow["payload"]


class TestValidation:
    @pytest.mark.parametrize(
        "raw",
        [
            b"\x01",  # shorter than the length prefix
            struct.pack("<I", 999) + b"{}",  # prefix disagrees with payload
            struct.pack("<I", 9) + b"not jso{}",  # not JSON
            struct.pack("<I", 2) + b"[]",  # JSON but not an object
        ],
    )
    def test_malformed_frames_yield_error_id_0(self, client, raw):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(raw)
            reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_ERROR
        assert reply["id"] == 0
        assert "error" in json.loads(reply["payload"])

    def test_missing_pose_echoes_id(self, client):
        payload = json.dumps({"id": 41, "t": 0.0, "width": 32, "height": 32}).encode()
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(struct.pack("<I", len(payload)) + payload)
            reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_ERROR
        assert reply["id"] == 41

    def test_text_frame_is_an_error(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_text("hello")
            reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_ERROR

    def test_oversize_image_rejected(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(make_request(55, width=4096, height=4096))
            reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_ERROR
        assert reply["id"] == 55
        assert str(MAX_PIXELS) in json.loads(reply["payload"])["error"]

    def test_bad_quality_rejected(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(make_request(56, quality=0))
            reply = unpack_header(ws.receive_bytes())
        assert reply["status"] == STATUS_ERROR

    def test_out_of_range_t_clamps_to_video_length(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.send_bytes(make_request(60, t=1e9))
            huge = unpack_header(ws.receive_bytes())
            ws.send_bytes(make_request(61, t=VIDEO_LENGTH))
            end = unpack_header(ws.receive_bytes())
        assert huge["status"] == STATUS_FRAME
        assert huge["payload"] == end["payload"]

    def test_parse_request_pose_shape(self):
        msg = make_request(1, pose=[1.0] * 12)
        from splat4d.server import RequestError

        with pytest.raises(RequestError, match="16"):
            parse_request(msg)

    def test_parse_request_nonfinite_pose(self):
        pose = [1.0] * 16
        pose[5] = float("nan")
        with pytest.raises(Exception, match="finite"):
            parse_request(make_request(1, pose=pose))


class TestBackpressure:
    def test_burst_drops_stale_requests_newest_wins(self, client):
        n_burst = 50
        last_id = 1000 + n_burst - 1
        with client.websocket_connect("/ws") as ws:
            for i in range(n_burst):
                ws.send_bytes(make_request(1000 + i, width=96, height=96))
            seen = []
            while True:
                reply = unpack_header(ws.receive_bytes())
                assert reply["status"] == STATUS_FRAME
                seen.append(reply["id"])
                if reply["id"] == last_id:
                    break
        assert seen[-1] == last_id
        assert seen == sorted(seen), "responses must preserve request order"
        assert len(set(seen)) == len(seen), "no request may be answered twice"
        assert len(seen) < n_burst, "a 50-deep burst must drop stale requests"

    def test_two_clients_render_independently(self):
        model = single_gaussian_model()
        with TestClient(create_app(model)) as c:
            with c.websocket_connect("/ws") as ws_a, c.websocket_connect("/ws") as ws_b:
                ws_a.send_bytes(make_request(1, t=0.0))
                ws_b.send_bytes(make_request(2, t=VIDEO_LENGTH))
                reply_a = unpack_header(ws_a.receive_bytes())
                reply_b = unpack_header(ws_b.receive_bytes())
        assert reply_a["survivors"] == 1
        assert reply_b["survivors"] == 0  # temporal opacity decayed below epsilon


class TestMeta:
    def test_meta_reports_scene_facts(self, client):
        meta = client.get("/meta")
        assert meta.status_code == 200
        body = meta.json()
        assert body["video_length"] == pytest.approx(VIDEO_LENGTH)
        assert body["fps"] == FPS
        assert body["n_gaussians"] == 20
        assert body["mode"] == "lite"

    def test_meta_available_with_assets_mounted(self, tmp_path):
        (tmp_path / "index.html").write_text("<!doctype html>x")
        with TestClient(create_app(cluster_model(), assets_dir=tmp_path)) as c:
            assert c.get("/meta").status_code == 200
            assert "video_length" in c.get("/meta").json()


class TestStaticAssets:
    def test_placeholder_page_without_viewer_build(self):
        with TestClient(create_app(cluster_model())) as c:
            page = c.get("/")
        assert page.status_code == 200
        assert "viewer" in page.text.lower()

    def test_viewer_dist_served_when_present(self, tmp_path):
        (tmp_path / "index.html").write_text("<!doctype html><title>v</title>real viewer")
        (tmp_path / "app.js").write_text("console.log(1)")
        with TestClient(create_app(cluster_model(), assets_dir=tmp_path)) as c:
            page = c.get("/")
            js = c.get("/app.js")
        assert "real viewer" in page.text
        assert js.status_code == 200


class TestRenderResponse:
    def test_render_ms_and_survivors_populated(self):
        model = cluster_model()
        request = parse_request(make_request(9, t=0.0))
        header = unpack_header(render_response(model, request))
        assert header["id"] == 9
        assert header["render_ms"] > 0.0
        assert 0 < header["survivors"] <= model.n


BUILT_VIEWER = Path(__file__).resolve().parents[1] / "frontend" / "dist"


@pytest.mark.skipif(
    not (BUILT_VIEWER / "index.html").is_file(),
    reason="viewer not built (frontend/dist absent); the suite must pass without it",
)
class TestBuiltViewer:
    """Wire-up checks that only run when `npm run build` has produced dist/."""

    def test_built_page_and_modules_served(self):
        with TestClient(create_app(cluster_model(), assets_dir=BUILT_VIEWER)) as c:
            page = c.get("/")
            assert page.status_code == 200
            assert "<canvas" in page.text
            assert 'src="./main.js"' in page.text
            for module in ("main.js", "camera.js", "protocol.js", "loop.js"):
                asset = c.get(f"/{module}")
                assert asset.status_code == 200, module
                assert "javascript" in asset.headers["content-type"]
                assert len(asset.content) > 100

    def test_meta_not_shadowed_by_static_mount(self):
        with TestClient(create_app(cluster_model(), assets_dir=BUILT_VIEWER)) as c:
            assert c.get("/meta").json()["n_gaussians"] == 20
