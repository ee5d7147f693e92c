"""WebSocket render service: length-prefixed JSON in, JPEG frames out.

Protocol (documented in docs/protocol.md):

Requests arrive as binary WebSocket messages holding a 4-byte little-endian
payload length followed by exactly that many bytes of UTF-8 JSON:

    {"id": int, "pose": [16 row-major camera-to-world floats] | 4x4 nested,
     "t": seconds, "width": px, "height": px,
     "fov_y": degrees (optional, default 60),
     "quality": JPEG quality 1-100 (optional, default 85)}

Responses are binary messages with a 24-byte little-endian header followed
by the payload:

    offset 0   4s  magic b"I4DF"
    offset 4   u32 request id (echoed; 0 if the id could not be parsed)
    offset 8   u32 status: 0 = frame (payload is JPEG), 1 = error (payload
               is UTF-8 JSON {"error": message})
    offset 12  f32 render time in milliseconds (0 for errors)
    offset 16  u32 Gaussian count surviving temporal culling (0 for errors)
    offset 20  u32 payload byte length

Backpressure is newest-wins per client: while a render is in flight, newly
arrived requests overwrite a one-slot mailbox, so at most one render runs
per client and the latest request is always the next one served. Renders
from all clients share one worker so compiled kernels never launch
concurrently; the kernels themselves parallelize internally across the
cores allowed by I4D_THREADS. The model snapshot is immutable for the
server's lifetime, and the render path is the same `rasterizer.render`
used by the offline CLI.
"""

from __future__ import annotations

import asyncio
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .formats import encode_jpeg
from .geometry import Intrinsics, PoseSE3
from .model import GaussianModel4D
from .rasterizer import render

MAGIC = b"I4DF"
HEADER_FORMAT = "<4sIIfII"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
STATUS_FRAME = 0
STATUS_ERROR = 1
MAX_PIXELS = 4_194_304
DEFAULT_FOV_Y = 60.0
DEFAULT_QUALITY = 85

assert HEADER_SIZE == 24


class RequestError(ValueError):
    """Malformed or out-of-bounds render request; carries the request id."""

    def __init__(self, message: str, request_id: int = 0):
        super().__init__(message)
        self.request_id = request_id


def pack_response(
    request_id: int, status: int, render_ms: float, survivors: int, payload: bytes
) -> bytes:
    header = struct.pack(
        HEADER_FORMAT, MAGIC, request_id, status, render_ms, survivors, len(payload)
    )
    return header + payload


def error_response(message: str, request_id: int = 0) -> bytes:
    payload = json.dumps({"error": message}).encode()
    return pack_response(request_id, STATUS_ERROR, 0.0, 0, payload)


def parse_request(raw: bytes) -> dict:
    """Decode one length-prefixed JSON request, validating every field."""
    if len(raw) < 4:
        raise RequestError(f"message of {len(raw)} bytes is shorter than the length prefix")
    (n,) = struct.unpack_from("<I", raw, 0)
    if len(raw) != 4 + n:
        raise RequestError(
            f"length prefix says {n} payload bytes but message carries {len(raw) - 4}"
        )
    try:
        data = json.loads(raw[4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RequestError(f"payload is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise RequestError("request must be a JSON object")

    request_id = data.get("id")
    if not isinstance(request_id, int) or request_id < 0:
        raise RequestError("request needs a non-negative integer 'id'")

    def fail(msg: str) -> RequestError:
        return RequestError(msg, request_id)

    if "pose" not in data:
        raise fail("request needs a 'pose' (16 row-major camera-to-world floats)")
    pose = np.asarray(data["pose"], dtype=np.float64)
    if pose.size != 16:
        raise fail(f"pose must have 16 elements, got {pose.size}")
    if not np.all(np.isfinite(pose)):
        raise fail("pose contains non-finite values")

    if "t" not in data or not isinstance(data["t"], (int, float)):
        raise fail("request needs a numeric 't' (seconds)")

    width = data.get("width")
    height = data.get("height")
    if not isinstance(width, int) or not isinstance(height, int) or width < 1 or height < 1:
        raise fail("request needs positive integer 'width' and 'height'")
    if width * height > MAX_PIXELS:
        raise fail(f"resolution {width}x{height} exceeds the {MAX_PIXELS}-pixel limit")

    quality = data.get("quality", DEFAULT_QUALITY)
    if not isinstance(quality, int) or not 1 <= quality <= 100:
        raise fail("quality must be an integer in [1, 100]")

    fov_y = data.get("fov_y", DEFAULT_FOV_Y)
    if not isinstance(fov_y, (int, float)) or not 0.0 < fov_y < 180.0:
        raise fail("fov_y must be in (0, 180) degrees")

    return {
        "id": request_id,
        "pose": pose.reshape(4, 4),
        "t": float(data["t"]),
        "width": width,
        "height": height,
        "quality": quality,
        "fov_y": float(fov_y),
    }


def render_response(model: GaussianModel4D, request: dict) -> bytes:
    """Render one validated request into a packed frame response."""
    pose = PoseSE3.from_matrix(request["pose"])
    t = min(max(request["t"], 0.0), model.video_length)
    intrinsics = Intrinsics.from_fov_y(request["fov_y"], request["width"], request["height"])
    frame = render(model, pose, intrinsics, t)
    payload = encode_jpeg(frame.rgb, quality=request["quality"])
    render_ms = max(float(frame.meta["render_ms"]), 1e-3)
    return pack_response(
        request["id"], STATUS_FRAME, render_ms, int(frame.meta["survivor_count"]), payload
    )


_PLACEHOLDER_PAGE = """<!DOCTYPE html>
<html>
<head><title>splat4d</title></head>
<body style="font-family: sans-serif; max-width: 40em; margin: 4em auto;">
<h1>splat4d render service</h1>
<p>The interactive viewer has not been built. Build it with:</p>
<pre>cd frontend &amp;&amp; npm install &amp;&amp; npm run build</pre>
<p>then restart the server. The frame-streaming WebSocket endpoint is live
at <code>/ws</code>; its protocol is documented in
<code>docs/protocol.md</code>.</p>
</body>
</html>
"""


def create_app(model: GaussianModel4D, assets_dir: str | Path | None = None) -> FastAPI:
    """Build the service: static viewer at /, frame streaming at /ws."""
    app = FastAPI(title="splat4d render service")
    executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="splat4d-render")
    app.state.model = model
    app.state.executor = executor

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        mailbox: list[bytes | None] = [None]
        arrived = asyncio.Event()
        closed = False

        async def receive_latest() -> None:
            nonlocal closed
            try:
                while True:
                    message = await ws.receive()
                    if message["type"] == "websocket.disconnect":
                        break
                    raw = message.get("bytes")
                    if raw is None:
                        # text frames are not part of the protocol
                        raw = b""
                    mailbox[0] = raw
                    arrived.set()
            except (WebSocketDisconnect, RuntimeError):
                pass
            finally:
                closed = True
                arrived.set()

        receiver = asyncio.ensure_future(receive_latest())
        loop = asyncio.get_running_loop()
        try:
            while True:
                await arrived.wait()
                arrived.clear()
                if closed:
                    break
                raw = mailbox[0]
                mailbox[0] = None
                if raw is None:
                    continue
                try:
                    request = parse_request(raw)
                except RequestError as exc:
                    await ws.send_bytes(error_response(str(exc), exc.request_id))
                    continue
                response = await loop.run_in_executor(
                    executor, render_response, app.state.model, request
                )
                await ws.send_bytes(response)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            receiver.cancel()

    @app.get("/meta")
    async def meta() -> dict:
        m = app.state.model
        return {
            "video_length": m.video_length,
            "fps": m.fps,
            "n_gaussians": m.n,
            "mode": m.mode,
        }

    assets = Path(assets_dir) if assets_dir is not None else None
    if assets is not None and (assets / "index.html").is_file():
        app.mount("/", StaticFiles(directory=assets, html=True), name="viewer")
    else:

        @app.get("/")
        async def placeholder() -> HTMLResponse:
            return HTMLResponse(_PLACEHOLDER_PAGE)

    return app
