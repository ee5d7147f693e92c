"""Stream interactive renders over a WebSocket.

The render server wraps a trained model behind one endpoint (/ws) speaking
a small binary protocol: length-prefixed JSON requests in, 24-byte header
plus JPEG out (docs/protocol.md). Its backpressure rule is newest-wins —
a one-slot mailbox per client drops stale requests, so an interactive
viewer can stream camera motion without queue lag. This demo starts the
server and drives it once with a raw client to show the round trip.
"""

import io
import json
import struct
import threading
import time
from pathlib import Path

import numpy as np
import uvicorn

from splat4d.bundle import load_bundle
from splat4d.checkpoint import load_checkpoint
from splat4d.motion import compute_masks
from splat4d.seeding import init_from_bundle
from splat4d.server import HEADER_FORMAT, HEADER_SIZE, create_app
from splat4d.synthetic import generate_synthetic, reference_spec

out_dir = Path(__file__).parent / "demo_output"
ckpt = out_dir / "trained.i4d"
if ckpt.exists():
    model = load_checkpoint(ckpt)
    print(f"serving {ckpt}")
else:
    bundle_dir = out_dir / "bundle"
    bundle = (load_bundle(bundle_dir) if bundle_dir.exists()
              else generate_synthetic(reference_spec(96, 96, 12, 30.0), seed=0)[0])
    masks, _ = compute_masks(list(bundle.motion), bundle.size)
    model, _ = init_from_bundle(bundle, masks)
    print("serving an untrained init model (run demo 05 for a trained one)")

app = create_app(model)
server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=8765, log_level="error"))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)
print("server up at ws://127.0.0.1:8765/ws (page at http://127.0.0.1:8765/)")

# --- a minimal raw client: one request, one frame -------------------------
from starlette.testclient import TestClient

pose = np.eye(4)
pose[2, 3] = -0.4  # step the camera slightly back from the origin
request = {
    "id": 1,
    "pose": pose.reshape(-1).tolist(),
    "t": 0.5 * model.video_length,
    "width": 320,
    "height": 240,
    "quality": 90,
}
payload = json.dumps(request).encode()

with TestClient(app) as client:
    with client.websocket_connect("/ws") as ws:
        ws.send_bytes(struct.pack("<I", len(payload)) + payload)
        reply = ws.receive_bytes()

magic, req_id, status, render_ms, survivors, n = struct.unpack(
    HEADER_FORMAT, reply[:HEADER_SIZE]
)
print(f"\nresponse: magic={magic!r} id={req_id} status={status} "
      f"render={render_ms:.1f}ms survivors={survivors} payload={n} bytes")

jpeg = reply[HEADER_SIZE:]
(out_dir / "served_frame.jpg").write_bytes(jpeg)
print(f"wrote {out_dir / 'served_frame.jpg'}")

from PIL import Image

img = Image.open(io.BytesIO(jpeg))
print(f"decoded JPEG: {img.size[0]}x{img.size[1]} {img.mode}")

server.should_exit = True
thread.join(timeout=5)
print("\nserver stopped; `splat4d serve --model <ckpt>` runs it standalone")
