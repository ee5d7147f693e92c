/**
 * Browser entry point: wires the orbit camera, playback clock, and
 * newest-wins request loop to the DOM.
 *
 *   left-drag  = orbit     scroll = dolly     right-drag = pan
 *   slider     = scrub     space / button = play-pause (loops by default)
 *
 * All rendering happens server-side; this page only decodes the streamed
 * JPEG frames onto a canvas. Input handling never waits on the network:
 * events mutate local state and poke the request loop, which keeps at most
 * one request in flight and coalesces everything else.
 */

import {
  advancePlayhead,
  clampTime,
  defaultState,
  dolly,
  orbit,
  pan,
  timelineScrub,
  ViewerState,
  ConnectionStatus,
} from "./camera.js";
import { Backoff, RequestLoop } from "./loop.js";
import { FrameResponse } from "./protocol.js";

interface SceneMeta {
  video_length: number;
  fps: number;
  n_gaussians: number;
  mode: string;
}

const ORBIT_RADIANS_PER_PIXEL = 0.005;
const DOLLY_PER_WHEEL_TICK = 0.0012;
const JPEG_QUALITY = 85;
const FOV_Y_DEGREES = 60; // server default; also used for pan scaling
const MAX_CANVAS_PIXELS = 2_000_000; // stay well under the server's request cap

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d");
if (ctx === null) throw new Error("2d canvas context unavailable");

const statusDot = byId<HTMLSpanElement>("status-dot");
const statusText = byId<HTMLSpanElement>("status-text");
const hudRender = byId<HTMLSpanElement>("hud-render");
const hudSurvivors = byId<HTMLSpanElement>("hud-survivors");
const hudScene = byId<HTMLSpanElement>("hud-scene");
const hudError = byId<HTMLDivElement>("hud-error");
const timeLabel = byId<HTMLSpanElement>("time-label");
const slider = byId<HTMLInputElement>("timeline");
const playButton = byId<HTMLButtonElement>("play");
const rateSelect = byId<HTMLSelectElement>("rate");

let state: ViewerState = defaultState(1);

function setStatus(status: ConnectionStatus): void {
  state = { ...state, status };
  statusText.textContent = status;
  statusDot.dataset.status = status;
}

function updateHud(): void {
  const stats = state.lastFrame;
  hudRender.textContent = stats === null ? "–" : `${stats.renderMs.toFixed(1)} ms`;
  hudSurvivors.textContent = stats === null ? "–" : String(stats.survivors);
  timeLabel.textContent = `${state.t.toFixed(2)} / ${state.videoLength.toFixed(2)} s`;
  if (document.activeElement !== slider) slider.value = String(state.t);
}

const loop = new RequestLoop({
  onFrame(frame: FrameResponse) {
    state = { ...state, lastFrame: { renderMs: frame.renderMs, survivors: frame.survivors } };
    hudError.textContent = "";
    // decodeResponse copies the payload, so its backing buffer is exactly
    // the JPEG bytes (and never a SharedArrayBuffer).
    const jpeg = frame.payload.buffer as ArrayBuffer;
    void createImageBitmap(new Blob([jpeg], { type: "image/jpeg" })).then((bitmap) => {
      ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
      bitmap.close();
    });
    updateHud();
  },
  onError(frame: FrameResponse) {
    hudError.textContent = frame.error ?? "server error";
  },
});

function requestFrame(): void {
  loop.request(state, { width: canvas.width, height: canvas.height, quality: JPEG_QUALITY });
}

function resizeCanvas(): void {
  let w = Math.max(1, canvas.clientWidth);
  let h = Math.max(1, canvas.clientHeight);
  const scale = Math.sqrt(MAX_CANVAS_PIXELS / (w * h));
  if (scale < 1) {
    w = Math.floor(w * scale);
    h = Math.floor(h * scale);
  }
  if (w !== canvas.width || h !== canvas.height) {
    canvas.width = w;
    canvas.height = h;
    requestFrame();
  }
}

// --- pointer input: left-drag orbit, right-drag pan, wheel dolly ---------

let dragMode: "orbit" | "pan" | null = null;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("contextmenu", (e) => e.preventDefault());

canvas.addEventListener("pointerdown", (e) => {
  dragMode = e.button === 2 ? "pan" : "orbit";
  lastX = e.clientX;
  lastY = e.clientY;
  canvas.setPointerCapture(e.pointerId);
});

canvas.addEventListener("pointermove", (e) => {
  if (dragMode === null) return;
  const dx = e.clientX - lastX;
  const dy = e.clientY - lastY;
  lastX = e.clientX;
  lastY = e.clientY;
  if (dragMode === "orbit") {
    // Dragging up raises the camera: world +y is image-down, so up means
    // decreasing elevation.
    state = orbit(state, dx * ORBIT_RADIANS_PER_PIXEL, dy * ORBIT_RADIANS_PER_PIXEL);
  } else {
    const worldPerPixel =
      (2 * state.radius * Math.tan(((FOV_Y_DEGREES / 2) * Math.PI) / 180)) /
      Math.max(1, canvas.clientHeight);
    state = pan(state, -dx * worldPerPixel, -dy * worldPerPixel);
  }
  requestFrame();
});

canvas.addEventListener("pointerup", (e) => {
  dragMode = null;
  canvas.releasePointerCapture(e.pointerId);
});

canvas.addEventListener(
  "wheel",
  (e) => {
    e.preventDefault();
    state = dolly(state, Math.exp(e.deltaY * DOLLY_PER_WHEEL_TICK));
    requestFrame();
  },
  { passive: false },
);

// --- timeline: scrub, play/pause, rate ------------------------------------

slider.addEventListener("input", () => {
  state = timelineScrub(state, Number(slider.value));
  updateHud();
  requestFrame(); // immediate request on scrub
});

function setPlaying(playing: boolean): void {
  state = { ...state, playing };
  playButton.textContent = playing ? "pause" : "play";
}

playButton.addEventListener("click", () => setPlaying(!state.playing));
document.addEventListener("keydown", (e) => {
  if (e.code === "Space" && document.activeElement === document.body) {
    e.preventDefault();
    setPlaying(!state.playing);
  }
});

rateSelect.addEventListener("change", () => {
  state = { ...state, rate: Number(rateSelect.value) };
});

let lastTick: number | null = null;
function tick(nowMs: number): void {
  if (lastTick !== null && state.playing && state.status === "connected") {
    state = advancePlayhead(state, (nowMs - lastTick) / 1000);
    updateHud();
    requestFrame();
  }
  lastTick = nowMs;
  requestAnimationFrame(tick);
}

// --- connection management -------------------------------------------------

const backoff = new Backoff();

function connect(): void {
  const socket = new WebSocket(`ws://${location.host}/ws`);
  socket.binaryType = "arraybuffer";
  socket.onopen = () => {
    setStatus("connected");
    backoff.reset();
    loop.attach({ send: (data) => socket.send(data) });
    requestFrame();
  };
  socket.onmessage = (e: MessageEvent<ArrayBuffer>) => {
    loop.handleMessage(e.data);
  };
  socket.onclose = () => {
    loop.detach();
    setStatus("reconnecting");
    setTimeout(connect, backoff.nextDelay());
  };
}

async function fetchMeta(): Promise<SceneMeta> {
  const response = await fetch("/meta");
  if (!response.ok) throw new Error(`GET /meta failed: ${response.status}`);
  return (await response.json()) as SceneMeta;
}

async function start(): Promise<void> {
  setStatus("connecting");
  let meta: SceneMeta;
  try {
    meta = await fetchMeta();
  } catch {
    meta = { video_length: 1, fps: 30, n_gaussians: 0, mode: "?" };
  }
  state = {
    ...defaultState(Math.max(meta.video_length, 1e-6)),
    t: clampTime(0, meta.video_length),
  };
  hudScene.textContent = `${meta.n_gaussians.toLocaleString()} gaussians · ${meta.mode}`;
  slider.max = String(state.videoLength);
  slider.step = String(state.videoLength / 500);
  setPlaying(true);
  resizeCanvas();
  window.addEventListener("resize", resizeCanvas);
  connect();
  requestAnimationFrame(tick);
}

void start();
