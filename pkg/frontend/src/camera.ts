/**
 * Orbit-camera state and pose math.
 *
 * The camera orbits a target point on a sphere parameterized by azimuth,
 * elevation, and radius:
 *
 *   eye = target + radius * [sin(az)*cos(el), sin(el), cos(az)*cos(el)]
 *
 * so azimuth 0 / elevation 0 places the eye on the +z side of the target.
 * World +y is image-down (the server's camera convention), which means
 * *negative* elevation raises the camera above the scene.
 *
 * The pose sent to the server is a camera-to-world matrix with columns
 * [right, down, forward]: +z looks at the target, +y points down in the
 * image. `lookAt` reproduces the server's own reference construction,
 * including the fixed-right fallback when the view direction is parallel
 * to the up reference, so poses here match server-side renders bit-for-bit.
 */

export type Vec3 = [number, number, number];

/** 4x4 camera-to-world matrix, row-major, length 16. */
export type Pose = number[];

export type ConnectionStatus = "connecting" | "connected" | "reconnecting" | "closed";

export interface FrameStats {
  /** Server-side render time for the last displayed frame, milliseconds. */
  renderMs: number;
  /** Gaussians surviving temporal culling in the last displayed frame. */
  survivors: number;
}

export interface ViewerState {
  target: Vec3;
  /** Radians; free-running (sin/cos are periodic). */
  azimuth: number;
  /** Radians; clamped inside (-pi/2, pi/2). */
  elevation: number;
  /** Orbit distance; always > 0. */
  radius: number;
  /** Playhead, seconds; clamped to [0, videoLength]. */
  t: number;
  playing: boolean;
  /** Playback rate multiplier (1 = real time). */
  rate: number;
  /** Clip length in seconds, from the server's /meta endpoint. */
  videoLength: number;
  status: ConnectionStatus;
  lastFrame: FrameStats | null;
}

/** Elevation is kept strictly inside (-pi/2, pi/2). */
export const ELEVATION_LIMIT = Math.PI / 2 - 1e-4;

/** Dolly never collapses the orbit radius to zero. */
export const MIN_RADIUS = 1e-3;

/**
 * Opening viewpoint: behind the scene on the -z side (azimuth pi), raised
 * slightly (negative elevation = up, since world +y is image-down), at a
 * distance matching a mid-arc inspection camera.
 */
export function defaultState(videoLength: number): ViewerState {
  return {
    target: [0, 0, 0],
    azimuth: Math.PI,
    elevation: -0.27,
    radius: 3.3,
    t: 0,
    playing: true,
    rate: 1,
    videoLength,
    status: "connecting",
    lastFrame: null,
  };
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

/**
 * Camera-to-world pose looking from `eye` to `target` (+z forward, +y image-down).
 *
 * When the view direction is parallel to the up reference (within 1e-9) the
 * right axis falls back to +x, keeping the pose well-defined at the poles.
 */
export function lookAt(eye: Vec3, target: Vec3, up: Vec3 = [0, 1, 0]): Pose {
  const f: Vec3 = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
  const fn = norm(f);
  if (fn < 1e-12) throw new Error("degenerate view: eye coincides with target");
  f[0] /= fn;
  f[1] /= fn;
  f[2] /= fn;
  let right = cross(up, f);
  const rn = norm(right);
  if (rn < 1e-9) {
    right = [1, 0, 0];
  } else {
    right = [right[0] / rn, right[1] / rn, right[2] / rn];
  }
  const down = cross(f, right);
  return [
    right[0], down[0], f[0], eye[0],
    right[1], down[1], f[1], eye[1],
    right[2], down[2], f[2], eye[2],
    0, 0, 0, 1,
  ];
}

/** Eye position of the orbit camera in world coordinates. */
export function eyePosition(state: ViewerState): Vec3 {
  const ce = Math.cos(state.elevation);
  const se = Math.sin(state.elevation);
  return [
    state.target[0] + state.radius * Math.sin(state.azimuth) * ce,
    state.target[1] + state.radius * se,
    state.target[2] + state.radius * Math.cos(state.azimuth) * ce,
  ];
}

/** Camera-to-world matrix for the current orbit state (row-major, 16 floats). */
export function cameraToPose(state: ViewerState): Pose {
  return lookAt(eyePosition(state), state.target);
}

export function clampElevation(elevation: number): number {
  return Math.min(ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, elevation));
}

/** Clamp a finite timestamp to [0, videoLength]; non-finite input is a caller bug. */
export function clampTime(t: number, videoLength: number): number {
  if (!Number.isFinite(t)) throw new Error("timestamp must be finite");
  return Math.min(videoLength, Math.max(0, t));
}

/** Rotate the camera around the target (left-drag). */
export function orbit(state: ViewerState, dAzimuth: number, dElevation: number): ViewerState {
  return {
    ...state,
    azimuth: state.azimuth + dAzimuth,
    elevation: clampElevation(state.elevation + dElevation),
  };
}

/** Scale the orbit radius (scroll); factor > 1 moves away from the target. */
export function dolly(state: ViewerState, factor: number): ViewerState {
  if (!(factor > 0)) throw new Error("dolly factor must be > 0");
  return { ...state, radius: Math.max(MIN_RADIUS, state.radius * factor) };
}

/**
 * Slide the target in the current image plane (right-drag): `dx` along the
 * camera's right axis, `dy` along its down axis, both in world units.
 */
export function pan(state: ViewerState, dx: number, dy: number): ViewerState {
  const m = cameraToPose(state);
  const right: Vec3 = [m[0]!, m[4]!, m[8]!];
  const down: Vec3 = [m[1]!, m[5]!, m[9]!];
  return {
    ...state,
    target: [
      state.target[0] + right[0] * dx + down[0] * dy,
      state.target[1] + right[1] * dx + down[1] * dy,
      state.target[2] + right[2] * dx + down[2] * dy,
    ],
  };
}

/** Jump the playhead to `tNew` (clamped into the clip). */
export function timelineScrub(state: ViewerState, tNew: number): ViewerState {
  return { ...state, t: clampTime(tNew, state.videoLength) };
}

/**
 * Advance the playhead by `dtSeconds` of wall time at the current rate,
 * wrapping at the clip end so playback loops. No-op while paused.
 */
export function advancePlayhead(state: ViewerState, dtSeconds: number): ViewerState {
  if (!state.playing) return state;
  if (!(state.videoLength > 0)) return { ...state, t: 0 };
  let t = (state.t + dtSeconds * state.rate) % state.videoLength;
  if (t < 0) t += state.videoLength;
  return { ...state, t };
}
