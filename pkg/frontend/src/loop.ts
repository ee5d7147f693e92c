/**
 * Newest-wins request scheduling over the frame socket.
 *
 * Invariant: at most ONE unacknowledged request is ever outstanding. State
 * changes arriving while a render is in flight coalesce into a single
 * pending slot (latest wins); the pending request is sent the moment the
 * in-flight one is acknowledged. Ids increase monotonically, and only the
 * response matching the most recently sent id is ever displayed — anything
 * else is reported as stale and dropped. Everything runs on the browser's
 * single-threaded event loop; no locking is needed beyond the id check.
 */

import { cameraToPose, ViewerState } from "./camera.js";
import { decodeResponse, encodeRequest, FrameResponse } from "./protocol.js";

/** Minimal sending surface of a WebSocket (injectable for tests). */
export interface FrameSocket {
  send(data: Uint8Array): void;
}

/** What to render: canvas size plus optional encoding overrides. */
export interface RenderTarget {
  width: number;
  height: number;
  fovY?: number;
  quality?: number;
}

interface RequestBody {
  pose: number[];
  t: number;
  width: number;
  height: number;
  fovY?: number;
  quality?: number;
}

export interface LoopCallbacks {
  /** A displayable frame (status 0) matching the latest sent id. */
  onFrame(frame: FrameResponse): void;
  /** A server error frame for the latest id; the loop keeps running. */
  onError?(frame: FrameResponse): void;
  /** A response that no longer matches the latest sent id; never displayed. */
  onStale?(frame: FrameResponse): void;
}

export class RequestLoop {
  private socket: FrameSocket | null = null;
  private nextId = 1;
  private inFlightId: number | null = null;
  private pending: RequestBody | null = null;

  constructor(private readonly callbacks: LoopCallbacks) {}

  /** True while a request is unacknowledged. */
  get busy(): boolean {
    return this.inFlightId !== null;
  }

  /** Id of the most recently sent request (0 before the first send). */
  get latestId(): number {
    return this.nextId - 1;
  }

  /** Attach a (re)connected socket and flush any pending request. */
  attach(socket: FrameSocket): void {
    this.socket = socket;
    this.inFlightId = null;
    this.flushPending();
  }

  /** Drop the socket; an in-flight request will never be acknowledged. */
  detach(): void {
    this.socket = null;
    this.inFlightId = null;
  }

  /**
   * Request a render of `state` at the given target size. Sends immediately
   * when idle; otherwise overwrites the single pending slot.
   */
  request(state: ViewerState, target: RenderTarget): void {
    const body: RequestBody = {
      pose: cameraToPose(state),
      t: state.t,
      width: Math.max(1, Math.round(target.width)),
      height: Math.max(1, Math.round(target.height)),
    };
    if (target.fovY !== undefined) body.fovY = target.fovY;
    if (target.quality !== undefined) body.quality = target.quality;
    this.pending = body;
    if (this.socket !== null && this.inFlightId === null) this.flushPending();
  }

  /**
   * Feed one binary socket message through the loop. Decodes it, drops
   * stale ids, dispatches the display/error callback for the latest id, and
   * immediately sends the pending request if one accumulated. Returns the
   * decoded response (mainly for tests).
   */
  handleMessage(data: ArrayBuffer | Uint8Array): FrameResponse {
    const frame = decodeResponse(data);
    if (frame.id !== this.inFlightId) {
      this.callbacks.onStale?.(frame);
      return frame;
    }
    this.inFlightId = null;
    if (frame.status === 0) this.callbacks.onFrame(frame);
    else this.callbacks.onError?.(frame);
    this.flushPending();
    return frame;
  }

  private flushPending(): void {
    if (this.pending === null || this.socket === null || this.inFlightId !== null) return;
    const body = this.pending;
    this.pending = null;
    const id = this.nextId++;
    this.inFlightId = id;
    this.socket.send(
      encodeRequest({
        id,
        pose: body.pose,
        t: body.t,
        width: body.width,
        height: body.height,
        fovY: body.fovY,
        quality: body.quality,
      }),
    );
  }
}

/**
 * Exponential reconnect delays: base * 2^attempt, capped. `reset()` after a
 * successful connection starts the next outage from the base again.
 */
export class Backoff {
  private attempt = 0;

  constructor(
    readonly baseMs = 500,
    readonly maxMs = 10_000,
  ) {}

  nextDelay(): number {
    const delay = Math.min(this.maxMs, this.baseMs * 2 ** this.attempt);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}
