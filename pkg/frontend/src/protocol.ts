/**
 * Wire protocol for the frame-streaming socket (see docs/protocol.md in the
 * repository root; this module speaks it verbatim).
 *
 * Requests:  [u32 little-endian JSON length][UTF-8 JSON body]
 * Responses: 24-byte little-endian header
 *            [4s magic "I4DF"][u32 id][u32 status][f32 render_ms]
 *            [u32 survivors][u32 payload length]
 *            followed by the payload: a JPEG when status == 0, a UTF-8 JSON
 *            {"error": message} otherwise.
 */

export const RESPONSE_MAGIC = "I4DF";
export const HEADER_SIZE = 24;

export interface RenderRequest {
  /** Client-chosen correlation id; echoed back in the response header. */
  id: number;
  /** Camera-to-world matrix, 16 finite floats, row-major. */
  pose: number[];
  /** Timestamp in seconds; the server clamps it into the clip. */
  t: number;
  width: number;
  height: number;
  /** Vertical field of view in degrees; server default when omitted. */
  fovY?: number;
  /** JPEG quality 1-100; server default when omitted. */
  quality?: number;
}

export interface FrameResponse {
  id: number;
  /** 0 = frame, anything else = error. */
  status: number;
  renderMs: number;
  survivors: number;
  /** JPEG bytes when status == 0, raw error JSON otherwise. */
  payload: Uint8Array;
  /** Decoded error message when status != 0, else null. */
  error: string | null;
}

/** Serialize one render request as a length-prefixed JSON frame. */
export function encodeRequest(request: RenderRequest): Uint8Array {
  const body: Record<string, unknown> = {
    id: request.id,
    pose: request.pose,
    t: request.t,
    width: request.width,
    height: request.height,
  };
  if (request.fovY !== undefined) body.fov_y = request.fovY;
  if (request.quality !== undefined) body.quality = request.quality;
  const json = new TextEncoder().encode(JSON.stringify(body));
  const frame = new Uint8Array(4 + json.length);
  new DataView(frame.buffer).setUint32(0, json.length, true);
  frame.set(json, 4);
  return frame;
}

/** Parse one binary response frame; throws on malformed framing. */
export function decodeResponse(data: ArrayBuffer | Uint8Array): FrameResponse {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.length < HEADER_SIZE) {
    throw new Error(`response shorter than the ${HEADER_SIZE}-byte header`);
  }
  for (let i = 0; i < RESPONSE_MAGIC.length; i++) {
    if (bytes[i] !== RESPONSE_MAGIC.charCodeAt(i)) {
      throw new Error("response magic mismatch");
    }
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const id = view.getUint32(4, true);
  const status = view.getUint32(8, true);
  const renderMs = view.getFloat32(12, true);
  const survivors = view.getUint32(16, true);
  const payloadLength = view.getUint32(20, true);
  if (bytes.length !== HEADER_SIZE + payloadLength) {
    throw new Error(
      `payload length mismatch: header says ${payloadLength}, got ${bytes.length - HEADER_SIZE}`,
    );
  }
  const payload = bytes.slice(HEADER_SIZE);
  let error: string | null = null;
  if (status !== 0) {
    try {
      const parsed: unknown = JSON.parse(new TextDecoder().decode(payload));
      const message = (parsed as { error?: unknown }).error;
      error = typeof message === "string" ? message : "unknown server error";
    } catch {
      error = "unparseable server error";
    }
  }
  return { id, status, renderMs, survivors, payload, error };
}
