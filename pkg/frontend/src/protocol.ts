/**
 * Wire protocol shared with the guidance service.
 *
 * The server speaks JSON frames over one websocket per session. Every
 * accepted client frame is answered with a full "state" frame echoing the
 * client's sequence number; rejected frames get an "error" frame instead.
 */

export interface ImageBlob {
  w: number;
  h: number;
  b64: string; // little-endian float32 pixels, row-major
}

export interface StateFrame {
  type: "state";
  seq: number;
  pose: number[]; // [px, py, pz, qw, qx, qy, qz]
  image: ImageBlob;
  guidance: number[][]; // 10 x [tx, ty, tz, rx, ry, rz] (mm / deg)
  selected: number; // selected plane id, 1..10
  history_len: number;
  debug: { plane_dist: number[][] }; // 10 x [mm, deg] true distances
}

export interface ErrorFrame {
  type: "error";
  seq: number | null;
  code: string;
  msg: string;
}

export type ServerFrame = StateFrame | ErrorFrame;

export interface MoveMsg {
  type: "move";
  seq: number;
  delta: number[]; // [tx, ty, tz, rx, ry, rz]
}

export interface SelectPlaneMsg {
  type: "select_plane";
  seq: number;
  plane: number;
}

export interface ResetMsg {
  type: "reset";
  seq: number;
}

export type ClientMsg = MoveMsg | SelectPlaneMsg | ResetMsg;

export class MalformedFrameError extends Error {}

function isNumberArray(x: unknown, n?: number): x is number[] {
  return (
    Array.isArray(x) &&
    (n === undefined || x.length === n) &&
    x.every((v) => typeof v === "number" && Number.isFinite(v))
  );
}

/** Parse and validate one server frame; throws MalformedFrameError. */
export function parseServerFrame(text: string): ServerFrame {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new MalformedFrameError("frame is not JSON");
  }
  const f = raw as Record<string, unknown>;
  if (f === null || typeof f !== "object") {
    throw new MalformedFrameError("frame is not an object");
  }
  if (f.type === "error") {
    if (typeof f.code !== "string" || typeof f.msg !== "string") {
      throw new MalformedFrameError("error frame missing code/msg");
    }
    return {
      type: "error",
      seq: typeof f.seq === "number" ? f.seq : null,
      code: f.code,
      msg: f.msg,
    };
  }
  if (f.type !== "state") {
    throw new MalformedFrameError(`unknown frame type ${String(f.type)}`);
  }
  if (typeof f.seq !== "number" || !isNumberArray(f.pose, 7)) {
    throw new MalformedFrameError("state frame missing seq/pose");
  }
  const img = f.image as ImageBlob | undefined;
  if (
    !img ||
    typeof img.w !== "number" ||
    typeof img.h !== "number" ||
    typeof img.b64 !== "string"
  ) {
    throw new MalformedFrameError("state frame missing image");
  }
  const guidance = f.guidance as unknown;
  if (
    !Array.isArray(guidance) ||
    guidance.length !== 10 ||
    !guidance.every((row) => isNumberArray(row, 6))
  ) {
    throw new MalformedFrameError("guidance must be 10 six-vectors");
  }
  if (
    typeof f.selected !== "number" ||
    f.selected < 1 ||
    f.selected > 10 ||
    typeof f.history_len !== "number"
  ) {
    throw new MalformedFrameError("state frame missing selected/history_len");
  }
  const debug = f.debug as { plane_dist?: unknown } | undefined;
  if (
    !debug ||
    !Array.isArray(debug.plane_dist) ||
    debug.plane_dist.length !== 10 ||
    !debug.plane_dist.every((row) => isNumberArray(row, 2))
  ) {
    throw new MalformedFrameError("debug.plane_dist must be 10 pairs");
  }
  return f as unknown as StateFrame;
}

/** Base64 little-endian float32 payload -> pixel array (row-major). */
export function decodeImage(blob: ImageBlob): Float32Array {
  const bin = atob(blob.b64);
  const n = blob.w * blob.h;
  if (bin.length !== 4 * n) {
    throw new MalformedFrameError(
      `image payload is ${bin.length} bytes, expected ${4 * n}`,
    );
  }
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  const view = new DataView(bytes.buffer);
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = view.getFloat32(4 * i, true);
  return out;
}

export function moveMsg(seq: number, delta: number[]): MoveMsg {
  return { type: "move", seq, delta };
}

export function selectPlaneMsg(seq: number, plane: number): SelectPlaneMsg {
  return { type: "select_plane", seq, plane };
}

export function resetMsg(seq: number): ResetMsg {
  return { type: "reset", seq };
}
