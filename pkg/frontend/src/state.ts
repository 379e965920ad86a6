/**
 * Client-side session state as a pure reducer.
 *
 * The UI never predicts: the rendered pose/image always come from the last
 * server "state" frame, and server frames with non-increasing sequence
 * numbers are dropped. Input handlers only build outgoing messages and bump
 * the outgoing sequence counter.
 */

import {
  ClientMsg,
  MalformedFrameError,
  StateFrame,
  moveMsg,
  parseServerFrame,
  resetMsg,
  selectPlaneMsg,
} from "./protocol.js";

export type Connection = "connecting" | "open" | "closed";

export interface ClientState {
  connection: Connection;
  frame: StateFrame | null; // latest accepted server state
  selected: number; // plane the user asked for (server echoes it back)
  stepMm: number; // translation per keypress
  stepDeg: number; // rotation per keypress
  lastServerSeq: number; // highest state-frame seq accepted
  nextSeq: number; // next outgoing message seq
  moves: number[][]; // history of own deltas, oldest first
  banner: string | null; // current error banner, if any
  showDebug: boolean;
}

export const DEFAULT_STEP_MM = 2.0;
export const DEFAULT_STEP_DEG = 2.0;

export function initialState(): ClientState {
  return {
    connection: "connecting",
    frame: null,
    selected: 1,
    stepMm: DEFAULT_STEP_MM,
    stepDeg: DEFAULT_STEP_DEG,
    lastServerSeq: -1,
    nextSeq: 1, // the server's unsolicited initial frame uses seq 0
    moves: [],
    banner: null,
    showDebug: false,
  };
}

/** Fold one raw websocket text frame into the state. */
export function onServerText(s: ClientState, text: string): ClientState {
  let frame;
  try {
    frame = parseServerFrame(text);
  } catch (e) {
    if (e instanceof MalformedFrameError) {
      return { ...s, banner: `malformed frame: ${e.message}` };
    }
    throw e;
  }
  if (frame.type === "error") {
    return { ...s, banner: `${frame.code}: ${frame.msg}` };
  }
  if (frame.seq <= s.lastServerSeq) {
    return s; // stale or duplicated frame; sequence numbers must be monotone
  }
  return {
    ...s,
    frame,
    selected: frame.selected,
    lastServerSeq: frame.seq,
    banner: null,
  };
}

export function onOpen(s: ClientState): ClientState {
  return { ...s, connection: "open", banner: null };
}

export function onClose(s: ClientState): ClientState {
  return { ...s, connection: "closed", banner: "disconnected - reconnecting" };
}

export interface Emit {
  state: ClientState;
  msg: ClientMsg | null;
}

const noEmit = (s: ClientState): Emit => ({ state: s, msg: null });

/** axis 0..2 translation (mm), 3..5 rotation (deg); sign is +1 or -1. */
export function makeMove(s: ClientState, axis: number, sign: number): Emit {
  if (s.connection !== "open" || axis < 0 || axis > 5) return noEmit(s);
  const delta = [0, 0, 0, 0, 0, 0];
  delta[axis] = sign * (axis < 3 ? s.stepMm : s.stepDeg);
  const msg = moveMsg(s.nextSeq, delta);
  return {
    state: { ...s, nextSeq: s.nextSeq + 1, moves: [...s.moves, delta] },
    msg,
  };
}

export function makeSelectPlane(s: ClientState, plane: number): Emit {
  if (s.connection !== "open" || plane < 1 || plane > 10) return noEmit(s);
  const msg = selectPlaneMsg(s.nextSeq, plane);
  return { state: { ...s, nextSeq: s.nextSeq + 1, selected: plane }, msg };
}

export function makeReset(s: ClientState): Emit {
  if (s.connection !== "open") return noEmit(s);
  const msg = resetMsg(s.nextSeq);
  return { state: { ...s, nextSeq: s.nextSeq + 1, moves: [] }, msg };
}

export function setStepSizes(s: ClientState, mm: number, deg: number): ClientState {
  return { ...s, stepMm: mm, stepDeg: deg };
}

/** Keyboard layout: one key per signed degree of freedom. */
export const KEY_BINDINGS: Record<string, [number, number]> = {
  d: [0, +1], // +x (right)
  a: [0, -1],
  w: [1, +1], // +y (up)
  s: [1, -1],
  e: [2, +1], // +z (out of plane)
  q: [2, -1],
  l: [3, +1], // +rx
  j: [3, -1],
  i: [4, +1], // +ry
  k: [4, -1],
  o: [5, +1], // +rz
  u: [5, -1],
};
