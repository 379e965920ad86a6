/** Application wiring: socket, keyboard/slider input, and render loop. */

import { drawOverlay, drawSlice } from "./render.js";
import { GuidanceSocket } from "./socket.js";
import {
  ClientState,
  Emit,
  initialState,
  KEY_BINDINGS,
  makeMove,
  makeReset,
  makeSelectPlane,
  onClose,
  onOpen,
  onServerText,
  setStepSizes,
} from "./state.js";

function query(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

const host = query("host", window.location.hostname || "127.0.0.1");
const port = query("port", "8000");
const wsUrl = `ws://${host}:${port}/session`;

let state: ClientState = initialState();
let dirty = true;

const canvas = document.getElementById("slice") as HTMLCanvasElement;
const overlay = document.getElementById("overlay") as unknown as SVGSVGElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const status = document.getElementById("status") as HTMLSpanElement;
const planeSel = document.getElementById("plane") as HTMLSelectElement;
const stepMm = document.getElementById("step-mm") as HTMLInputElement;
const stepDeg = document.getElementById("step-deg") as HTMLInputElement;
const debugToggle = document.getElementById("debug") as HTMLInputElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;

function update(next: ClientState): void {
  state = next;
  dirty = true;
}

const socket = new GuidanceSocket(wsUrl, {
  onText: (text) => update(onServerText(state, text)),
  onOpen: () => update(onOpen(state)),
  onClose: () => update(onClose(state)),
});

function emit(e: Emit): void {
  if (e.msg !== null && socket.send(e.msg)) update(e.state);
}

async function loadPlanes(): Promise<void> {
  try {
    const res = await fetch(`http://${host}:${port}/planes`);
    const data = (await res.json()) as { planes: { id: number; name: string }[] };
    planeSel.innerHTML = "";
    for (const p of data.planes) {
      const opt = document.createElement("option");
      opt.value = String(p.id);
      opt.textContent = `${p.id}. ${p.name}`;
      planeSel.appendChild(opt);
    }
  } catch {
    banner.textContent = "could not load plane list";
  }
}

window.addEventListener("keydown", (ev) => {
  const bind = KEY_BINDINGS[ev.key.toLowerCase()];
  if (!bind || ev.repeat) return;
  ev.preventDefault();
  emit(makeMove(state, bind[0], bind[1]));
});

planeSel.addEventListener("change", () => {
  emit(makeSelectPlane(state, Number(planeSel.value)));
});

resetBtn.addEventListener("click", () => emit(makeReset(state)));

for (const input of [stepMm, stepDeg]) {
  input.addEventListener("input", () => {
    update(setStepSizes(state, Number(stepMm.value), Number(stepDeg.value)));
  });
}

debugToggle.addEventListener("change", () => {
  update({ ...state, showDebug: debugToggle.checked });
});

function renderLoop(): void {
  if (dirty) {
    dirty = false;
    status.textContent = state.connection;
    banner.textContent = state.banner ?? "";
    banner.style.display = state.banner ? "block" : "none";
    const disconnected = state.connection !== "open";
    for (const ctl of [planeSel, stepMm, stepDeg, resetBtn]) {
      (ctl as HTMLInputElement).disabled = disconnected;
    }
    if (state.frame) {
      drawSlice(canvas, state.frame);
      drawOverlay(overlay, state.frame, state.showDebug);
      planeSel.value = String(state.frame.selected);
      const pose = state.frame.pose;
      (document.getElementById("pose") as HTMLSpanElement).textContent =
        `pose [${pose.slice(0, 3).map((v) => v.toFixed(1)).join(", ")}] mm`;
    }
  }
  requestAnimationFrame(renderLoop);
}

loadPlanes();
requestAnimationFrame(renderLoop);
