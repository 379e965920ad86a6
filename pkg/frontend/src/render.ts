/** Canvas slice rendering and SVG overlay construction. */

import { decodeImage, StateFrame } from "./protocol.js";
import { DEFAULT_SCALE, guidanceView } from "./guidance.js";

const SVG_NS = "http://www.w3.org/2000/svg";

/** Draw the grayscale slice, scaled to the canvas size. */
export function drawSlice(canvas: HTMLCanvasElement, frame: StateFrame): void {
  const { w, h } = frame.image;
  const pixels = decodeImage(frame.image);
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < pixels.length; i++) {
    const v = Math.max(0, Math.min(255, Math.round(pixels[i] * 255)));
    img.data[4 * i] = v;
    img.data[4 * i + 1] = v;
    img.data[4 * i + 2] = v;
    img.data[4 * i + 3] = 255;
  }
  // draw at native resolution onto an offscreen canvas, then scale up
  const off = document.createElement("canvas");
  off.width = w;
  off.height = h;
  off.getContext("2d")!.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function el(tag: string, attrs: Record<string, string | number>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, String(v));
  return node;
}

function dial(cx: number, cy: number, r: number, angleDeg: number, label: string): SVGElement {
  const g = el("g", {});
  g.appendChild(el("circle", { cx, cy, r, fill: "none", stroke: "#4af", "stroke-width": 2 }));
  const a = ((angleDeg - 90) * Math.PI) / 180; // 0 deg points up
  g.appendChild(
    el("line", {
      x1: cx, y1: cy,
      x2: cx + r * 0.85 * Math.cos(a),
      y2: cy + r * 0.85 * Math.sin(a),
      stroke: "#4af", "stroke-width": 2,
    }),
  );
  const text = el("text", { x: cx, y: cy + r + 14, fill: "#ccc", "font-size": 11, "text-anchor": "middle" });
  text.textContent = label;
  g.appendChild(text);
  return g;
}

/** Rebuild the full guidance overlay for the selected plane. */
export function drawOverlay(svg: SVGSVGElement, frame: StateFrame, showDebug: boolean): void {
  while (svg.firstChild) svg.removeChild(svg.firstChild);
  const w = svg.viewBox.baseVal.width || svg.clientWidth;
  const h = svg.viewBox.baseVal.height || svg.clientHeight;
  const cx = w / 2;
  const cy = h / 2;
  const vec = frame.guidance[frame.selected - 1];
  const view = guidanceView(vec, DEFAULT_SCALE);

  // in-plane translation arrow
  if (view.arrow.length > 0) {
    const tipX = cx + view.arrow.dx;
    const tipY = cy + view.arrow.dy;
    svg.appendChild(el("line", {
      x1: cx, y1: cy, x2: tipX, y2: tipY,
      stroke: "#fc3", "stroke-width": 3, "marker-end": "url(#tip)",
    }));
  } else {
    svg.appendChild(el("circle", { cx, cy, r: 4, fill: "#fc3" }));
  }

  // out-of-plane indicator: bar right of the image, up = move +z
  const barH = 80;
  svg.appendChild(el("rect", { x: w - 28, y: cy - barH / 2, width: 10, height: barH, fill: "#222", stroke: "#555" }));
  svg.appendChild(el("rect", {
    x: w - 28,
    y: view.outOfPlane >= 0 ? cy - (barH / 2) * view.outOfPlane : cy,
    width: 10,
    height: (barH / 2) * Math.abs(view.outOfPlane),
    fill: "#3d8",
  }));

  // three rotation dials along the bottom
  const names = ["rx", "ry", "rz"];
  view.dials.forEach((angle, i) => {
    svg.appendChild(dial(40 + i * 70, h - 46, 22, angle, `${names[i]} ${view.labels[3 + i]}°`));
  });

  // numeric guidance readout (0.1 precision, same numbers as the payload)
  const readout = el("text", { x: 8, y: 16, fill: "#eee", "font-size": 12 });
  readout.textContent =
    `t [${view.labels.slice(0, 3).join(", ")}] mm   ` +
    `r [${view.labels.slice(3).join(", ")}]°`;
  svg.appendChild(readout);

  if (showDebug) {
    const [dm, dd] = frame.debug.plane_dist[frame.selected - 1];
    const t = el("text", { x: 8, y: 32, fill: "#f88", "font-size": 12 });
    t.textContent = `true distance: ${dm.toFixed(1)} mm / ${dd.toFixed(1)}°`;
    svg.appendChild(t);
  }
}
