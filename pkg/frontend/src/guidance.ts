/**
 * Pure mapping from one guidance six-vector to overlay widget geometry.
 *
 * Screen convention: guidance +x points screen-right, +y points screen-up
 * (negative canvas y). The z component is out-of-plane and rendered as a
 * separate push/pull indicator. Each rotation component drives one dial
 * whose needle angle is proportional to the value, clamped at +/-180.
 */

export interface ArrowView {
  dx: number; // screen px, +right
  dy: number; // screen px, +down (canvas convention)
  length: number; // px
  mm: number; // in-plane translation magnitude
}

export interface GuidanceView {
  arrow: ArrowView;
  outOfPlane: number; // -1..+1, z clamped to maxMm
  dials: [number, number, number]; // needle angles in degrees, +clockwise
  labels: string[]; // six components formatted to 0.1 precision
  neutral: boolean; // exactly zero guidance
}

export interface ViewScale {
  pxPerMm: number; // arrow growth
  maxPx: number; // arrow clamp
  maxMm: number; // out-of-plane clamp
}

export const DEFAULT_SCALE: ViewScale = { pxPerMm: 3, maxPx: 120, maxMm: 40 };

export function formatComponent(v: number): string {
  const s = v.toFixed(1);
  return s === "-0.0" ? "0.0" : s;
}

export function guidanceView(
  vec: number[],
  scale: ViewScale = DEFAULT_SCALE,
): GuidanceView {
  if (vec.length !== 6) {
    throw new Error(`guidance vector must have 6 components, got ${vec.length}`);
  }
  const [tx, ty, tz, rx, ry, rz] = vec;
  const mm = Math.hypot(tx, ty);
  const px = Math.min(mm * scale.pxPerMm, scale.maxPx);
  const arrow: ArrowView =
    mm === 0
      ? { dx: 0, dy: 0, length: 0, mm: 0 }
      : { dx: (tx / mm) * px + 0, dy: (-ty / mm) * px + 0, length: px, mm };
  const clampDeg = (v: number) => Math.max(-180, Math.min(180, v));
  return {
    arrow,
    outOfPlane: Math.max(-1, Math.min(1, tz / scale.maxMm)),
    dials: [clampDeg(rx), clampDeg(ry), clampDeg(rz)],
    labels: vec.map(formatComponent),
    neutral: vec.every((v) => v === 0),
  };
}
