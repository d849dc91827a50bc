// Pure SVG geometry builders for the DVH chart: per-algorithm polylines, the
// shaded band, constraint markers and axis ticks.  No DOM access here so the
// mapping logic is testable in isolation.

import { Band, ConstraintFlag, Curve } from "./types.js";

export interface Viewport {
  width: number;
  height: number;
  marginLeft: number;
  marginBottom: number;
  marginTop: number;
  marginRight: number;
  maxDose: number; // cGy
}

export const DEFAULT_VIEWPORT: Viewport = {
  width: 760,
  height: 420,
  marginLeft: 52,
  marginBottom: 40,
  marginTop: 12,
  marginRight: 16,
  maxDose: 6420,
};

export function xScale(dose: number, vp: Viewport): number {
  const inner = vp.width - vp.marginLeft - vp.marginRight;
  return vp.marginLeft + (dose / vp.maxDose) * inner;
}

export function yScale(pct: number, vp: Viewport): number {
  const inner = vp.height - vp.marginTop - vp.marginBottom;
  return vp.marginTop + (1 - pct / 100) * inner;
}

function fmt(v: number): string {
  return (Math.round(v * 100) / 100).toString();
}

/** Polyline path for a cumulative curve. */
export function curvePath(curve: Curve, vp: Viewport = DEFAULT_VIEWPORT): string {
  const parts: string[] = [];
  curve.values.forEach((pct, i) => {
    const dose = curve.start_cgy + i * curve.step_cgy;
    const cmd = i === 0 ? "M" : "L";
    parts.push(`${cmd}${fmt(xScale(dose, vp))},${fmt(yScale(pct, vp))}`);
  });
  return parts.join(" ");
}

/** Closed polygon tracing the band's upper bound then the reversed lower. */
export function bandPath(band: Band, vp: Viewport = DEFAULT_VIEWPORT): string {
  const parts: string[] = [];
  band.upper.forEach((pct, i) => {
    const dose = band.start_cgy + i * band.step_cgy;
    const cmd = i === 0 ? "M" : "L";
    parts.push(`${cmd}${fmt(xScale(dose, vp))},${fmt(yScale(pct, vp))}`);
  });
  for (let i = band.lower.length - 1; i >= 0; i--) {
    const dose = band.start_cgy + i * band.step_cgy;
    parts.push(`L${fmt(xScale(dose, vp))},${fmt(yScale(band.lower[i], vp))}`);
  }
  return parts.join(" ") + " Z";
}

export interface Marker {
  x: number;
  y: number;
  pass: boolean;
  label: string;
}

/** One marker per constraint at (dose, max volume), flagged pass/fail. */
export function constraintMarkers(
  flags: ConstraintFlag[],
  vp: Viewport = DEFAULT_VIEWPORT,
): Marker[] {
  return flags.map((f) => ({
    x: xScale(f.dose_cgy, vp),
    y: yScale(f.max_volume_pct, vp),
    pass: f.pass,
    label: `≤${f.max_volume_pct}% @ ${f.dose_cgy} cGy`,
  }));
}

export interface Tick {
  pos: number;
  label: string;
}

export function doseTicks(vp: Viewport = DEFAULT_VIEWPORT, every = 1000): Tick[] {
  const ticks: Tick[] = [];
  for (let dose = 0; dose <= vp.maxDose; dose += every) {
    ticks.push({ pos: xScale(dose, vp), label: `${dose}` });
  }
  return ticks;
}

export function volumeTicks(vp: Viewport = DEFAULT_VIEWPORT, every = 20): Tick[] {
  const ticks: Tick[] = [];
  for (let pct = 0; pct <= 100; pct += every) {
    ticks.push({ pos: yScale(pct, vp), label: `${pct}%` });
  }
  return ticks;
}

// fixed palette, one colour per algorithm in roster order
const PALETTE = [
  "#1668b4",
  "#d1495b",
  "#2e8b57",
  "#b06f09",
  "#6a4fa3",
  "#0e8585",
  "#aa3377",
  "#555555",
  "#99520e",
];

export function colorFor(algorithm: string, roster: string[]): string {
  const idx = roster.indexOf(algorithm);
  return PALETTE[(idx >= 0 ? idx : roster.length) % PALETTE.length];
}
