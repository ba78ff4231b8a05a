/** Session state: sliders, orbit, resolution, latency, range flags. */

import type { Meta } from "./api.js";
import { DEFAULT_ORBIT, type Orbit } from "./orbit.js";

export interface SessionState {
  coeffs: number[];
  orbit: Orbit;
  width: number;
  height: number;
  lastLatencyMs: number | null;
  dragging: boolean;
}

export function initialState(meta: Meta): SessionState {
  return {
    coeffs: new Array(meta.k).fill(0),
    orbit: { ...DEFAULT_ORBIT },
    width: meta.width,
    height: meta.height,
    lastLatencyMs: null,
    dragging: false,
  };
}

/** Per-slider flags for values outside the training range. */
export function outOfRangeFlags(coeffs: number[], meta: Meta): boolean[] {
  return coeffs.map(
    (v, i) => v < meta.coeff_min[i] || v > meta.coeff_max[i],
  );
}

/** Slider bounds: the training range padded so extrapolation is reachable. */
export function sliderBounds(meta: Meta, i: number): { min: number; max: number } {
  const lo = meta.coeff_min[i];
  const hi = meta.coeff_max[i];
  const pad = Math.max(0.5 * (hi - lo), 0.25);
  return { min: Math.min(0, lo) - pad, max: hi + pad };
}

/** Resolution for the next render: drop while dragging, restore after. */
export function renderResolution(state: SessionState): {
  width: number;
  height: number;
} {
  if (!state.dragging) return { width: state.width, height: state.height };
  return {
    width: Math.max(32, Math.round(state.width / 2)),
    height: Math.max(32, Math.round(state.height / 2)),
  };
}
