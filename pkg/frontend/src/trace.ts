/** Pure geometry for the rolling risk trace (rendered as SVG).
 *
 * The risk curve is drawn in blue with flagged spans re-drawn in red over a
 * dashed threshold line at τ.
 */

import type { TraceSample } from "./state.js";
import { TAU } from "./types.js";

export interface TraceGeometry {
  /** SVG polyline points for the full risk curve. */
  curve: string;
  /** One polyline per contiguous flagged run. */
  flaggedRuns: string[];
  /** y coordinate of the τ threshold line. */
  thresholdY: number;
  /** x positions of stream-gap markers. */
  gapXs: number[];
}

function x(frame: number, maxFrame: number, width: number): number {
  const span = Math.max(maxFrame, 1);
  return (frame / span) * width;
}

function y(r: number, height: number): number {
  return height - Math.min(Math.max(r, 0), 1) * height;
}

export function traceGeometry(
  samples: TraceSample[],
  gaps: number[],
  width: number,
  height: number,
  tau: number = TAU,
): TraceGeometry {
  const maxFrame = samples.length ? samples[samples.length - 1].frameIndex : 1;
  const pt = (s: TraceSample) =>
    `${x(s.frameIndex, maxFrame, width).toFixed(1)},${y(s.r, height).toFixed(1)}`;

  const curve = samples.map(pt).join(" ");
  const flaggedRuns: string[] = [];
  let run: TraceSample[] = [];
  for (const s of samples) {
    if (s.flagged) {
      run.push(s);
    } else if (run.length) {
      flaggedRuns.push(run.map(pt).join(" "));
      run = [];
    }
  }
  if (run.length) flaggedRuns.push(run.map(pt).join(" "));

  return {
    curve,
    flaggedRuns,
    thresholdY: y(tau, height),
    gapXs: gaps
      .filter((g) => g >= 0)
      .map((g) => x(g, maxFrame, width)),
  };
}
