// Point-dose table and delta-view row builders (display formatting only).

import { DeltaRow } from "./controller.js";
import { POINT_DOSES, PredictResponse } from "./types.js";

export interface TableRow {
  algorithm: string;
  cells: string[]; // one per point dose, formatted percent
}

export function pointDoseRows(response: PredictResponse): TableRow[] {
  return response.algorithms
    .filter((a) => a in response.point_doses)
    .map((algorithm) => ({
      algorithm,
      cells: POINT_DOSES.map((d) => `${response.point_doses[algorithm][d].toFixed(2)}%`),
    }));
}

export function deltaCells(row: DeltaRow): string[] {
  return POINT_DOSES.map((d) => {
    const v = row.deltas[d];
    const sign = v > 0 ? "+" : "";
    return `${sign}${v.toFixed(2)}%`;
  });
}

export function constraintSummary(response: PredictResponse): string[] {
  const out: string[] = [];
  for (const [algorithm, flags] of Object.entries(response.constraint_flags)) {
    for (const f of flags) {
      if (!f.pass) {
        out.push(
          `${algorithm}: ${f.predicted_pct.toFixed(1)}% at ${f.dose_cgy} cGy exceeds ` +
            `${f.max_volume_pct}%`,
        );
      }
    }
  }
  return out;
}
