// Client-side feature validation mirroring the server's rules; an invalid
// form state must never produce a request.

import { FeatureValues } from "./types.js";

export interface FieldError {
  field: keyof FeatureValues;
  message: string;
}

export function validateFeatures(f: FeatureValues): FieldError[] {
  const errors: FieldError[] = [];
  const check = (field: keyof FeatureValues, ok: boolean, message: string) => {
    if (!ok) errors.push({ field, message });
  };
  for (const field of ["ptv60_cc", "ptv44_cc"] as const) {
    check(field, Number.isFinite(f[field]) && f[field] >= 0, "must be ≥ 0 cc");
  }
  for (const field of ["rectum_cc", "bladder_cc"] as const) {
    check(field, Number.isFinite(f[field]) && f[field] > 0, "must be > 0 cc");
  }
  for (const field of ["rectum_overlap_frac", "bladder_overlap_frac"] as const) {
    check(
      field,
      Number.isFinite(f[field]) && f[field] >= 0 && f[field] <= 1,
      "must lie in [0, 1]",
    );
  }
  return errors;
}

export function isValid(f: FeatureValues): boolean {
  return validateFeatures(f).length === 0;
}
