// Wire types mirroring the prediction API exactly (snake_case keys).

export interface FeatureValues {
  ptv60_cc: number;
  ptv44_cc: number;
  rectum_cc: number;
  bladder_cc: number;
  rectum_overlap_frac: number;
  bladder_overlap_frac: number;
}

export const FEATURE_NAMES: (keyof FeatureValues)[] = [
  "ptv60_cc",
  "ptv44_cc",
  "rectum_cc",
  "bladder_cc",
  "rectum_overlap_frac",
  "bladder_overlap_frac",
];

export type Organ = "bladder" | "rectum";

export interface Curve {
  start_cgy: number;
  step_cgy: number;
  values: number[];
}

export interface Band {
  start_cgy: number;
  step_cgy: number;
  lower: number[];
  upper: number[];
  fit_status: string[];
}

export interface ConstraintFlag {
  dose_cgy: number;
  max_volume_pct: number;
  predicted_pct: number;
  pass: boolean;
}

export interface PredictResponse {
  organ: Organ;
  features: FeatureValues;
  algorithms: string[];
  curves: Record<string, Curve>;
  point_doses: Record<string, Record<string, number>>;
  constraint_flags: Record<string, ConstraintFlag[]>;
  band: Band | null;
}

export interface ModelsResponse {
  organs: Organ[];
  algorithms: Record<string, string[]>;
}

export const POINT_DOSES = ["5300", "5600", "6000"] as const;
