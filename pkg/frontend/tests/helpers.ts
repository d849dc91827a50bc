// Shared fakes: canned prediction responses and a controllable fetch.

import { FetchLike } from "../src/api.js";
import { Band, Curve, FeatureValues, PredictResponse } from "../src/types.js";

export const FEATURES: FeatureValues = {
  ptv60_cc: 110,
  ptv44_cc: 450,
  rectum_cc: 85,
  bladder_cc: 240,
  rectum_overlap_frac: 0.2,
  bladder_overlap_frac: 0.22,
};

export function fakeCurve(level: number, n = 642): Curve {
  const values = Array.from({ length: n }, (_, i) => level * (1 - i / (n - 1)));
  return { start_cgy: 10, step_cgy: 10, values };
}

export function fakeBand(n = 642): Band {
  const lower = Array.from({ length: n }, (_, i) => 40 * (1 - i / (n - 1)));
  const upper = Array.from({ length: n }, (_, i) => 40 * (1 - i / (n - 1)) + 50);
  return {
    start_cgy: 10,
    step_cgy: 10,
    lower,
    upper,
    fit_status: Array.from({ length: n }, () => "fitted"),
  };
}

export function fakeResponse(
  algorithms: string[],
  features: FeatureValues,
  bump = 0,
): PredictResponse {
  const curves: Record<string, Curve> = {};
  const point_doses: Record<string, Record<string, number>> = {};
  algorithms.forEach((a, i) => {
    curves[a] = fakeCurve(90 - 10 * i);
    point_doses[a] = {
      "5300": 5 + i + bump + features.bladder_overlap_frac,
      "5600": 3 + i + bump,
      "6000": 1 + i + bump,
    };
  });
  return {
    organ: "bladder",
    features,
    algorithms,
    curves,
    point_doses,
    constraint_flags: {
      [algorithms[0]]: [
        { dose_cgy: 6000, max_volume_pct: 25, predicted_pct: 4.0, pass: true },
        { dose_cgy: 5300, max_volume_pct: 3, predicted_pct: 6.0, pass: false },
      ],
    },
    band: fakeBand(),
  };
}

export interface RecordedRequest {
  url: string;
  body: any;
  resolve: (r: PredictResponse) => void;
  reject: (status: number, detail: string) => void;
}

/** A fetch double that records prediction requests and lets tests resolve
 * them manually (or automatically via `auto`). */
export function makeFetch(auto?: (body: any, n: number) => PredictResponse) {
  const requests: RecordedRequest[] = [];
  const fetchImpl: FetchLike = (url, init) => {
    const body = init?.body ? JSON.parse(init.body as string) : null;
    return new Promise<Response>((resolvePromise) => {
      const record: RecordedRequest = {
        url: String(url),
        body,
        resolve: (r) =>
          resolvePromise(new Response(JSON.stringify(r), { status: 200 })),
        reject: (status, detail) =>
          resolvePromise(new Response(JSON.stringify({ detail }), { status })),
      };
      requests.push(record);
      if (auto) record.resolve(auto(body, requests.length));
    });
  };
  return { fetchImpl, requests };
}

export const flush = () => new Promise<void>((r) => setTimeout(r, 0));
