// Thin typed client for the prediction service.

import { FeatureValues, ModelsResponse, Organ, PredictResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  setBaseUrl(url: string): void {
    this.baseUrl = url.replace(/\/+$/, "");
  }

  async models(): Promise<ModelsResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/models`);
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as ModelsResponse;
  }

  async predict(
    features: FeatureValues,
    organ: Organ,
    algorithms: string[],
  ): Promise<PredictResponse> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/predict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ features, organ, algorithms }),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as PredictResponse;
  }
}
