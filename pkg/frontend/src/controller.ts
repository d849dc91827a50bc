// What-if state machine: validated form state, sequence-numbered prediction
// requests (at most one in flight, stale responses discarded), and the
// pin/compare baseline.  Pure of DOM concerns; main.ts renders snapshots.

import { ApiClient } from "./api.js";
import { FeatureValues, Organ, POINT_DOSES, PredictResponse } from "./types.js";
import { FieldError, validateFeatures } from "./validation.js";

export class NoBaseline extends Error {
  constructor() {
    super("no baseline pinned");
  }
}

export interface PinnedBaseline {
  features: FeatureValues;
  organ: Organ;
  response: PredictResponse;
}

export interface DeltaRow {
  algorithm: string;
  deltas: Record<string, number>; // point dose -> current minus pinned
}

export interface Snapshot {
  features: FeatureValues;
  organ: Organ;
  algorithms: string[];
  errors: FieldError[];
  loading: boolean;
  prediction: PredictResponse | null;
  pinned: PinnedBaseline | null;
  deltas: DeltaRow[] | null;
  requestCount: number;
  lastError: string | null;
}

const DEFAULT_FEATURES: FeatureValues = {
  ptv60_cc: 110,
  ptv44_cc: 450,
  rectum_cc: 85,
  bladder_cc: 240,
  rectum_overlap_frac: 0.2,
  bladder_overlap_frac: 0.22,
};

export class WhatIfController {
  private features: FeatureValues = { ...DEFAULT_FEATURES };
  private organ: Organ = "bladder";
  private algorithms: string[] = [];
  private prediction: PredictResponse | null = null;
  private pinned: PinnedBaseline | null = null;
  private lastError: string | null = null;

  private seq = 0; // sequence number of the most recently issued request
  private inflight = false;
  private queued = false;
  private requests = 0;

  constructor(
    private client: ApiClient,
    private onChange: (snapshot: Snapshot) => void = () => {},
  ) {}

  snapshot(): Snapshot {
    return {
      features: { ...this.features },
      organ: this.organ,
      algorithms: [...this.algorithms],
      errors: validateFeatures(this.features),
      loading: this.inflight,
      prediction: this.prediction,
      pinned: this.pinned,
      deltas: this.pinned && this.prediction ? this.computeDeltas() : null,
      requestCount: this.requests,
      lastError: this.lastError,
    };
  }

  setFeature(field: keyof FeatureValues, value: number): Promise<void> {
    this.features = { ...this.features, [field]: value };
    return this.refresh();
  }

  setOrgan(organ: Organ): Promise<void> {
    this.organ = organ;
    return this.refresh();
  }

  setAlgorithms(algorithms: string[]): Promise<void> {
    this.algorithms = [...algorithms];
    return this.refresh();
  }

  /** Validate, then fetch a prediction.  Invalid form states never produce a
   * request; while a request is in flight new intents are coalesced into one
   * follow-up issued on completion. */
  refresh(): Promise<void> {
    if (validateFeatures(this.features).length > 0 || this.algorithms.length === 0) {
      this.emit();
      return Promise.resolve();
    }
    if (this.inflight) {
      this.queued = true;
      this.emit();
      return Promise.resolve();
    }
    return this.issue();
  }

  private async issue(): Promise<void> {
    this.inflight = true;
    const mySeq = ++this.seq;
    this.requests += 1;
    this.emit();
    try {
      const response = await this.client.predict(this.features, this.organ, this.algorithms);
      // drop the response if a newer request exists or an intent is queued
      if (mySeq === this.seq && !this.queued) {
        this.prediction = response;
        this.lastError = null;
      }
    } catch (err) {
      if (mySeq === this.seq && !this.queued) {
        this.lastError = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.inflight = false;
      if (this.queued) {
        this.queued = false;
        await this.issue();
      } else {
        this.emit();
      }
    }
  }

  /** Freeze the current prediction as the comparison baseline (replacing any
   * previous pin: at most one baseline exists). */
  pin(): void {
    if (!this.prediction) return;
    this.pinned = {
      features: { ...this.features },
      organ: this.organ,
      response: this.prediction,
    };
    this.emit();
  }

  unpin(): void {
    this.pinned = null;
    this.emit();
  }

  /** Point-dose deltas (current minus pinned) for algorithms present in
   * both predictions.  The only arithmetic done client-side. */
  comparePin(): DeltaRow[] {
    if (!this.pinned || !this.prediction) throw new NoBaseline();
    return this.computeDeltas();
  }

  private computeDeltas(): DeltaRow[] {
    const pinnedPts = this.pinned!.response.point_doses;
    const currentPts = this.prediction!.point_doses;
    const rows: DeltaRow[] = [];
    for (const algorithm of Object.keys(currentPts)) {
      if (!(algorithm in pinnedPts)) continue;
      const deltas: Record<string, number> = {};
      for (const dose of POINT_DOSES) {
        deltas[dose] = currentPts[algorithm][dose] - pinnedPts[algorithm][dose];
      }
      rows.push({ algorithm, deltas });
    }
    return rows;
  }

  private emit(): void {
    this.onChange(this.snapshot());
  }
}
