// Live-service acceptance: runs only when DVH_API points at a running
// prediction service, e.g.
//   dvhpredict serve --bundle bundle.dvhm --band-dir bands --port 8750
//   DVH_API=http://127.0.0.1:8750 npm test

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { WhatIfController } from "../src/controller.js";
import { FEATURES } from "./helpers.js";

const API = process.env.DVH_API;

describe.skipIf(!API)("against the live service", () => {
  it("valid features yield one curve per algorithm, the band and the point table", async () => {
    const client = new ApiClient(API!);
    const models = await client.models();
    const roster = models.algorithms.bladder;
    expect(roster.length).toBeGreaterThan(0);
    const res = await client.predict(FEATURES, "bladder", roster);
    expect(Object.keys(res.curves).sort()).toEqual([...roster].sort());
    for (const curve of Object.values(res.curves)) {
      expect(curve.values.length).toBe(642);
      for (let i = 1; i < curve.values.length; i++) {
        expect(curve.values[i]).toBeLessThanOrEqual(curve.values[i - 1]);
      }
    }
    expect(res.band).not.toBeNull();
    for (const algo of roster) {
      expect(Object.keys(res.point_doses[algo])).toEqual(["5300", "5600", "6000"]);
    }
  });

  it("slider move: exactly one request, updated curves, pin deltas behave", async () => {
    const client = new ApiClient(API!);
    let requestCount = 0;
    const counting = new ApiClient(API!, (url, init) => {
      if (String(url).endsWith("/api/predict")) requestCount++;
      return fetch(url, init);
    });
    void client; // roster probe not needed here
    const controller = new WhatIfController(counting);
    await controller.setAlgorithms(["LR", "RF"]);
    expect(requestCount).toBe(1);
    controller.pin();
    for (const row of controller.comparePin()) {
      for (const dose of ["5300", "5600", "6000"]) {
        expect(row.deltas[dose]).toBe(0); // unchanged inputs -> zero deltas
      }
    }
    const before = controller.snapshot().prediction!.curves.RF.values;
    await controller.setFeature("bladder_overlap_frac", 0.34);
    expect(requestCount).toBe(2); // exactly one new request
    const after = controller.snapshot().prediction!.curves.RF.values;
    expect(after).not.toEqual(before); // chart updated
    expect(controller.snapshot().pinned).not.toBeNull();
  });

  it("server rejects invalid features with 400", async () => {
    const client = new ApiClient(API!);
    await expect(
      client.predict({ ...FEATURES, bladder_overlap_frac: 1.4 }, "bladder", ["LR"]),
    ).rejects.toThrow(/400/);
  });
});
