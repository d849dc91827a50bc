import { describe, expect, it } from "vitest";

import { deltaCells, pointDoseRows, constraintSummary } from "../src/table.js";
import { FEATURES, fakeResponse } from "./helpers.js";

describe("point-dose table", () => {
  it("one row per algorithm with the three clinical doses", () => {
    const rows = pointDoseRows(fakeResponse(["LR", "RF"], FEATURES));
    expect(rows.map((r) => r.algorithm)).toEqual(["LR", "RF"]);
    expect(rows[0].cells.length).toBe(3);
    expect(rows[0].cells[2]).toBe("1.00%");
  });
});

describe("delta formatting", () => {
  it("positive deltas carry an explicit sign", () => {
    const cells = deltaCells({
      algorithm: "LR",
      deltas: { "5300": 0.5, "5600": -0.25, "6000": 0 },
    });
    expect(cells).toEqual(["+0.50%", "-0.25%", "0.00%"]);
  });
});

describe("constraint summary", () => {
  it("lists only violated constraints", () => {
    const lines = constraintSummary(fakeResponse(["LR"], FEATURES));
    expect(lines.length).toBe(1);
    expect(lines[0]).toContain("exceeds");
    expect(lines[0]).toContain("5300");
  });
});
