import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api";
import { runSweep, sweepStates, validateSweep } from "../src/sweep";

describe("validateSweep", () => {
  it("accepts a sane range", () => {
    expect(validateSweep({ joint: "gantry_deg", from: 0, to: 180, step: 10 })).toBeNull();
  });

  it("rejects empty and inverted ranges", () => {
    expect(validateSweep({ joint: "gantry_deg", from: 10, to: 0, step: 5 })).toMatch(/precede/);
    expect(validateSweep({ joint: "gantry_deg", from: 0, to: 10, step: 0 })).toMatch(/positive/);
    expect(validateSweep({ joint: "gantry_deg", from: NaN, to: 10, step: 1 })).toMatch(/numbers/);
  });

  it("caps the state count", () => {
    expect(validateSweep({ joint: "gantry_deg", from: 0, to: 180, step: 0.1 })).toMatch(/cap/);
  });
});

describe("sweepStates", () => {
  it("builds the inclusive range", () => {
    const states = sweepStates({ joint: "gantry_deg", from: 0, to: 30, step: 10 });
    expect(states).toEqual([
      { gantry_deg: 0 }, { gantry_deg: 10 }, { gantry_deg: 20 }, { gantry_deg: 30 },
    ]);
  });
});

describe("runSweep", () => {
  it("maps results to strip cells and flags failures", async () => {
    const api = new ApiClient();
    api.postSweep = async () => ({
      results: [
        { state: { gantry_deg: 0 }, collision: { status: "clear", pairs: [], min_clearance_mm: 55, closest: null } },
        { state: { gantry_deg: 10 }, collision: { status: "collision", pairs: [{ a: "x", b: "y", witness: [] }], min_clearance_mm: 0, closest: null } },
        { state: { gantry_deg: 20 }, error: { message: "limit" } },
      ],
    });
    const cells = await runSweep(api, { joint: "gantry_deg", from: 0, to: 20, step: 10 });
    expect(cells.map((c) => c.status)).toEqual(["clear", "collision", "failed"]);
    expect(cells[0].clearanceMm).toBe(55);
    expect(cells[1].clearanceMm).toBe(0);
    expect(cells[2].update).toEqual({ gantry_deg: 20 });
  });
});
