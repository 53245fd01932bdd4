// The UI fixture test against the real scene service: driving the gantry
// to the contact pose must produce a visible collision warning and
// red-tinted colliders within one event-stream update; an out-of-limit
// drag snaps back and shows the legal interval.

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient, JointUpdate } from "../src/api";
import { subscribeEvents } from "../src/events";
import { SceneStore } from "../src/state";
import { RoomView } from "../src/viewer";

const BOOT = `
import json
from rtroom.fixtures import collision_demo_setup
from rtroom.machine import MachineState
from rtroom.service import SceneDocument, serve

demo = collision_demo_setup()
geom = demo["geometry"]
doc = SceneDocument(geom, MachineState.default(geom.kind, geom.limits))
srv = serve(doc, ("127.0.0.1", 0), verbose=False)
print(json.dumps({
    "port": srv.server_address[1],
    "colliding": demo["colliding_joints"],
    "clear": demo["clear_joints"],
}), flush=True)
srv.serve_forever()
`;

let proc: ChildProcess;
let base = "";
let collidingJoints: JointUpdate;
let clearJoints: JointUpdate;

beforeAll(async () => {
  proc = spawn("python3", ["-c", BOOT], { stdio: ["ignore", "pipe", "pipe"] });
  const line: string = await new Promise((resolve, reject) => {
    let buf = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buf += chunk.toString();
      const nl = buf.indexOf("\n");
      if (nl >= 0) resolve(buf.slice(0, nl));
    });
    proc.stderr!.on("data", (chunk: Buffer) => {
      const text = chunk.toString();
      if (text.includes("Traceback")) reject(new Error(text));
    });
    proc.on("exit", (code) => reject(new Error(`service exited: ${code}`)));
    setTimeout(() => reject(new Error("service start timeout")), 110_000);
  });
  const info = JSON.parse(line);
  base = `http://127.0.0.1:${info.port}`;
  collidingJoints = info.colliding;
  clearJoints = info.clear;
}, 120_000);

afterAll(() => {
  proc?.kill();
});

describe("planner UI against the live service", () => {
  it("drives the gantry into the fixture collision and back", async () => {
    const api = new ApiClient(base);
    const store = new SceneStore(api);
    const view = new RoomView(api);

    const events: Array<{ revision: number; status: string }> = [];
    const sub = subscribeEvents(
      base,
      (e) => {
        events.push(e);
        void store.onServerEvent(e);
      },
      () => undefined,
    );

    await store.load();
    expect(store.state.collision?.status).toBe("clear");
    expect(store.state.limits.gantry_deg).toEqual([-185, 185]);

    await view.loadComponents(store.state.components);
    expect(view.meshes.has("patient")).toBe(true);
    expect(view.meshes.has("collimator_housing")).toBe(true);

    // clear staging pose first (couch raised), then the contact pose
    await store.setJoints(clearJoints);
    expect(store.state.banner).toBeNull();

    const revisionBefore = store.state.revision;
    const ok = await store.setJoints(collidingJoints);
    expect(ok).toBe(true);

    // warning and tint reflect the mutation response itself: that IS the
    // state of the revision the UI displays (one update, no flicker)
    expect(store.state.revision).toBe(revisionBefore + 1);
    expect(store.state.banner).toMatch(/COLLISION/);
    expect(store.state.collidingNames.has("collimator_housing")).toBe(true);
    expect(store.state.collidingNames.has("patient")).toBe(true);

    view.setColliding(store.state.collidingNames);
    expect(view.isTintedRed("collimator_housing")).toBe(true);
    expect(view.isTintedRed("patient")).toBe(true);
    expect(view.isTintedRed("couch_base")).toBe(false);

    // the event stream converges on the same revision within one update
    await waitFor(() => events.some((e) => e.revision === store.state.revision
      && e.status === "collision"));

    // back out: warning clears and tints restore
    await store.setJoints(clearJoints);
    expect(store.state.banner).toBeNull();
    view.setColliding(store.state.collidingNames);
    expect(view.isTintedRed("collimator_housing")).toBe(false);

    sub.close();
  }, 60_000);

  it("snaps back with the legal interval on an out-of-limit drag", async () => {
    const api = new ApiClient(base);
    const store = new SceneStore(api);
    await store.load();
    const before = store.state.joints!.gantry_deg;

    const ok = await store.setJoints({ gantry_deg: 200 });
    expect(ok).toBe(false);
    expect(store.state.joints!.gantry_deg).toBe(before);   // slider source snaps back
    expect(store.state.limitError).not.toBeNull();
    expect(store.state.limitError!.joint).toBe("gantry_deg");
    expect(store.state.limitError!.interval).toEqual([-185, 185]);
  }, 30_000);

  it("reads clearance from the collision endpoint consistently", async () => {
    const api = new ApiClient(base);
    const store = new SceneStore(api);
    await store.load();
    const direct = await api.getCollision();
    expect(direct.status).toBe(store.state.collision!.status);
    if (direct.status === "clear") {
      expect(store.state.clearanceMm).toBeCloseTo(direct.min_clearance_mm, 6);
    }
  }, 30_000);
});

async function waitFor(cond: () => boolean, timeoutMs = 5000): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > timeoutMs) throw new Error("condition timeout");
    await new Promise((r) => setTimeout(r, 50));
  }
}
