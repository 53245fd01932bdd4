// Sweep what-if panel: a joint range becomes one POST /api/sweep call and
// renders as a clear/collision strip; clicking a cell applies that state.

import { ApiClient, JointUpdate, SweepResultJson } from "./api";
import { SceneStore } from "./state";

export interface SweepRequest {
  joint: "gantry_deg" | "collimator_deg" | "couch_rotation_deg";
  from: number;
  to: number;
  step: number;
}

export function validateSweep(req: SweepRequest): string | null {
  if (!Number.isFinite(req.from) || !Number.isFinite(req.to) || !Number.isFinite(req.step)) {
    return "range values must be numbers";
  }
  if (req.step <= 0) return "step must be positive";
  if (req.to < req.from) return "range end must not precede start";
  const count = Math.floor((req.to - req.from) / req.step) + 1;
  if (count > 200) return `${count} states exceeds the 200-state cap`;
  return null;
}

export function sweepStates(req: SweepRequest): JointUpdate[] {
  const out: JointUpdate[] = [];
  for (let v = req.from; v <= req.to + 1e-9; v += req.step) {
    out.push({ [req.joint]: Math.round(v * 1e6) / 1e6 } as JointUpdate);
  }
  return out;
}

export interface SweepCell {
  value: number;
  status: "clear" | "collision" | "failed";
  clearanceMm: number | null;
  update: JointUpdate;
}

export async function runSweep(api: ApiClient, req: SweepRequest): Promise<SweepCell[]> {
  const states = sweepStates(req);
  const result: SweepResultJson = await api.postSweep(states);
  return result.results.map((row, i) => {
    const value = (states[i] as Record<string, number>)[req.joint];
    if (row.error || !row.collision) {
      return { value, status: "failed" as const, clearanceMm: null, update: states[i] };
    }
    return {
      value,
      status: row.collision.status,
      clearanceMm: row.collision.status === "clear" ? row.collision.min_clearance_mm : 0,
      update: states[i],
    };
  });
}

export function buildSweepPanel(root: HTMLElement, store: SceneStore): void {
  const form = document.createElement("div");
  form.className = "sweep-form";
  const joint = document.createElement("select");
  for (const name of ["gantry_deg", "collimator_deg", "couch_rotation_deg"]) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    joint.appendChild(opt);
  }
  const from = numberInput("0");
  const to = numberInput("180");
  const step = numberInput("10");
  const go = document.createElement("button");
  go.textContent = "Sweep";
  const message = document.createElement("div");
  message.className = "sweep-message";
  const strip = document.createElement("div");
  strip.className = "sweep-strip";
  form.append(joint, from, to, step, go);
  root.append(form, message, strip);

  go.addEventListener("click", async () => {
    const req: SweepRequest = {
      joint: joint.value as SweepRequest["joint"],
      from: parseFloat(from.value),
      to: parseFloat(to.value),
      step: parseFloat(step.value),
    };
    const problem = validateSweep(req);
    strip.textContent = "";
    if (problem) {
      message.textContent = problem;
      return;
    }
    message.textContent = "sweeping...";
    try {
      const cells = await runSweep(store.api, req);
      message.textContent = "";
      for (const cell of cells) {
        const el = document.createElement("button");
        el.className = `sweep-cell ${cell.status}`;
        el.title = cell.status === "clear"
          ? `${cell.value}: ${cell.clearanceMm?.toFixed(1)} mm clearance`
          : `${cell.value}: ${cell.status}`;
        el.textContent = String(cell.value);
        el.addEventListener("click", () => store.setJoints(cell.update));
        strip.appendChild(el);
      }
    } catch (e) {
      message.textContent = `sweep failed: ${e}`;
    }
  });
}

function numberInput(value: string): HTMLInputElement {
  const el = document.createElement("input");
  el.type = "number";
  el.value = value;
  return el;
}
