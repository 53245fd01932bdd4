// Joint slider panel: sliders mirror the machine definition's limits and
// always render from the store, so a rejected mutation snaps back simply
// because the store never accepted it.

import { JointUpdate, MachineStateJson } from "./api";
import { SceneStore, ViewState } from "./state";

interface SliderSpec {
  key: string;
  label: string;
  limit: string;                 // limits key in the machine definition
  get(j: MachineStateJson): number;
  update(value: number, j: MachineStateJson): JointUpdate;
}

export const SLIDERS: SliderSpec[] = [
  {
    key: "gantry", label: "Gantry (deg)", limit: "gantry_deg",
    get: (j) => j.gantry_deg,
    update: (v) => ({ gantry_deg: v }),
  },
  {
    key: "collimator", label: "Collimator (deg)", limit: "collimator_deg",
    get: (j) => j.collimator_deg,
    update: (v) => ({ collimator_deg: v }),
  },
  {
    key: "couch_rot", label: "Couch rotation (deg)", limit: "couch_rotation_deg",
    get: (j) => j.couch_rotation_deg,
    update: (v) => ({ couch_rotation_deg: v }),
  },
  {
    key: "couch_x", label: "Couch lateral (mm)", limit: "couch_x_mm",
    get: (j) => j.couch_translation_mm[0],
    update: (v, j) => ({ couch_translation_mm: [v, j.couch_translation_mm[1], j.couch_translation_mm[2]] }),
  },
  {
    key: "couch_y", label: "Couch longitudinal (mm)", limit: "couch_y_mm",
    get: (j) => j.couch_translation_mm[1],
    update: (v, j) => ({ couch_translation_mm: [j.couch_translation_mm[0], v, j.couch_translation_mm[2]] }),
  },
  {
    key: "couch_z", label: "Couch vertical (mm)", limit: "couch_z_mm",
    get: (j) => j.couch_translation_mm[2],
    update: (v, j) => ({ couch_translation_mm: [j.couch_translation_mm[0], j.couch_translation_mm[1], v] }),
  },
  {
    key: "gap_x", label: "Collimator gap X (mm)", limit: "gap_x_mm",
    get: (j) => j.collimator_gap_mm[0],
    update: (v, j) => ({ collimator_gap_mm: [v, j.collimator_gap_mm[1]] }),
  },
  {
    key: "gap_y", label: "Collimator gap Y (mm)", limit: "gap_y_mm",
    get: (j) => j.collimator_gap_mm[1],
    update: (v, j) => ({ collimator_gap_mm: [j.collimator_gap_mm[0], v] }),
  },
];

export function buildControls(root: HTMLElement, store: SceneStore): void {
  const rows = new Map<string, { input: HTMLInputElement; out: HTMLElement; note: HTMLElement }>();
  for (const spec of SLIDERS) {
    const row = document.createElement("div");
    row.className = "joint-row";
    const label = document.createElement("label");
    label.textContent = spec.label;
    const input = document.createElement("input");
    input.type = "range";
    input.step = "0.5";
    input.dataset.joint = spec.key;
    const out = document.createElement("span");
    out.className = "value";
    const note = document.createElement("span");
    note.className = "limit-note";
    row.append(label, input, out, note);
    root.appendChild(row);
    rows.set(spec.key, { input, out, note });

    let timer: ReturnType<typeof setTimeout> | null = null;
    input.addEventListener("input", () => {
      if (timer) clearTimeout(timer);
      timer = setTimeout(async () => {
        const j = store.state.joints;
        if (!j) return;
        await store.setJoints(spec.update(parseFloat(input.value), j));
      }, 120);
    });
  }

  store.subscribe((state: ViewState) => {
    if (!state.joints) return;
    for (const spec of SLIDERS) {
      const row = rows.get(spec.key)!;
      const limit = state.limits[spec.limit];
      if (limit) {
        row.input.min = String(limit[0]);
        row.input.max = String(limit[1]);
      }
      const value = spec.get(state.joints);
      if (!state.busy) row.input.value = String(value);  // snap back on reject
      row.out.textContent = value.toFixed(1);
      if (state.limitError && state.limitError.joint === spec.limit) {
        row.note.textContent = `legal [${state.limitError.interval[0]}, ${state.limitError.interval[1]}]`;
      } else {
        row.note.textContent = "";
      }
    }
  });
}
