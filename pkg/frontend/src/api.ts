// Typed client for the scene service HTTP API.

export interface TransformJson {
  rotation: number[];        // 9 values, row-major
  translation_mm: number[];  // 3 values
}

export interface ComponentJson {
  name: string;
  parent: string;
  group: string;
  n_triangles: number;
  transform: TransformJson;
}

export interface MachineStateJson {
  gantry_deg: number;
  collimator_deg: number;
  couch_rotation_deg: number;
  couch_translation_mm: [number, number, number];
  collimator_gap_mm: [number, number];
  machine_kind: string;
}

export interface CollidingPairJson {
  a: string;
  b: string;
  witness: number[][];
}

export interface CollisionJson {
  status: "clear" | "collision";
  pairs: CollidingPairJson[];
  min_clearance_mm: number;
  closest: {
    a: string;
    b: string;
    point_a_mm: number[];
    point_b_mm: number[];
  } | null;
}

export interface SceneJson {
  revision: number;
  kind: string;
  sad_mm: number;
  limits: Record<string, [number, number]>;
  state: MachineStateJson;
  components: ComponentJson[];
  patient: { n_triangles: number } | null;
  collision: CollisionJson;
}

export interface LimitErrorJson {
  joint: string;
  value: number;
  interval: [number, number];
}

export type JointUpdate = Partial<{
  gantry_deg: number;
  collimator_deg: number;
  couch_rotation_deg: number;
  couch_translation_mm: [number, number, number];
  collimator_gap_mm: [number, number];
}>;

export type PutJointsResult =
  | { ok: true; revision: number; state: MachineStateJson; collision: CollisionJson }
  | { ok: false; status: number; limit: LimitErrorJson | null; message: string };

export interface SweepResultJson {
  results: Array<{
    state: MachineStateJson | JointUpdate;
    collision?: CollisionJson;
    error?: { message?: string; joint?: string };
  }>;
}

export class ApiClient {
  constructor(private base: string = "") {}

  url(path: string): string {
    return `${this.base}${path}`;
  }

  async getScene(): Promise<SceneJson> {
    const r = await fetch(this.url("/api/scene"));
    if (!r.ok) throw new Error(`scene fetch failed: ${r.status}`);
    return (await r.json()) as SceneJson;
  }

  async getCollision(): Promise<CollisionJson> {
    const r = await fetch(this.url("/api/collision"));
    if (!r.ok) throw new Error(`collision fetch failed: ${r.status}`);
    return (await r.json()) as CollisionJson;
  }

  async putJoints(update: JointUpdate): Promise<PutJointsResult> {
    const r = await fetch(this.url("/api/machine/joints"), {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(update),
    });
    if (r.ok) {
      const body = await r.json();
      return { ok: true, revision: body.revision, state: body.state, collision: body.collision };
    }
    let limit: LimitErrorJson | null = null;
    let message = `joint update rejected (${r.status})`;
    try {
      const body = await r.json();
      if (body.error && body.error.joint) {
        limit = body.error as LimitErrorJson;
        message = `${limit.joint} outside [${limit.interval[0]}, ${limit.interval[1]}]`;
      } else if (body.error && body.error.message) {
        message = body.error.message;
      }
    } catch {
      // non-JSON error body; keep the status message
    }
    return { ok: false, status: r.status, limit, message };
  }

  async postSweep(states: JointUpdate[]): Promise<SweepResultJson> {
    const r = await fetch(this.url("/api/sweep"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ states }),
    });
    if (!r.ok) throw new Error(`sweep failed: ${r.status}`);
    return (await r.json()) as SweepResultJson;
  }

  async fetchMeshPly(component: string): Promise<ArrayBuffer> {
    const r = await fetch(this.url(`/api/scene/mesh/${component}`));
    if (!r.ok) throw new Error(`mesh fetch failed for ${component}: ${r.status}`);
    return await r.arrayBuffer();
  }
}
