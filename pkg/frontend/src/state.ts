// Scene store: the single source of truth the controls and the 3D view
// render from. Revision and collision status always come from one server
// response, so the UI can never pair a stale status with a new revision.

import {
  ApiClient,
  CollisionJson,
  ComponentJson,
  JointUpdate,
  LimitErrorJson,
  MachineStateJson,
  SceneJson,
} from "./api";

export type Connection = "connecting" | "live" | "polling" | "stale";

export interface ViewState {
  revision: number;
  connection: Connection;
  joints: MachineStateJson | null;
  limits: Record<string, [number, number]>;
  components: ComponentJson[];
  collision: CollisionJson | null;
  collidingNames: Set<string>;
  banner: string | null;
  clearanceMm: number | null;
  selected: string | null;
  limitError: LimitErrorJson | null;
  busy: boolean;
}

export type Listener = (state: ViewState) => void;

export function collidingComponentNames(collision: CollisionJson | null): Set<string> {
  const names = new Set<string>();
  if (collision && collision.status === "collision") {
    for (const p of collision.pairs) {
      names.add(p.a);
      names.add(p.b);
    }
  }
  return names;
}

export class SceneStore {
  state: ViewState = {
    revision: -1,
    connection: "connecting",
    joints: null,
    limits: {},
    components: [],
    collision: null,
    collidingNames: new Set(),
    banner: null,
    clearanceMm: null,
    selected: null,
    limitError: null,
    busy: false,
  };

  private listeners: Listener[] = [];

  constructor(public api: ApiClient) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private applyCollision(revision: number, collision: CollisionJson): void {
    this.state.revision = revision;
    this.state.collision = collision;
    this.state.collidingNames = collidingComponentNames(collision);
    if (collision.status === "collision") {
      const pair = collision.pairs[0];
      this.state.banner = `COLLISION: ${pair.a} / ${pair.b}`;
      this.state.clearanceMm = 0;
    } else {
      this.state.banner = null;
      this.state.clearanceMm = collision.min_clearance_mm;
    }
  }

  async load(): Promise<void> {
    const scene = await this.api.getScene();
    this.applyScene(scene);
    this.emit();
  }

  applyScene(scene: SceneJson): void {
    this.state.joints = scene.state;
    this.state.limits = scene.limits;
    this.state.components = scene.components;
    this.applyCollision(scene.revision, scene.collision);
  }

  /** Slider/drag handler. At most one mutation is in flight; on a limit
   * rejection the store keeps the old joints so the slider snaps back, and
   * exposes the legal interval for the tooltip. */
  async setJoints(update: JointUpdate): Promise<boolean> {
    if (this.state.busy) return false;
    this.state.busy = true;
    this.state.limitError = null;
    this.emit();
    try {
      const result = await this.api.putJoints(update);
      if (result.ok) {
        this.state.joints = result.state;
        this.applyCollision(result.revision, result.collision);
        return true;
      }
      this.state.limitError = result.limit ?? {
        joint: "unknown",
        value: NaN,
        interval: [NaN, NaN],
      };
      return false;
    } finally {
      this.state.busy = false;
      this.emit();
    }
  }

  /** Event-stream reconcile: a push only carries {revision, status}; any
   * newer revision triggers one atomic scene reload. */
  async onServerEvent(event: { revision: number; status: string }): Promise<void> {
    if (event.revision <= this.state.revision) return;
    const scene = await this.api.getScene();
    this.applyScene(scene);
    this.emit();
  }

  setConnection(c: Connection): void {
    if (this.state.connection !== c) {
      this.state.connection = c;
      this.emit();
    }
  }

  select(name: string | null): void {
    this.state.selected = name;
    this.emit();
  }
}
