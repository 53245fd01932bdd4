// three.js room view: meshes are fetched once from the service and posed
// client-side from the scene document's transforms. Colliding components
// tint red; the scene graph logic runs headless for tests (no renderer).

import * as THREE from "three";
import { ApiClient, ComponentJson, TransformJson } from "./api";
import { parsePly } from "./ply";

const GROUP_COLORS: Record<string, number> = {
  gantry: 0x5b84b1,
  couch: 0x8a8d91,
  room: 0x55585c,
};
const PATIENT_COLOR = 0xc9a27e;
const COLLIDE_COLOR = 0xd93025;
const SELECT_EMISSIVE = 0x224422;

export function transformToMatrix(t: TransformJson): THREE.Matrix4 {
  const r = t.rotation;
  const p = t.translation_mm;
  const m = new THREE.Matrix4();
  m.set(
    r[0], r[1], r[2], p[0],
    r[3], r[4], r[5], p[1],
    r[6], r[7], r[8], p[2],
    0, 0, 0, 1,
  );
  return m;
}

export class RoomView {
  readonly scene = new THREE.Scene();
  readonly meshes = new Map<string, THREE.Mesh>();
  private renderer: THREE.WebGLRenderer | null = null;
  private camera: THREE.PerspectiveCamera | null = null;

  constructor(private api: ApiClient) {
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.65));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(1500, -2500, 3000);
    this.scene.add(key);
  }

  async loadComponents(components: ComponentJson[]): Promise<void> {
    for (const comp of components) {
      if (this.meshes.has(comp.name)) continue;
      const buffer = await this.api.fetchMeshPly(comp.name);
      const parsed = parsePly(buffer);
      const geometry = new THREE.BufferGeometry();
      geometry.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
      geometry.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
      geometry.computeVertexNormals();
      const color = comp.name === "patient" ? PATIENT_COLOR
        : GROUP_COLORS[comp.group] ?? 0x777777;
      const material = new THREE.MeshStandardMaterial({
        color, roughness: 0.75, metalness: 0.15,
      });
      material.userData.baseColor = color;
      const mesh = new THREE.Mesh(geometry, material);
      mesh.name = comp.name;
      mesh.matrixAutoUpdate = false;
      this.meshes.set(comp.name, mesh);
      this.scene.add(mesh);
    }
    // components can be replaced (new patient): drop orphans
    const names = new Set(components.map((c) => c.name));
    for (const [name, mesh] of [...this.meshes]) {
      if (!names.has(name)) {
        this.scene.remove(mesh);
        this.meshes.delete(name);
      }
    }
  }

  applyTransforms(components: ComponentJson[]): void {
    for (const comp of components) {
      const mesh = this.meshes.get(comp.name);
      if (!mesh) continue;
      mesh.matrix.copy(transformToMatrix(comp.transform));
      mesh.matrixWorldNeedsUpdate = true;
    }
  }

  setColliding(names: Set<string>): void {
    for (const [name, mesh] of this.meshes) {
      const material = mesh.material as THREE.MeshStandardMaterial;
      material.color.setHex(names.has(name) ? COLLIDE_COLOR : material.userData.baseColor);
    }
  }

  setSelected(name: string | null): void {
    for (const [n, mesh] of this.meshes) {
      const material = mesh.material as THREE.MeshStandardMaterial;
      material.emissive.setHex(n === name ? SELECT_EMISSIVE : 0x000000);
    }
  }

  isTintedRed(name: string): boolean {
    const mesh = this.meshes.get(name);
    if (!mesh) return false;
    return (mesh.material as THREE.MeshStandardMaterial).color.getHex() === COLLIDE_COLOR;
  }

  /** Browser-only: attach a WebGL canvas with simple orbit controls. */
  async attach(container: HTMLElement): Promise<void> {
    const { OrbitControls } = await import("three/examples/jsm/controls/OrbitControls.js");
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(container.clientWidth, container.clientHeight);
    this.renderer.setClearColor(0x16181c);
    container.appendChild(this.renderer.domElement);
    this.camera = new THREE.PerspectiveCamera(
      50, container.clientWidth / container.clientHeight, 10, 30000);
    this.camera.position.set(2800, -2600, 1900);
    this.camera.up.set(0, 0, 1);
    const controls = new OrbitControls(this.camera, this.renderer.domElement);
    controls.target.set(0, 0, 200);
    controls.update();
    const animate = () => {
      requestAnimationFrame(animate);
      controls.update();
      this.renderer!.render(this.scene, this.camera!);
    };
    animate();
    window.addEventListener("resize", () => {
      if (!this.renderer || !this.camera) return;
      this.camera.aspect = container.clientWidth / container.clientHeight;
      this.camera.updateProjectionMatrix();
      this.renderer.setSize(container.clientWidth, container.clientHeight);
    });
  }
}
