/**
 * Orbit viewer for inferred meshes.
 *
 * The camera here is presentation state only; inference always uses the
 * service's canonical view, so nothing from this module is ever sent back
 * over the wire. Geometry construction and orbit math are kept free of
 * WebGL so they can be tested headless.
 */

import * as THREE from "three";
import type { MeshPayload } from "./api.js";

export interface OrbitState {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
}

export const ORBIT_LIMITS = {
  minDistance: 1.2,
  maxDistance: 12,
  maxElevationDeg: 89,
};

export function defaultOrbit(): OrbitState {
  return { azimuthDeg: 30, elevationDeg: 15, distance: 3.2 };
}

/** Indexed BufferGeometry with vertex normals from a service payload. */
export function buildGeometry(mesh: MeshPayload): THREE.BufferGeometry {
  const positions = new Float32Array(mesh.vertices.length * 3);
  mesh.vertices.forEach(([x, y, z], i) => {
    positions[i * 3] = x;
    positions[i * 3 + 1] = y;
    positions[i * 3 + 2] = z;
  });
  const index = new Uint32Array(mesh.faces.length * 3);
  mesh.faces.forEach(([a, b, c], i) => {
    index[i * 3] = a;
    index[i * 3 + 1] = b;
    index[i * 3 + 2] = c;
  });
  const geometry = new THREE.BufferGeometry();
  geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
  geometry.setIndex(new THREE.BufferAttribute(index, 1));
  geometry.computeVertexNormals();
  return geometry;
}

/** Camera position on the orbit sphere around the origin. */
export function orbitPosition(orbit: OrbitState): THREE.Vector3 {
  const az = (orbit.azimuthDeg * Math.PI) / 180;
  const el = (orbit.elevationDeg * Math.PI) / 180;
  return new THREE.Vector3(
    orbit.distance * Math.cos(el) * Math.sin(az),
    orbit.distance * Math.sin(el),
    orbit.distance * Math.cos(el) * Math.cos(az),
  );
}

export function clampOrbit(orbit: OrbitState): OrbitState {
  return {
    azimuthDeg: ((orbit.azimuthDeg % 360) + 360) % 360,
    elevationDeg: Math.max(-ORBIT_LIMITS.maxElevationDeg,
                           Math.min(ORBIT_LIMITS.maxElevationDeg,
                                    orbit.elevationDeg)),
    distance: Math.max(ORBIT_LIMITS.minDistance,
                       Math.min(ORBIT_LIMITS.maxDistance, orbit.distance)),
  };
}

/** Scene graph holding at most one displayed mesh (last write wins). */
export class MeshScene {
  readonly scene = new THREE.Scene();
  private mesh: THREE.Mesh | null = null;
  private material = new THREE.MeshStandardMaterial({
    color: 0x7aa2cc,
    flatShading: false,
    wireframe: false,
  });

  constructor() {
    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(2, 3, 4);
    const fill = new THREE.DirectionalLight(0xb0c4de, 0.8);
    fill.position.set(-3, -1, -2);
    this.scene.add(key, fill, new THREE.AmbientLight(0xffffff, 0.25));
  }

  get displayed(): THREE.Mesh | null {
    return this.mesh;
  }

  get wireframe(): boolean {
    return this.material.wireframe;
  }

  setWireframe(on: boolean): void {
    this.material.wireframe = on;
  }

  display(payload: MeshPayload): THREE.Mesh {
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
    }
    this.mesh = new THREE.Mesh(buildGeometry(payload), this.material);
    this.scene.add(this.mesh);
    return this.mesh;
  }
}

/** Full interactive viewer; requires a real canvas and WebGL context. */
export class OrbitViewer {
  readonly meshScene = new MeshScene();
  orbit = defaultOrbit();
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(
      35, canvas.clientWidth / Math.max(canvas.clientHeight, 1), 0.05, 100);
    canvas.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      this.orbit = clampOrbit({
        azimuthDeg: this.orbit.azimuthDeg - (e.clientX - this.lastX) * 0.5,
        elevationDeg: this.orbit.elevationDeg + (e.clientY - this.lastY) * 0.4,
        distance: this.orbit.distance,
      });
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.draw();
    });
    canvas.addEventListener("pointerup", () => { this.dragging = false; });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.orbit = clampOrbit({
        ...this.orbit,
        distance: this.orbit.distance * (e.deltaY > 0 ? 1.1 : 0.9),
      });
      this.draw();
    }, { passive: false });
    this.draw();
  }

  resize(width: number, height: number): void {
    this.renderer.setSize(width, height, false);
    this.camera.aspect = width / Math.max(height, 1);
    this.camera.updateProjectionMatrix();
    this.draw();
  }

  display(payload: MeshPayload): void {
    this.meshScene.display(payload);
    this.draw();
  }

  setWireframe(on: boolean): void {
    this.meshScene.setWireframe(on);
    this.draw();
  }

  draw(): void {
    this.camera.position.copy(orbitPosition(this.orbit));
    this.camera.lookAt(0, 0, 0);
    this.renderer.render(this.meshScene.scene, this.camera);
  }
}
