/**
 * Sketch studio: draw on the left, inspect the inferred mesh on the right.
 *
 * The DOM layer stays thin; drawing semantics live in raster.ts and all
 * service traffic in api.ts. The display canvas is a scaled view of the
 * binary buffer that actually gets submitted.
 */

import { ServiceClient, type MeshPayload } from "./api.js";
import { encodePng, toBase64 } from "./png.js";
import { StrokeCanvas } from "./raster.js";
import { OrbitViewer } from "./viewer.js";

const RASTER_SIZE = 64;
const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8008";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const sketchCanvas = el<HTMLCanvasElement>("sketch");
const viewerCanvas = el<HTMLCanvasElement>("viewer");
const submitBtn = el<HTMLButtonElement>("submit");
const undoBtn = el<HTMLButtonElement>("undo");
const clearBtn = el<HTMLButtonElement>("clear");
const exportObjBtn = el<HTMLButtonElement>("export-obj");
const exportStlBtn = el<HTMLButtonElement>("export-stl");
const wireframeBox = el<HTMLInputElement>("wireframe");
const brushInput = el<HTMLInputElement>("brush");
const statusLine = el<HTMLDivElement>("status");
const statsLine = el<HTMLDivElement>("stats");
const retryBtn = el<HTMLButtonElement>("retry");

const raster = new StrokeCanvas(RASTER_SIZE);
const client = new ServiceClient(SERVICE_URL);
const viewer = new OrbitViewer(viewerCanvas);

let currentMesh: MeshPayload | null = null;
let pending = false;

const ctx = sketchCanvas.getContext("2d")!;
const scale = sketchCanvas.width / RASTER_SIZE;

function repaint(): void {
  const px = raster.pixels();
  ctx.fillStyle = "#f8f6f1";
  ctx.fillRect(0, 0, sketchCanvas.width, sketchCanvas.height);
  ctx.fillStyle = "#1b1b1b";
  for (let y = 0; y < RASTER_SIZE; y++) {
    for (let x = 0; x < RASTER_SIZE; x++) {
      if (px[y * RASTER_SIZE + x] === 0) {
        ctx.fillRect(x * scale, y * scale, scale, scale);
      }
    }
  }
  syncControls();
}

function syncControls(): void {
  submitBtn.disabled = pending || !raster.hasInk();
  undoBtn.disabled = raster.strokeCount === 0;
  exportObjBtn.disabled = currentMesh === null;
  exportStlBtn.disabled = currentMesh === null;
}

function setStatus(text: string, showRetry = false): void {
  statusLine.textContent = text;
  retryBtn.hidden = !showRetry;
}

function rasterCoords(e: PointerEvent): { x: number; y: number } {
  const rect = sketchCanvas.getBoundingClientRect();
  const x = Math.floor(((e.clientX - rect.left) / rect.width) * RASTER_SIZE);
  const y = Math.floor(((e.clientY - rect.top) / rect.height) * RASTER_SIZE);
  return {
    x: Math.max(0, Math.min(RASTER_SIZE - 1, x)),
    y: Math.max(0, Math.min(RASTER_SIZE - 1, y)),
  };
}

let drawing = false;
sketchCanvas.addEventListener("pointerdown", (e) => {
  drawing = true;
  sketchCanvas.setPointerCapture(e.pointerId);
  const { x, y } = rasterCoords(e);
  raster.brushWidth = Number(brushInput.value);
  raster.beginStroke(x, y);
  repaint();
});
sketchCanvas.addEventListener("pointermove", (e) => {
  if (!drawing) return;
  const { x, y } = rasterCoords(e);
  raster.extendStroke(x, y);
  repaint();
});
sketchCanvas.addEventListener("pointerup", () => {
  drawing = false;
  raster.endStroke();
  repaint();
});

undoBtn.addEventListener("click", () => {
  raster.undo();
  repaint();
});
clearBtn.addEventListener("click", () => {
  raster.clear();
  repaint();
});
wireframeBox.addEventListener("change", () => {
  viewer.setWireframe(wireframeBox.checked);
});

async function submit(): Promise<void> {
  pending = true;
  syncControls();
  setStatus("inferring…");
  const png = encodePng(raster.pixels(), RASTER_SIZE);
  const result = await client.submitSketch(toBase64(png), RASTER_SIZE);
  if (result.kind === "superseded") {
    // A newer submission owns the pending state now.
    return;
  }
  pending = false;

  switch (result.kind) {
    case "bad_sketch":
      setStatus("draw something first");
      break;
    case "error":
      setStatus(result.message, true);
      break;
    case "ok": {
      currentMesh = result.mesh;
      viewer.display(result.mesh);
      const timing =
        result.timingMs === null ? "" : ` in ${result.timingMs.toFixed(0)} ms`;
      statsLine.textContent =
        `${result.mesh.n_vertices} vertices / ${result.mesh.n_faces} faces${timing}`;
      setStatus("");
      break;
    }
  }
  syncControls();
}

submitBtn.addEventListener("click", () => void submit());
retryBtn.addEventListener("click", () => void submit());

function download(bytes: Uint8Array, filename: string): void {
  const copy = new Uint8Array(bytes);
  const blob = new Blob([copy.buffer as ArrayBuffer]);
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

async function exportAs(format: "obj" | "stl"): Promise<void> {
  if (!currentMesh) return;
  try {
    const bytes = await client.exportMesh(currentMesh, format);
    download(bytes, `sketch.${format}`);
  } catch (err) {
    setStatus(String(err));
  }
}

exportObjBtn.addEventListener("click", () => void exportAs("obj"));
exportStlBtn.addEventListener("click", () => void exportAs("stl"));

client.health()
  .then((h) => setStatus(`service ready (checkpoint ${h.checkpoint})`))
  .catch(() => setStatus("service unreachable; start `sketchmesh serve`", true));

repaint();
