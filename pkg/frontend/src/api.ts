/**
 * Typed client for the sketchmesh inference service.
 *
 * Submission follows last-write-wins: starting a new model request aborts
 * the one in flight, and the aborted call resolves to "superseded" so the
 * caller can simply ignore it. Responses are schema-validated before they
 * reach the viewer.
 */

import { z } from "zod";

export const MeshPayload = z.object({
  vertices: z.array(z.tuple([z.number(), z.number(), z.number()])),
  faces: z.array(z.tuple([z.number(), z.number(), z.number()])),
  silhouette_png: z.string(),
  n_vertices: z.number().int().positive(),
  n_faces: z.number().int().positive(),
  checkpoint: z.string(),
});
export type MeshPayload = z.infer<typeof MeshPayload>;

const HealthPayload = z.object({
  status: z.string(),
  checkpoint: z.string(),
});

const ErrorPayload = z.object({ error: z.string() }).partial();

export type ModelResult =
  | { kind: "ok"; mesh: MeshPayload; timingMs: number | null }
  | { kind: "bad_sketch"; message: string }
  | { kind: "error"; message: string }
  | { kind: "superseded" };

export class ServiceClient {
  readonly baseUrl: string;
  private inflight: AbortController | null = null;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  async health(): Promise<{ status: string; checkpoint: string }> {
    const res = await fetch(`${this.baseUrl}/api/v1/health`);
    return HealthPayload.parse(await res.json());
  }

  /**
   * Submit a base64 sketch PNG. `resolution` declares the canvas size the
   * pixels were drawn at; the service rejects a mismatch with the PNG.
   */
  async submitSketch(sketchBase64: string,
                     resolution?: number): Promise<ModelResult> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;

    const body: Record<string, unknown> = { sketch: sketchBase64 };
    if (resolution !== undefined) body.resolution = resolution;

    let res: Response;
    try {
      res = await fetch(`${this.baseUrl}/api/v1/model`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
    } catch (err) {
      if (controller.signal.aborted) return { kind: "superseded" };
      return { kind: "error", message: `network failure: ${String(err)}` };
    }
    if (this.inflight === controller) this.inflight = null;

    if (res.status === 400) {
      const detail = ErrorPayload.safeParse(await res.json().catch(() => ({})));
      return {
        kind: "bad_sketch",
        message: detail.success && detail.data.error
          ? detail.data.error : "the sketch was rejected",
      };
    }
    if (!res.ok) {
      return { kind: "error", message: `service returned ${res.status}` };
    }

    const parsed = MeshPayload.safeParse(await res.json());
    if (!parsed.success) {
      return { kind: "error", message: "malformed mesh response" };
    }
    const timing = res.headers.get("X-Timing-Ms");
    return {
      kind: "ok",
      mesh: parsed.data,
      timingMs: timing === null ? null : Number(timing),
    };
  }

  /** Download the current mesh in the requested format. */
  async exportMesh(mesh: MeshPayload,
                   format: "obj" | "stl"): Promise<Uint8Array> {
    const res = await fetch(`${this.baseUrl}/api/v1/export`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        vertices: mesh.vertices,
        faces: mesh.faces,
        format,
      }),
    });
    if (!res.ok) {
      throw new Error(`export failed with status ${res.status}`);
    }
    return new Uint8Array(await res.arrayBuffer());
  }
}
