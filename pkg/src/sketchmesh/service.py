"""HTTP inference service.

Stateless JSON API over a single loaded checkpoint. Response bodies are
assembled with an explicit key order and no per-request variation, so the
same input always produces the same bytes; wall-clock timing travels in the
X-Timing-Ms header instead of the body.
"""
from __future__ import annotations

import base64
import io
import json
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from PIL import Image

from . import networks
from .geometry import Mesh, check_watertight, export_mesh
from .render import RenderConfig, canonical_pose, soft_silhouette
from .training import checkpoint_hash, load_checkpoint

MAX_BODY_BYTES = 1 << 20


class RequestError(ValueError):
    """Client-side problem; maps to a 400 response."""


def _json_response(payload: dict, status: int = 200,
                   headers: dict | None = None) -> Response:
    body = json.dumps(payload, separators=(",", ":")).encode()
    return Response(content=body, status_code=status,
                    media_type="application/json", headers=headers)


def _error(status: int, message: str, **extra) -> Response:
    return _json_response({"error": message, **extra}, status=status)


def decode_sketch(b64_png: str, resolution: int,
                  declared: int | None = None) -> np.ndarray:
    """Base64 PNG to a binary float array, 0 = stroke, 1 = background.

    Any grayscale or color PNG is accepted: it is resampled to the model
    resolution with nearest neighbor and thresholded at mid-gray. When the
    client declares its canvas resolution, the image must actually be that
    size; the mismatch usually means a scaling bug on the client side.
    """
    try:
        raw = base64.b64decode(b64_png, validate=True)
    except Exception as exc:
        raise RequestError(f"sketch is not valid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise RequestError(f"sketch is not a decodable image: {exc}") from exc
    if declared is not None and img.size != (declared, declared):
        raise RequestError(
            f"declared resolution {declared} does not match image size "
            f"{img.size[0]}x{img.size[1]}")
    img = img.convert("L")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.NEAREST)
    arr = (np.asarray(img) >= 128).astype(np.float32)
    if not (arr == 0.0).any():
        raise RequestError("sketch has no stroke pixels after binarization")
    if not (arr == 1.0).any():
        raise RequestError("sketch is entirely stroke; expected a line drawing")
    return arr


def _encode_png(mask: np.ndarray) -> str:
    img = Image.fromarray((mask * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _parse_mesh(payload: dict) -> Mesh:
    try:
        verts = np.asarray(payload["vertices"], dtype=np.float64)
        faces = np.asarray(payload["faces"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise RequestError(f"bad mesh payload: {exc}") from exc
    if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
        raise RequestError("vertices must be a non-empty list of [x, y, z]")
    if faces.ndim != 2 or faces.shape[1] != 3 or faces.shape[0] == 0:
        raise RequestError("faces must be a non-empty list of [i, j, k]")
    try:
        return Mesh(verts, faces)
    except (ValueError, IndexError) as exc:
        raise RequestError(str(exc)) from exc


async def _read_json(request: Request) -> dict:
    body = await request.body()
    if len(body) > MAX_BODY_BYTES:
        raise _Oversized()
    try:
        payload = json.loads(body)
    except Exception as exc:
        raise RequestError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise RequestError("body must be a JSON object")
    return payload


class _Oversized(Exception):
    pass


def create_app(checkpoint) -> FastAPI:
    params, _, _, cfg, _ = load_checkpoint(checkpoint)
    blob = checkpoint if isinstance(checkpoint, bytes) else Path(checkpoint).read_bytes()
    ckpt_id = checkpoint_hash(blob)[:12]
    net_cfg = cfg.net_config()
    render_cfg = RenderConfig(resolution=cfg.resolution, sigma=cfg.sigma)

    app = FastAPI(title="sketchmesh", docs_url=None, redoc_url=None)
    # The browser companion runs from its own dev origin.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"],
                       expose_headers=["X-Timing-Ms"])

    @app.get("/api/v1/health")
    async def health() -> Response:
        return _json_response({"status": "ok", "checkpoint": ckpt_id})

    @app.post("/api/v1/model")
    async def model(request: Request) -> Response:
        started = time.perf_counter()
        try:
            payload = await _read_json(request)
        except _Oversized:
            return _error(413, f"request body exceeds {MAX_BODY_BYTES} bytes")
        except RequestError as exc:
            return _error(400, str(exc))
        try:
            sketch_b64 = payload.get("sketch")
            if not isinstance(sketch_b64, str):
                raise RequestError("missing string field 'sketch'")
            declared = payload.get("resolution")
            if declared is not None and (not isinstance(declared, int)
                                         or declared <= 0):
                raise RequestError("'resolution' must be a positive integer")
            sketch = decode_sketch(sketch_b64, cfg.resolution, declared)
            mesh = networks.infer_mesh(sketch, params, net_cfg)
            sil = soft_silhouette(mesh, canonical_pose(), render_cfg)
            mask = (sil >= 0.5).astype(np.uint8)
        except RequestError as exc:
            return _error(400, str(exc))
        except Exception:
            return _error(500, "inference failed", diagnostic=str(uuid.uuid4()))
        if not check_watertight(mesh):
            return _error(500, "inferred mesh is not watertight",
                          diagnostic=str(uuid.uuid4()))
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        body = {
            "vertices": [[float(x) for x in row] for row in mesh.vertices],
            "faces": [[int(i) for i in row] for row in mesh.faces],
            "silhouette_png": _encode_png(mask),
            "n_vertices": mesh.n_vertices,
            "n_faces": mesh.n_faces,
            "checkpoint": ckpt_id,
        }
        return _json_response(body, headers={"X-Timing-Ms": f"{elapsed_ms:.1f}"})

    @app.post("/api/v1/export")
    async def export(request: Request) -> Response:
        try:
            payload = await _read_json(request)
        except _Oversized:
            return _error(413, f"request body exceeds {MAX_BODY_BYTES} bytes")
        except RequestError as exc:
            return _error(400, str(exc))
        fmt = payload.get("format")
        if fmt not in ("obj", "stl"):
            return _error(400, "format must be 'obj' or 'stl'")
        try:
            mesh = _parse_mesh(payload)
            data = export_mesh(mesh, fmt)
        except RequestError as exc:
            return _error(400, str(exc))
        except ValueError as exc:
            return _error(400, str(exc))
        except Exception:
            return _error(500, "export failed", diagnostic=str(uuid.uuid4()))
        return Response(content=data, media_type=f"model/{fmt}")

    return app
