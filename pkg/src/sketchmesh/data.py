"""Procedural shape corpus and sketch synthesis.

Shapes are made by displacing level-3 icosphere vertices onto implicit
primitive surfaces, which preserves the watertight template topology by
construction. Sketches are binary rasters (0 = stroke, 1 = background)
derived from canonical-view silhouette boundaries with a smooth jitter
field and slight dilation standing in for free-hand stroke wobble.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import Mesh, icosphere
from .render import CameraPose, RenderConfig, canonical_pose, hard_mask, soft_silhouette

CATEGORIES = ("ellipsoid", "box", "cylinder", "capsule", "composite")


# ------------------------------------------------------------------ primitives

def _radial_scale(dirs: np.ndarray, category: str, rng: np.random.Generator) -> np.ndarray:
    """Distance from the origin to the primitive surface along unit ``dirs``.

    Per-category size factors keep every shape inside the unit ball so the
    canonical [-1.1, 1.1]^3 evaluation bounds always contain it.
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    s = rng.uniform(0.5, 1.0, size=3)
    if category == "ellipsoid":
        return 1.0 / np.sqrt((x / s[0]) ** 2 + (y / s[1]) ** 2 + (z / s[2]) ** 2)
    if category == "box":
        hx, hy, hz = s / np.sqrt(3.0)
        return 1.0 / np.maximum.reduce([np.abs(x) / hx, np.abs(y) / hy, np.abs(z) / hz])
    if category == "cylinder":
        sx, sy, sz = s / np.sqrt(2.0)
        radial = np.sqrt((x / sx) ** 2 + (y / sy) ** 2)
        return 1.0 / np.maximum(radial, np.abs(z) / sz)
    if category == "capsule":
        r = 0.5 * min(s[0], s[1])
        core = max(s[2] - r, 0.05)
        rho2 = x * x + y * y
        az = np.abs(z)
        side = r / np.maximum(np.sqrt(rho2), 1e-12)
        disc = core * core * z * z - (rho2 + z * z) * (core * core - r * r)
        cap = (core * az + np.sqrt(np.maximum(disc, 0.0))) / (rho2 + z * z)
        use_side = side * az <= core
        return np.where(use_side, side, cap)
    if category == "composite":
        centers = rng.uniform(-0.2, 0.2, size=(2, 3))
        sizes = rng.uniform(0.35, 0.6, size=(2, 3))
        k = 0.25

        def value(t):
            pts = t[:, None] * dirs
            f = [np.linalg.norm((pts - centers[i]) / sizes[i], axis=1) - 1.0
                 for i in range(2)]
            h = np.clip(0.5 + 0.5 * (f[1] - f[0]) / k, 0.0, 1.0)
            return f[1] * (1.0 - h) + f[0] * h - k * h * (1.0 - h)

        lo = np.full(len(dirs), 1e-3)
        hi = np.full(len(dirs), 3.0)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            insideish = value(mid) < 0.0
            lo = np.where(insideish, mid, lo)
            hi = np.where(insideish, hi, mid)
        return 0.5 * (lo + hi)
    raise ValueError(f"unknown category '{category}'")


def generate_primitive(category: str, seed: int) -> Mesh:
    """Watertight mesh of one randomized primitive on icosphere(3) topology."""
    rng = np.random.default_rng(seed)
    template = icosphere(3)
    dirs = template.vertices
    t = _radial_scale(dirs, category, rng)
    return Mesh(t[:, None] * dirs, template.faces)


# --------------------------------------------------------------------- sketches

def _smooth_field(rng: np.random.Generator, resolution: int, amplitude: float,
                  knots: int = 9) -> np.ndarray:
    coarse = rng.uniform(-amplitude, amplitude, size=(2, knots, knots))
    coords = np.linspace(0.0, knots - 1.0, resolution)
    gy, gx = np.meshgrid(coords, coords, indexing="ij")
    return np.stack([
        ndimage.map_coordinates(coarse[d], [gy, gx], order=1, mode="nearest")
        for d in range(2)
    ])


def synthesize_sketch(mesh: Mesh, pose: CameraPose, resolution: int,
                      seed: int, stroke_width: int = 2,
                      jitter_px: float = 1.0) -> np.ndarray:
    """Binary (H, W) uint8 sketch of the silhouette outline, 0 = stroke.

    The outline is the set of silhouette pixels with at least one empty
    4-neighbor; each outline pixel is displaced by a smooth random field
    of at most ``jitter_px`` pixels, then dilated to the stroke width.
    The smoothness keeps the displaced outline connected.
    """
    cfg = RenderConfig(resolution=resolution)
    sil = hard_mask(soft_silhouette(mesh, pose, cfg))
    eroded = ndimage.binary_erosion(
        sil, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]), border_value=0)
    boundary = sil & ~eroded
    rng = np.random.default_rng(seed)
    disp = np.rint(_smooth_field(rng, resolution, jitter_px)).astype(np.int64)
    ii, jj = np.nonzero(boundary)
    i2 = np.clip(ii + disp[0][ii, jj], 0, resolution - 1)
    j2 = np.clip(jj + disp[1][ii, jj], 0, resolution - 1)
    strokes = np.zeros_like(boundary)
    strokes[i2, j2] = True
    if stroke_width >= 2:
        strokes = ndimage.binary_dilation(strokes, structure=np.ones((2, 2)))
    return np.where(strokes, 0, 1).astype(np.uint8)


def corrupt_sketch(sketch: np.ndarray, lo: float, hi: float,
                   rng: np.random.Generator,
                   max_attempts: int = 1000) -> tuple[np.ndarray, float]:
    """Blank one random rectangle so the removed stroke fraction falls in
    [lo, hi]. Rejection-samples rectangles; raises after ``max_attempts``.

    Returns (corrupted copy, achieved fraction). ``hi == 0`` is a no-op.
    """
    sketch = np.asarray(sketch, dtype=np.uint8)
    if hi <= 0.0:
        return sketch.copy(), 0.0
    h, w = sketch.shape
    stroke = sketch == 0
    total = int(stroke.sum())
    if total == 0:
        raise ValueError("sketch has no stroke pixels to corrupt")
    anchors = np.argwhere(stroke)
    for _ in range(max_attempts):
        ai, aj = anchors[rng.integers(len(anchors))]
        rh = int(rng.integers(2, max(3, h // 2)))
        rw = int(rng.integers(2, max(3, w // 2)))
        i0 = int(np.clip(ai - rng.integers(0, rh), 0, h - 1))
        j0 = int(np.clip(aj - rng.integers(0, rw), 0, w - 1))
        removed = int(stroke[i0:i0 + rh, j0:j0 + rw].sum())
        frac = removed / total
        if lo <= frac <= hi:
            out = sketch.copy()
            out[i0:i0 + rh, j0:j0 + rw] = 1
            return out, frac
    raise RuntimeError(
        f"no rectangle removing a stroke fraction in [{lo}, {hi}] "
        f"after {max_attempts} attempts")


# --------------------------------------------------------------------- dataset

@dataclass
class Sample:
    sample_id: str
    category: str
    seed: int
    sketch: np.ndarray      # (H, W) uint8, 0 = stroke
    silhouette: np.ndarray  # (H, W) uint8, 1 = inside at the canonical view
    mesh: Mesh


@dataclass
class DatasetConfig:
    n_samples: int = 32
    resolution: int = 64
    seed: int = 0
    categories: tuple[str, ...] = CATEGORIES


def make_sample(index: int, cfg: DatasetConfig) -> Sample:
    category = cfg.categories[index % len(cfg.categories)]
    seed = cfg.seed * 100003 + index
    mesh = generate_primitive(category, seed)
    pose = canonical_pose()
    sketch = synthesize_sketch(mesh, pose, cfg.resolution, seed + 1)
    sil = hard_mask(soft_silhouette(mesh, pose, RenderConfig(resolution=cfg.resolution)))
    return Sample(f"s{index:04d}", category, seed, sketch,
                  sil.astype(np.uint8), mesh)


def build_samples(cfg: DatasetConfig) -> list[Sample]:
    return [make_sample(i, cfg) for i in range(cfg.n_samples)]


def save_png(arr: np.ndarray, path) -> None:
    Image.fromarray(arr.astype(np.uint8) * 255, mode="L").save(path)


def load_png(path_or_bytes) -> np.ndarray:
    """Read an 8-bit grayscale PNG back to a {0, 1} uint8 raster."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        img = Image.open(io.BytesIO(path_or_bytes))
    else:
        img = Image.open(path_or_bytes)
    arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


def build_dataset(cfg: DatasetConfig, out_dir) -> list[Sample]:
    """Write samples plus a manifest; same config -> byte-identical output."""
    from .geometry import export_obj

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = build_samples(cfg)
    lines = []
    for s in samples:
        save_png(s.sketch, out / f"{s.sample_id}_sketch.png")
        save_png(s.silhouette, out / f"{s.sample_id}_sil.png")
        (out / f"{s.sample_id}_mesh.obj").write_bytes(export_obj(s.mesh))
        lines.append(json.dumps(
            {"id": s.sample_id, "category": s.category, "seed": s.seed},
            sort_keys=True))
    meta = json.dumps({"n_samples": cfg.n_samples, "resolution": cfg.resolution,
                       "seed": cfg.seed, "categories": list(cfg.categories)},
                      sort_keys=True)
    (out / "manifest.jsonl").write_text(meta + "\n" + "\n".join(lines) + "\n")
    return samples


def load_dataset(dir_path) -> list[Sample]:
    from .geometry import load_obj

    root = Path(dir_path)
    text = (root / "manifest.jsonl").read_text().splitlines()
    samples = []
    for line in text[1:]:
        rec = json.loads(line)
        sid = rec["id"]
        samples.append(Sample(
            sid, rec["category"], rec["seed"],
            load_png(root / f"{sid}_sketch.png"),
            load_png(root / f"{sid}_sil.png"),
            load_obj((root / f"{sid}_mesh.obj").read_bytes())))
    return samples
