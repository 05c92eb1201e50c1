"""Sketch encoder, position-attention enhancement, cascaded mesh decoder,
and the silhouette discriminator.

All parameters live in one flat name -> Tensor dict under the namespaces
``enc.*``, ``sem.*``, ``dec.stage{1,2,3}.*``, ``sd.*`` so checkpoints are a
plain named-tensor archive.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Mesh, icosphere, prolongation_matrix

LATENT = 128
ENC_CHANNELS = (16, 32, 64, 128, 128)
SEM_REDUCED = 16
SD_CHANNELS = (16, 32, 64)
DEC_HIDDEN = (128, 64)
DEC_LEVELS = (1, 2, 3)
OFFSET_BOUND = 0.75


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 64
    sem_enabled: bool = True
    sd_enabled: bool = True
    lambda_attn: float = 1.0
    sem_softmax: str = "sources"  # "sources" (as printed) | "positions" (row-wise)


@lru_cache(maxsize=None)
def _template(level: int):
    m = icosphere(level)
    return m.vertices.astype(np.float32), m.faces


@lru_cache(maxsize=None)
def _prolong(level: int) -> np.ndarray:
    return prolongation_matrix(level)


def template_faces() -> np.ndarray:
    return _template(DEC_LEVELS[-1])[1].copy()


def _he(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def init_params(cfg: NetConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh trainable parameters. The decoder's offset heads and the
    attention post-process start at zero, so an untrained model emits the
    level-3 icosphere unchanged."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    cin = 1
    for i, cout in enumerate(ENC_CHANNELS, start=1):
        p[f"enc.conv{i}.w"] = _he(rng, (cout, cin, 3, 3), cin * 9)
        p[f"enc.conv{i}.b"] = np.zeros(cout, dtype=np.float32)
        cin = cout
    c = ENC_CHANNELS[-1]
    p["sem.query.w"] = _he(rng, (SEM_REDUCED, c, 1, 1), c)
    p["sem.key.w"] = _he(rng, (SEM_REDUCED, c, 1, 1), c)
    p["sem.value.w"] = _he(rng, (c, c, 1, 1), c)
    p["sem.post1.w"] = np.zeros((c, c, 3, 3), dtype=np.float32)
    p["sem.post1.b"] = np.zeros(c, dtype=np.float32)
    p["sem.post2.w"] = np.zeros((c, c, 3, 3), dtype=np.float32)
    p["sem.post2.b"] = np.zeros(c, dtype=np.float32)
    p["enc.fc.w"] = _he(rng, (c, LATENT), c)
    p["enc.fc.b"] = np.zeros(LATENT, dtype=np.float32)
    h1, h2 = DEC_HIDDEN
    for k in DEC_LEVELS:
        pre = f"dec.stage{k}"
        p[f"{pre}.fc1.w"] = _he(rng, (LATENT + 3, h1), LATENT + 3)
        p[f"{pre}.fc1.b"] = np.zeros(h1, dtype=np.float32)
        p[f"{pre}.fc2.w"] = _he(rng, (h1, h2), h1)
        p[f"{pre}.fc2.b"] = np.zeros(h2, dtype=np.float32)
        p[f"{pre}.out.w"] = np.zeros((h2, 3), dtype=np.float32)
        p[f"{pre}.out.b"] = np.zeros(3, dtype=np.float32)
    cin = 1
    for i, cout in enumerate(SD_CHANNELS, start=1):
        p[f"sd.conv{i}.w"] = _he(rng, (cout, cin, 3, 3), cin * 9)
        p[f"sd.conv{i}.b"] = np.zeros(cout, dtype=np.float32)
        cin = cout
    p["sd.fc.w"] = _he(rng, (SD_CHANNELS[-1], 1), SD_CHANNELS[-1])
    p["sd.fc.b"] = np.zeros(1, dtype=np.float32)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def _conv_block(x: Tensor, params, name: str, stride: int) -> Tensor:
    w = params[f"{name}.w"]
    b = params[f"{name}.b"]
    y = ad.conv2d(x, w, stride=stride, pad=1)
    y = ad.add(y, ad.reshape(b, (1, b.shape[0], 1, 1)))
    return ad.relu(y)


def sem_attention(a: Tensor, params, lam: float, mode: str = "sources") -> Tensor:
    """Position-attention enhancement of a (B, C, H, W) feature map.

    Pairwise energies come from 1x1 query/key projections; attention for
    output position j is softmax-normalized over the source index i, so
    every attention column sums to one. The aggregated values, scaled by
    ``lam``, are added to the input together with a two-convolution
    post-process of that same attention branch.
    """
    bsz, c, h, w = a.shape
    n = h * w
    q = ad.reshape(ad.conv2d(a, params["sem.query.w"]), (bsz, SEM_REDUCED, n))
    k = ad.reshape(ad.conv2d(a, params["sem.key.w"]), (bsz, SEM_REDUCED, n))
    v = ad.reshape(ad.conv2d(a, params["sem.value.w"]), (bsz, c, n))
    energy = ad.matmul(ad.transpose(q, (0, 2, 1)), k)  # (B, N, N): E[i, j] = q_i . k_j
    if mode == "sources":
        s = ad.softmax(energy, axis=1)
    elif mode == "positions":
        s = ad.softmax(energy, axis=2)
    else:
        raise ValueError(f"unknown sem softmax mode '{mode}'")
    attended = ad.reshape(ad.matmul(v, s), (bsz, c, h, w))
    branch = ad.mul(attended, Tensor(np.float32(lam)))
    post = ad.conv2d(branch, params["sem.post1.w"], pad=1)
    post = ad.add(post, ad.reshape(params["sem.post1.b"], (1, c, 1, 1)))
    post = ad.conv2d(ad.relu(post), params["sem.post2.w"], pad=1)
    post = ad.add(post, ad.reshape(params["sem.post2.b"], (1, c, 1, 1)))
    return ad.add(ad.add(a, branch), post)


def encode(sketch, params, cfg: NetConfig) -> Tensor:
    """(B, H, W) binary sketches (0 = stroke) to (B, LATENT) shape codes."""
    if not isinstance(sketch, Tensor):
        sketch = Tensor(np.asarray(sketch, dtype=np.float32))
    if sketch.data.ndim == 2:
        sketch = ad.reshape(sketch, (1,) + sketch.shape)
    bsz, h, w = sketch.shape
    if h % 16 or w % 16:
        raise ValueError(f"encoder input extents must be divisible by 16, got {h}x{w}")
    x = ad.reshape(sketch, (bsz, 1, h, w))
    for i in range(1, len(ENC_CHANNELS) + 1):
        stride = 2 if i < len(ENC_CHANNELS) else 1
        x = _conv_block(x, params, f"enc.conv{i}", stride)
    if cfg.sem_enabled:
        x = sem_attention(x, params, cfg.lambda_attn, cfg.sem_softmax)
    pooled = ad.tmean(x, axis=(2, 3))
    return ad.add(ad.matmul(pooled, params["enc.fc.w"]),
                  params["enc.fc.b"])


def _stage_mlp(z: Tensor, pos: Tensor, params, stage: int) -> Tensor:
    """Shared per-vertex head: concat(code, position) -> offset increment."""
    bsz, nv, _ = pos.shape
    zb = ad.broadcast_to(ad.reshape(z, (bsz, 1, LATENT)), (bsz, nv, LATENT))
    inp = ad.reshape(ad.concat([zb, pos], axis=2), (bsz * nv, LATENT + 3))
    pre = f"dec.stage{stage}"
    h = ad.relu(ad.add(ad.matmul(inp, params[f"{pre}.fc1.w"]), params[f"{pre}.fc1.b"]))
    h = ad.relu(ad.add(ad.matmul(h, params[f"{pre}.fc2.w"]), params[f"{pre}.fc2.b"]))
    out = ad.add(ad.matmul(h, params[f"{pre}.out.w"]), params[f"{pre}.out.b"])
    return ad.reshape(out, (bsz, nv, 3))


def _upsample_field(field: Tensor, level: int) -> Tensor:
    """Carry a (B, V_level, 3) per-vertex field to level + 1 by midpoint
    averaging (parents pass through)."""
    p = Tensor(_prolong(level))
    bsz, nv, _ = field.shape
    flat = ad.reshape(ad.transpose(field, (1, 0, 2)), (nv, bsz * 3))
    up = ad.matmul(p, flat)
    nv2 = p.shape[0]
    return ad.transpose(ad.reshape(up, (nv2, bsz, 3)), (1, 0, 2))


def decode(z: Tensor, params) -> Tensor:
    """Shape codes (B, LATENT) to vertex positions (B, 642, 3) on the
    level-3 icosphere topology.

    Each stage predicts a raw offset field on its refinement level,
    conditioned on the code and the current deformed positions; fields are
    accumulated across levels and squashed once at the end, keeping total
    offsets inside +-OFFSET_BOUND. Zero heads therefore reproduce the
    template sphere exactly.
    """
    bsz = z.shape[0]
    bound = Tensor(np.float32(OFFSET_BOUND))
    raw: Tensor | None = None
    for k in DEC_LEVELS:
        verts_k, _ = _template(k)
        base = ad.broadcast_to(Tensor(verts_k[None]), (bsz,) + verts_k.shape)
        if raw is None:
            pos = base
        else:
            raw = _upsample_field(raw, k - 1)
            pos = ad.add(base, ad.mul(bound, ad.tanh(raw)))
        inc = _stage_mlp(z, pos, params, k)
        raw = inc if raw is None else ad.add(raw, inc)
    verts3, _ = _template(DEC_LEVELS[-1])
    base3 = ad.broadcast_to(Tensor(verts3[None]), (bsz,) + verts3.shape)
    return ad.add(base3, ad.mul(bound, ad.tanh(raw)))


def discriminate(sil: Tensor, params) -> Tensor:
    """Silhouettes (B, H, W) to one realism logit per silhouette (B,)."""
    if sil.data.ndim == 2:
        sil = ad.reshape(sil, (1,) + sil.shape)
    bsz, h, w = sil.shape
    x = ad.reshape(sil, (bsz, 1, h, w))
    for i in range(1, len(SD_CHANNELS) + 1):
        x = _conv_block(x, params, f"sd.conv{i}", stride=2)
    pooled = ad.tmean(x, axis=(2, 3))
    logit = ad.add(ad.matmul(pooled, params["sd.fc.w"]), params["sd.fc.b"])
    return ad.reshape(logit, (bsz,))


def infer_mesh(sketch: np.ndarray, params, cfg: NetConfig) -> Mesh:
    """Single sketch to a watertight mesh on the icosphere(3) topology."""
    z = encode(np.asarray(sketch, dtype=np.float32)[None], params, cfg)
    verts = decode(z, params)
    return Mesh(verts.data[0].astype(np.float64), template_faces())
