"""Training loop, optimizer, checkpoints, and evaluation harnesses.

The per-step recipe: sample a batch and N viewpoints per sample, render
predicted and ground-truth silhouettes, take one discriminator step on
detached fakes, then one generator step on the full objective

    total = multiscale IoU + (lambda_flat * flatten + lambda_lap * laplacian)
            + lambda_sd * generator adversarial term.

Everything is seeded through one generator; two runs from the same seed
produce bit-identical checkpoints.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, fields, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import archive, losses, networks
from .autodiff import NonFiniteError, Tape, Tensor, backward
from .data import Sample, corrupt_sketch
from .geometry import Mesh, voxel_iou, voxelize
from .networks import NetConfig, decode, discriminate, encode, template_faces
from .render import (CameraPose, RenderConfig, canonical_pose, hard_mask,
                     render_silhouette, sample_poses, soft_silhouette)

EVAL_BOUNDS = np.array([[-1.1, -1.1, -1.1], [1.1, 1.1, 1.1]])
EVAL_VOXELS = 32


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    decay_steps: int = 800
    beta1: float = 0.9
    beta2: float = 0.999
    steps: int = 2000
    batch: int = 8
    n_views: int = 2
    lambda_sd: float = 0.1
    lambda_flat: float = 5e-4
    lambda_lap: float = 5e-3
    lambda_attn: float = 1.0
    sigma: float = 1e-4
    resolution: int = 64
    sd_enabled: bool = True
    sem_enabled: bool = True
    seed: int = 0

    def net_config(self) -> NetConfig:
        return NetConfig(resolution=self.resolution, sem_enabled=self.sem_enabled,
                         sd_enabled=self.sd_enabled, lambda_attn=self.lambda_attn)

    def render_config(self) -> RenderConfig:
        return RenderConfig(resolution=self.resolution, sigma=self.sigma)


_BOOL_KEYS = {"sd_enabled", "sem_enabled"}
_INT_KEYS = {"decay_steps", "steps", "batch", "n_views", "resolution", "seed"}


def load_config(path) -> TrainConfig:
    """Flat ``key = value`` text file; unknown keys are an error."""
    cfg = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got '{raw}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false"):
                raise ValueError(f"{path}:{lineno}: '{key}' must be true or false")
            overrides[key] = value.lower() == "true"
        elif key in _INT_KEYS:
            overrides[key] = int(value)
        else:
            overrides[key] = float(value)
    return replace(cfg, **overrides)


def save_config(cfg: TrainConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(TrainConfig)]
    Path(path).write_text("\n".join(lines).replace("True", "true").replace("False", "false") + "\n")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 * 0.3 ** floor(step / decay_steps).

    Evaluated in decimal arithmetic so the advertised decade values
    (1e-4 -> 3e-5 -> 9e-6) hold exactly rather than to float rounding.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    k = step // cfg.decay_steps
    return float(Decimal(repr(cfg.lr0)) * Decimal("0.3") ** k)


# -------------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float, beta2: float,
                 eps: float = 1e-8):
        self.names = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        c1 = np.float32(1.0 - self.beta1 ** self.t)
        c2 = np.float32(1.0 - self.beta2 ** self.t)
        for n in self.names:
            g = grads.get(n)
            if g is None:
                g = np.zeros_like(self.m[n])
            self.m[n] = b1 * self.m[n] + (np.float32(1.0) - b1) * g
            self.v[n] = b2 * self.v[n] + (np.float32(1.0) - b2) * (g * g)
            mhat = self.m[n] / c1
            vhat = self.v[n] / c2
            # rebind rather than mutate: closures on earlier tapes keep
            # referencing the pre-update array
            params[n].data = (params[n].data
                              - np.float32(lr) * mhat / (np.sqrt(vhat) + np.float32(self.eps)))


# ------------------------------------------------------------------ checkpoints

def checkpoint_bytes(params: dict[str, Tensor], opt_g: Adam, opt_d: Adam | None,
                     cfg: TrainConfig, step: int) -> bytes:
    tensors: dict[str, np.ndarray] = {}
    for n in sorted(params):
        tensors[n] = params[n].data
    for prefix, opt in (("opt.gen", opt_g), ("opt.sd", opt_d)):
        if opt is None:
            continue
        for n in sorted(opt.names):
            tensors[f"{prefix}.m.{n}"] = opt.m[n]
            tensors[f"{prefix}.v.{n}"] = opt.v[n]
        tensors[f"{prefix}.t"] = np.array([opt.t], dtype=np.float32)
    tensors["meta.step"] = np.array([step], dtype=np.float32)
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        tensors[f"cfg.{f.name}"] = np.array([float(v)], dtype=np.float32)
    return archive.dump_tensors(tensors)


def save_checkpoint(path, params, opt_g, opt_d, cfg, step) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, opt_g, opt_d, cfg, step))


def load_checkpoint(path_or_bytes):
    """Returns (params, opt_g, opt_d, cfg, step). Optimizer states are
    rebuilt exactly; config scalars come back at float32 precision."""
    blob = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    tensors = archive.load_tensors(blob)
    params: dict[str, Tensor] = {}
    overrides = {}
    for f in fields(TrainConfig):
        raw = float(tensors[f"cfg.{f.name}"][0])
        if f.name in _BOOL_KEYS:
            overrides[f.name] = bool(raw)
        elif f.name in _INT_KEYS:
            overrides[f.name] = int(raw)
        else:
            overrides[f.name] = raw
    cfg = TrainConfig(**overrides)
    fresh = networks.init_params(cfg.net_config(), seed=cfg.seed)
    for n in fresh:
        if n not in tensors:
            raise KeyError(f"checkpoint is missing parameter '{n}'")
        if tensors[n].shape != fresh[n].data.shape:
            raise ValueError(f"checkpoint parameter '{n}' has shape "
                             f"{tensors[n].shape}, expected {fresh[n].data.shape}")
        params[n] = Tensor(tensors[n], requires_grad=True)
    gen_names = [n for n in params if not n.startswith("sd.")]
    sd_names = [n for n in params if n.startswith("sd.")]

    def rebuild(prefix, names):
        if f"{prefix}.t" not in tensors:
            return None
        opt = Adam({n: params[n] for n in names}, cfg.beta1, cfg.beta2)
        opt.t = int(tensors[f"{prefix}.t"][0])
        for n in names:
            opt.m[n] = tensors[f"{prefix}.m.{n}"].copy()
            opt.v[n] = tensors[f"{prefix}.v.{n}"].copy()
        return opt

    opt_g = rebuild("opt.gen", gen_names)
    opt_d = rebuild("opt.sd", sd_names)
    step = int(tensors["meta.step"][0])
    return params, opt_g, opt_d, cfg, step


def checkpoint_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------- training

@dataclass
class LossReport:
    step: int
    total: float
    silhouette: float
    regularizer: float
    flatten: float
    laplacian: float
    sd_gen: float
    sd_disc: float
    lr: float


LOG_COLUMNS = ("step", "total", "l_sp", "l_r", "l_sd_gen", "l_sd_disc", "lr")


def _named_grads(gmap, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    out = {}
    for n, p in params.items():
        g = gmap.get(p)
        if g is not None:
            out[n] = g.data
    return out


def _component(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"loss component '{name}' is non-finite")
    return value


def train(samples: list[Sample], cfg: TrainConfig,
          log_path=None, params: dict[str, Tensor] | None = None):
    """Train on a fixed sample list; returns (params, reports, checkpoint bytes)."""
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    net_cfg = cfg.net_config()
    render_cfg = cfg.render_config()
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = networks.init_params(net_cfg, seed=cfg.seed)
    gen_params = {n: p for n, p in params.items() if not n.startswith("sd.")}
    sd_params = {n: p for n, p in params.items() if n.startswith("sd.")}
    opt_g = Adam(gen_params, cfg.beta1, cfg.beta2)
    opt_d = Adam(sd_params, cfg.beta1, cfg.beta2) if cfg.sd_enabled else None

    faces3 = template_faces()
    reg = losses.MeshRegularizer(faces3, int(faces3.max()) + 1)
    sketches = np.stack([s.sketch for s in samples]).astype(np.float32)
    gt_sils = [Tensor(s.silhouette.astype(np.float32)) for s in samples]
    n = len(samples)
    reports: list[LossReport] = []

    for step in range(cfg.steps):
        lr = lr_at(step, cfg)
        idx = rng.choice(n, size=min(cfg.batch, n), replace=False)
        poses = [sample_poses(cfg.n_views, rng) for _ in idx]

        gt_views = []
        for bi, si in enumerate(idx):
            mesh = samples[si].mesh
            gt_views.append([Tensor(soft_silhouette(mesh, p, render_cfg))
                             for p in poses[bi]])

        tape = Tape()
        with tape:
            z = encode(sketches[idx], params, net_cfg)
            verts = decode(z, params)
            pred_canon = []
            pred_views = []
            for bi in range(len(idx)):
                v = verts[bi]
                pred_canon.append(render_silhouette(v, template_faces(),
                                                    canonical_pose(), render_cfg))
                pred_views.append([render_silhouette(v, template_faces(), p, render_cfg)
                                   for p in poses[bi]])

        sd_disc_val = 0.0
        if cfg.sd_enabled:
            nb, nv = len(idx), cfg.n_views
            real_imgs = Tensor(np.stack(
                [t.data for views in gt_views for t in views]))
            fake_imgs = Tensor(np.stack(
                [t.data for views in pred_views for t in views]))  # detached
            d_tape = Tape()
            with d_tape:
                real_t = discriminate(real_imgs, params).reshape(nb, nv)
                fake_t = discriminate(fake_imgs, params).reshape(nb, nv)
                d_loss = losses.gan_discriminator_loss(real_t, fake_t)
                sd_disc_val = _component(d_loss.item(), "l_sd_disc")
                d_grads = _named_grads(backward(d_tape, d_loss), sd_params)
            opt_d.step(sd_params, d_grads, lr)

        with tape:
            sp_terms = []
            for bi in range(len(idx)):
                views = [losses.multiscale_iou_loss(pred_canon[bi], gt_sils[idx[bi]])]
                views += [losses.multiscale_iou_loss(pv, gv)
                          for pv, gv in zip(pred_views[bi], gt_views[bi])]
                sp_terms.extend(views)
            l_sp = _mean_scalars(sp_terms)
            reg_terms, fl_terms, lap_terms = [], [], []
            for bi in range(len(idx)):
                r_total, r_fl, r_lap = reg.combined(verts[bi], cfg.lambda_flat, cfg.lambda_lap)
                reg_terms.append(r_total)
                fl_terms.append(r_fl)
                lap_terms.append(r_lap)
            l_r = _mean_scalars(reg_terms)
            if cfg.sd_enabled:
                all_views = _stack_images(
                    [s for views in pred_views for s in views])
                fake_logits = discriminate(all_views, params).reshape(
                    len(idx), cfg.n_views)
                l_g = losses.gan_generator_loss(fake_logits)
            else:
                l_g = Tensor(np.float32(0.0))
            total = l_sp + l_r + Tensor(np.float32(cfg.lambda_sd)) * l_g
            g_grads = _named_grads(backward(tape, total), gen_params)
        opt_g.step(gen_params, g_grads, lr)

        rep = LossReport(
            step=step,
            total=_component(total.item(), "total"),
            silhouette=_component(l_sp.item(), "l_sp"),
            regularizer=_component(l_r.item(), "l_r"),
            flatten=float(np.mean([t.item() for t in fl_terms])),
            laplacian=float(np.mean([t.item() for t in lap_terms])),
            sd_gen=_component(l_g.item(), "l_sd_gen"),
            sd_disc=sd_disc_val,
            lr=lr,
        )
        reports.append(rep)

    blob = checkpoint_bytes(params, opt_g, opt_d, cfg, cfg.steps)
    if log_path is not None:
        write_log(reports, log_path)
    return params, reports, blob


def _mean_scalars(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * Tensor(np.float32(1.0 / len(terms)))


def _stack_images(images):
    """Stack (H, W) silhouettes into (V, H, W) on the tape."""
    from . import autodiff as ad
    return ad.concat([ad.reshape(s, (1,) + s.shape) for s in images], axis=0)


def write_log(reports: list[LossReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in reports:
            writer.writerow([r.step, r.total, r.silhouette, r.regularizer,
                             r.sd_gen, r.sd_disc, r.lr])


# -------------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    per_category: dict[str, float]
    mean_iou: float
    per_sample: list[dict]
    mean_silhouette_iou: float


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else float(np.count_nonzero(a & b) / union)


def predict_mesh(sketch: np.ndarray, params, net_cfg: NetConfig) -> Mesh:
    return networks.infer_mesh(sketch, params, net_cfg)


def evaluate(samples: list[Sample], params, cfg: TrainConfig,
             eval_poses: list[CameraPose] | None = None) -> EvalReport:
    """Voxel IoU at 32^3 in the shared canonical bounds plus silhouette IoU.

    When ``eval_poses`` is given the silhouette score averages those views
    (rendered ground truth) instead of the canonical stored silhouette.
    """
    net_cfg = cfg.net_config()
    render_cfg = cfg.render_config()
    per_sample = []
    by_cat: dict[str, list[float]] = {}
    sil_scores = []
    for s in samples:
        pred = predict_mesh(s.sketch.astype(np.float32), params, net_cfg)
        iou = voxel_iou(voxelize(pred, EVAL_VOXELS, EVAL_BOUNDS),
                        voxelize(s.mesh, EVAL_VOXELS, EVAL_BOUNDS))
        if eval_poses is None:
            sil = binary_iou(hard_mask(soft_silhouette(pred, canonical_pose(), render_cfg)),
                             s.silhouette.astype(bool))
        else:
            views = [binary_iou(hard_mask(soft_silhouette(pred, p, render_cfg)),
                                hard_mask(soft_silhouette(s.mesh, p, render_cfg)))
                     for p in eval_poses]
            sil = float(np.mean(views))
        per_sample.append({"id": s.sample_id, "category": s.category,
                           "voxel_iou": iou, "silhouette_iou": sil})
        by_cat.setdefault(s.category, []).append(iou)
        sil_scores.append(sil)
    per_category = {c: float(np.mean(v)) for c, v in sorted(by_cat.items())}
    mean_iou = float(np.mean(list(per_category.values())))
    return EvalReport(per_category, mean_iou, per_sample, float(np.mean(sil_scores)))


def robustness_eval(samples: list[Sample], params, cfg: TrainConfig,
                    levels=((0.0, 0.0), (0.08, 0.12), (0.18, 0.22)),
                    seed: int = 0) -> list[dict]:
    """Evaluate under inference-time sketch corruption at increasing levels."""
    net_cfg = cfg.net_config()
    rows = []
    for lo, hi in levels:
        rng = np.random.default_rng(seed)
        ious = []
        fracs = []
        for s in samples:
            corrupted, frac = corrupt_sketch(s.sketch, lo, hi, rng)
            pred = predict_mesh(corrupted.astype(np.float32), params, net_cfg)
            ious.append(voxel_iou(voxelize(pred, EVAL_VOXELS, EVAL_BOUNDS),
                                  voxelize(s.mesh, EVAL_VOXELS, EVAL_BOUNDS)))
            fracs.append(frac)
        rows.append({"lo": lo, "hi": hi, "mean_iou": float(np.mean(ious)),
                     "fractions": fracs})
    return rows


ABLATION_VARIANTS = (
    ("baseline", {"sd_enabled": False, "sem_enabled": False}),
    ("sd", {"sd_enabled": True, "sem_enabled": False}),
    ("sd_sem", {"sd_enabled": True, "sem_enabled": True}),
)


def ablate(train_samples: list[Sample], held_samples: list[Sample],
           cfg: TrainConfig, seeds=(0, 1, 2), pose_seed: int = 123,
           n_poses: int = 4) -> dict[str, dict[int, float]]:
    """Train each variant at each seed; score held-out multi-view
    silhouette IoU. Identical seeds across variants isolate the toggles."""
    poses = sample_poses(n_poses, np.random.default_rng(pose_seed))
    table: dict[str, dict[int, float]] = {}
    for name, flags in ABLATION_VARIANTS:
        table[name] = {}
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, **flags)
            params, _, _ = train(train_samples, run_cfg)
            rep = evaluate(held_samples, params, run_cfg, eval_poses=poses)
            table[name][seed] = rep.mean_silhouette_iou
    return table
