"""Command-line entry points.

Exit codes: 0 on success, 1 on usage errors (unknown subcommand, bad
flags), 2 on runtime failures (unreadable inputs, failed runs).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import networks
from .data import (CATEGORIES, DatasetConfig, build_dataset, load_dataset,
                   load_png, save_png)
from .geometry import check_watertight, export_mesh, load_obj
from .render import RenderConfig, canonical_pose, soft_silhouette
from .training import (TrainConfig, ablate, checkpoint_hash, evaluate,
                       load_checkpoint, load_config, robustness_eval,
                       save_config, train)


def _apply_sets(cfg: TrainConfig, sets: list[str]) -> TrainConfig:
    if not sets:
        return cfg
    text = "\n".join(s.replace("=", " = ", 1) for s in sets)
    tmp = Path.cwd() / ".sketchmesh_override.cfg"
    try:
        tmp.write_text(text + "\n")
        override = load_config(tmp)
    finally:
        tmp.unlink(missing_ok=True)
    keys = [s.split("=", 1)[0].strip() for s in sets]
    return replace(cfg, **{k: getattr(override, k) for k in keys})


def _load_train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = _apply_sets(cfg, args.set or [])
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = DatasetConfig(n_samples=args.n, resolution=args.resolution,
                        seed=args.seed,
                        categories=tuple(args.categories or CATEGORIES))
    build_dataset(cfg, args.out)
    print(f"wrote {cfg.n_samples} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    samples = load_dataset(args.data)
    # The effective config sits next to the checkpoint so a run is
    # reproducible from its artifacts alone.
    cfg_path = Path(args.out).with_suffix(".cfg")
    save_config(cfg, cfg_path)
    print(f"effective config -> {cfg_path}")
    if args.per_class:
        for cat in sorted({s.category for s in samples}):
            subset = [s for s in samples if s.category == cat]
            params, _, blob = train(subset, cfg, log_path=None)
            path = Path(args.out).with_suffix(f".{cat}.d3sk")
            path.write_bytes(blob)
            print(f"{cat}: checkpoint {checkpoint_hash(blob)[:12]} -> {path}")
        return 0
    _, reports, blob = train(samples, cfg, log_path=args.log)
    Path(args.out).write_bytes(blob)
    print(f"final total loss {reports[-1].total:.4f} after {cfg.steps} steps")
    print(f"checkpoint {checkpoint_hash(blob)[:12]} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, _, _, cfg, _ = load_checkpoint(args.ckpt)
    samples = load_dataset(args.data)
    rep = evaluate(samples, params, cfg)
    payload = {"per_category": rep.per_category, "mean_iou": rep.mean_iou,
               "mean_silhouette_iou": rep.mean_silhouette_iou}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return 0


def cmd_robustness(args) -> int:
    params, _, _, cfg, _ = load_checkpoint(args.ckpt)
    samples = load_dataset(args.data)
    try:
        levels = tuple(tuple(float(x) for x in part.split(":"))
                       for part in args.levels.split(","))
        if any(len(lv) != 2 for lv in levels):
            raise ValueError
    except ValueError:
        raise ValueError(f"--levels must look like '0:0,0.08:0.12', "
                         f"got '{args.levels}'") from None
    rows = robustness_eval(samples, params, cfg, levels=levels, seed=args.seed)
    for row in rows:
        print(f"corruption [{row['lo']:.2f}, {row['hi']:.2f}]: "
              f"mean IoU {row['mean_iou']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    train_samples = load_dataset(args.data)
    held_samples = load_dataset(args.held)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    table = ablate(train_samples, held_samples, cfg, seeds=seeds)
    for name, by_seed in table.items():
        scores = ", ".join(f"seed {s}: {v:.4f}" for s, v in by_seed.items())
        mean = float(np.mean(list(by_seed.values())))
        print(f"{name:>9}: {scores} | mean {mean:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_infer(args) -> int:
    params, _, _, cfg, _ = load_checkpoint(args.ckpt)
    sketch = load_png(args.sketch)
    mesh = networks.infer_mesh(sketch.astype(np.float32), params, cfg.net_config())
    if not check_watertight(mesh):
        raise RuntimeError("inferred mesh failed the watertightness check")
    fmt = Path(args.out).suffix.lstrip(".") or "obj"
    Path(args.out).write_bytes(export_mesh(mesh, fmt))
    if args.preview:
        sil = soft_silhouette(mesh, canonical_pose(),
                              RenderConfig(resolution=cfg.resolution))
        save_png((sil >= 0.5).astype(np.uint8), args.preview)
    print(f"wrote {mesh.n_vertices} vertices / {mesh.n_faces} faces to {args.out}")
    return 0


def cmd_export(args) -> int:
    mesh = load_obj(Path(args.mesh).read_bytes())
    Path(args.out).write_bytes(export_mesh(mesh, args.format))
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchmesh",
                                     description="sketch to 3D mesh toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a procedural dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories", nargs="*", choices=CATEGORIES)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--log", help="CSV loss log path")
    p.add_argument("--per-class", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="voxel/silhouette IoU on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("robustness", help="evaluate under sketch corruption")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", default="0:0,0.08:0.12,0.18:0.22",
                   help="comma-separated lo:hi stroke-removal bands")
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("ablate", help="train and score the component toggles")
    p.add_argument("--data", required=True)
    p.add_argument("--held", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--json")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("infer", help="sketch PNG to mesh file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sketch", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preview", help="optional silhouette PNG path")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("export", help="convert an OBJ mesh to OBJ/STL")
    p.add_argument("--mesh", required=True)
    p.add_argument("--format", choices=("obj", "stl"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help; the
        # documented contract is 1 for usage errors.
        return 1 if exc.code == 2 else int(exc.code or 0)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
