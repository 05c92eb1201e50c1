"""One-shot pipeline from a sketch PNG to a printable STL.

Loads a trained checkpoint, infers a mesh from the given sketch, verifies
it is watertight, and writes both OBJ (for editing) and binary STL (for
slicing). The input must be a binary PNG, dark strokes on light ground.
"""
import argparse
from pathlib import Path

from sketchmesh.data import load_png
from sketchmesh.geometry import check_watertight, export_obj, export_stl
from sketchmesh.networks import infer_mesh
from sketchmesh.training import load_checkpoint


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", help="trained .d3sk checkpoint")
    ap.add_argument("sketch", help="input sketch PNG")
    ap.add_argument("--out", default=None,
                    help="output stem (default: sketch name)")
    args = ap.parse_args()

    params, _, _, cfg, _ = load_checkpoint(args.checkpoint)
    sketch = load_png(args.sketch).astype("float32")
    mesh = infer_mesh(sketch, params, cfg.net_config())
    if not check_watertight(mesh):
        print("inferred mesh failed the watertightness check")
        return 2

    stem = Path(args.out) if args.out else Path(args.sketch).with_suffix("")
    stem.with_suffix(".obj").write_bytes(export_obj(mesh))
    stem.with_suffix(".stl").write_bytes(export_stl(mesh))
    print(f"{mesh.n_vertices} vertices / {mesh.n_faces} faces -> "
          f"{stem.with_suffix('.obj')} + {stem.with_suffix('.stl')}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
