"""Single-view sketch to 3D mesh reconstruction.

The package is organized around a small reverse-mode autodiff core
(`autodiff`), mesh utilities (`geometry`), a differentiable silhouette
rasterizer (`render`), the encoder/decoder/discriminator networks
(`networks`), training losses (`losses`), procedural data (`data`), the
training loop (`training`), and a CLI plus HTTP service on top.
"""
from .autodiff import GradientMap, Tape, Tensor, backward, grad_check
from .geometry import Mesh, check_watertight, icosphere
from .render import CameraPose, RenderConfig, canonical_pose, render_silhouette
from .training import TrainConfig, evaluate, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "GradientMap", "Tape", "Tensor", "backward", "grad_check",
    "Mesh", "check_watertight", "icosphere",
    "CameraPose", "RenderConfig", "canonical_pose", "render_silhouette",
    "TrainConfig", "evaluate", "load_checkpoint", "train",
    "__version__",
]
