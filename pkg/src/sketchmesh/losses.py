"""Training objectives: soft-silhouette IoU, its multi-scale sum, mesh
smoothness regularizers, and the non-saturating GAN pair."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import edge_face_pairs, flatten_term, laplacian_term, neighbor_matrix

IOU_EPS = 1e-6
SCALE_WEIGHTS = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
LAMBDA_FLAT = 5e-4
LAMBDA_LAP = 5e-3


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def iou_loss(s1, s2, eps: float = IOU_EPS) -> Tensor:
    """1 - |S1 (x) S2| / |S1 (+) S2 - S1 (x) S2| on soft silhouettes.

    The epsilon sits in both numerator and denominator, which keeps the
    loss differentiable everywhere and makes an empty-vs-empty pair score
    a perfect 0 instead of 0/0.
    """
    s1, s2 = _as_t(s1), _as_t(s2)
    if s1.shape != s2.shape:
        raise ad.ShapeError(f"silhouette shapes differ: {s1.shape} vs {s2.shape}")
    prod = ad.mul(s1, s2)
    inter = ad.tsum(prod)
    union = ad.tsum(ad.sub(ad.add(s1, s2), prod))
    e = Tensor(np.float32(eps))
    ratio = ad.mul(ad.add(inter, e), ad.power(ad.add(union, e), -1.0))
    return ad.sub(Tensor(np.float32(1.0)), ratio)


def multiscale_iou_loss(pred, gt, weights=SCALE_WEIGHTS) -> Tensor:
    """Weighted IoU loss at quarter, half, and full resolution; the coarse
    scales come from 2x2 average-pooling per octave."""
    pred, gt = _as_t(pred), _as_t(gt)
    total = None
    for w, k in zip(weights, (4, 2, 1)):
        p = ad.avg_pool2d(pred, k) if k > 1 else pred
        g = ad.avg_pool2d(gt, k) if k > 1 else gt
        term = ad.mul(iou_loss(p, g), Tensor(np.float32(w)))
        total = term if total is None else ad.add(total, term)
    return total


class MeshRegularizer:
    """Precomputed topology for the smoothness terms of one face layout."""

    def __init__(self, faces: np.ndarray, n_verts: int):
        self.faces = np.asarray(faces, dtype=np.int64)
        self.pairs = edge_face_pairs(self.faces)
        self.nbr = neighbor_matrix(self.faces, n_verts)

    def flatten(self, verts: Tensor) -> Tensor:
        return flatten_term(verts, self.faces, self.pairs)

    def laplacian(self, verts: Tensor) -> Tensor:
        return laplacian_term(verts, self.nbr)

    def combined(self, verts: Tensor, lambda_flat: float = LAMBDA_FLAT,
                 lambda_lap: float = LAMBDA_LAP) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (weighted total, flatten term, laplacian term)."""
        fl = self.flatten(verts)
        lap = self.laplacian(verts)
        total = ad.add(ad.mul(fl, Tensor(np.float32(lambda_flat))),
                       ad.mul(lap, Tensor(np.float32(lambda_lap))))
        return total, fl, lap


def gan_f(u: Tensor) -> Tensor:
    """f(u) = -log(1 + exp(-u)), evaluated without overflow; f(0) = -log 2."""
    return ad.mul(ad.softplus(ad.mul(_as_t(u), Tensor(np.float32(-1.0)))),
                  Tensor(np.float32(-1.0)))


def _view_mean(x: Tensor) -> Tensor:
    # average the views of each mesh first, then the batch
    if x.data.ndim == 2:
        return ad.tmean(ad.tmean(x, axis=1))
    return ad.tmean(x)


def gan_discriminator_loss(real_logits, fake_logits) -> Tensor:
    """-E[f(real)] - E[f(-fake)]; at all-zero logits this is exactly 2 log 2."""
    real, fake = _as_t(real_logits), _as_t(fake_logits)
    neg = Tensor(np.float32(-1.0))
    return ad.add(_view_mean(ad.mul(gan_f(real), neg)),
                  _view_mean(ad.mul(gan_f(ad.mul(fake, neg)), neg)))


def gan_generator_loss(fake_logits) -> Tensor:
    """-E[f(fake)]: the non-saturating generator objective."""
    fake = _as_t(fake_logits)
    return _view_mean(ad.mul(gan_f(fake), Tensor(np.float32(-1.0))))
