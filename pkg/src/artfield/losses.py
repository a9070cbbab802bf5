from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .fields import sdf_and_gradient


@dataclass(frozen=True)
class LossWeights:
    mask: float = 100.0
    eikonal: float = 0.1
    code: float = 1e-4

    def __post_init__(self):
        if min(self.mask, self.eikonal, self.code) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    rgb: float
    mask: float
    eikonal: float
    code: float
    total: float
    n_in: int = 0
    n_out: int = 0

    def row(self) -> list[float]:
        return [self.rgb, self.mask, self.eikonal, self.code, self.total]


def rgb_loss(pred: Tensor, target: np.ndarray, batch_size: int) -> Tensor:
    """Sum of per-pixel L1 colour errors over hit pixels, divided by |P|."""
    if pred.shape[0] == 0:
        return Tensor(0.0)
    return T.absolute(pred - Tensor(target)).sum() * (1.0 / batch_size)


def mask_loss(logits: Tensor, occupancy: np.ndarray, alpha: float, batch_size: int) -> Tensor:
    """Binary cross-entropy of the soft mask on the outside pixels.

    ``logits`` are -alpha * min f per pixel, so the soft mask is their
    sigmoid; CE is written through softplus to stay finite for large alpha.
    """
    if logits.shape[0] == 0:
        return Tensor(0.0)
    o = Tensor(np.asarray(occupancy, dtype=np.float64))
    ce = o * T.softplus(-logits) + (1.0 - o) * T.softplus(logits)
    return ce.sum() * (1.0 / (alpha * batch_size))


def eikonal_term(gradients: Tensor) -> Tensor:
    """mean((|g| - 1)^2) over rows of a gradient tensor."""
    return T.mean((T.norm(gradients, axis=-1) - 1.0) ** 2)


def eikonal_loss(model, theta, psi, n_samples: int, bounds: float, rng) -> Tensor:
    """Eikonal penalty at uniform samples from the cube [-bounds, bounds]^3."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = rng.uniform(-bounds, bounds, size=(n_samples, 3))
    _, g = sdf_and_gradient(Tensor(x), theta, psi, model)
    return eikonal_term(g)


def code_prior(theta, phi, psi) -> Tensor:
    total = Tensor(0.0)
    for c in (theta, phi, psi):
        c = T.as_tensor(c)
        total = total + (c * c).sum()
    return total


def weighted_sum(rgb, mask, eikonal, code, weights: LossWeights) -> Tensor:
    """Tape version of the weighted objective."""
    return (T.as_tensor(rgb) + T.as_tensor(mask) * weights.mask
            + T.as_tensor(eikonal) * weights.eikonal + T.as_tensor(code) * weights.code)


def total_loss(rgb, mask, eikonal, code, weights: LossWeights, n_in: int = 0, n_out: int = 0) -> LossBreakdown:
    vals = [float(T.as_tensor(v).value) for v in (rgb, mask, eikonal, code)]
    total = vals[0] + weights.mask * vals[1] + weights.eikonal * vals[2] + weights.code * vals[3]
    return LossBreakdown(*vals, total=total, n_in=n_in, n_out=n_out)
