from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_compared: int
    noncomparable: list[int] = field(default_factory=list)
    analytic: np.ndarray | None = field(default=None, repr=False)
    numeric: np.ndarray | None = field(default=None, repr=False)

    def passed(self, tol: float) -> bool:
        return self.n_compared == 0 or self.max_rel_error < tol


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5,
               kink_tol: float = 1e-2, floor: float = 1e-3) -> GradCheckResult:
    """Compare the tape gradient of scalar ``fn`` with central differences.

    Coordinates where the one-sided differences disagree by more than
    ``kink_tol`` (relative) sit on a non-differentiable point and are listed
    as non-comparable instead of counted.  Relative error of a coordinate is
    |a - n| / max(|a|, |n|, floor * largest gradient entry, 1e-12).
    """
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = fn(leaf)
    analytic = backward(out, [leaf])[leaf].reshape(-1)

    def f(x):
        return float(fn(Tensor(x)).value)

    f0 = f(x0)
    flat = x0.reshape(-1)
    numeric = np.zeros(flat.size)
    kinks = []
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        fp = f(xp.reshape(x0.shape))
        fm = f(xm.reshape(x0.shape))
        numeric[i] = (fp - fm) / (2 * eps)
        fwd, bwd = (fp - f0) / eps, (f0 - fm) / eps
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
            kinks.append(i)

    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    keep = np.ones(flat.size, dtype=bool)
    keep[kinks] = False
    denom = np.maximum.reduce([np.abs(analytic), np.abs(numeric),
                               np.full(flat.size, max(floor * scale, 1e-12))])
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(np.max(rel[keep], initial=0.0))
    return GradCheckResult(max_rel, int(keep.sum()), kinks, analytic, numeric)
