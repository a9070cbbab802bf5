from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, block: str):
        self.block = block
        super().__init__(f"non-finite gradient in parameter block {block!r}")


@dataclass
class OptimState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> OptimState:
        return cls(np.zeros(params.shape), np.zeros(params.shape))

    def copy(self) -> OptimState:
        return OptimState(self.first_moment.copy(), self.second_moment.copy(), self.step,
                          self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimState, lr: float,
              block: str = "params") -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if grads.shape != params.shape or state.first_moment.shape != params.shape:
        raise ValueError(f"{block}: shape mismatch between parameters, gradient and moments")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(block)
    state.step += 1
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** state.step)
    v_hat = v / (1.0 - state.beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
