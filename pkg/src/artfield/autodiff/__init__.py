from .encoding import encode_np, encoded_dim, positional_encoding
from .gradcheck import GradCheckResult, grad_check
from .mlp import (BoundMlp, MlpParams, MlpShapeError, MlpSpec, geometric_init, mlp_eval,
                  mlp_forward, random_init)
from .optim import NonFiniteGradientError, OptimState, adam_step
from .tensor import Tensor, backward

__all__ = [
    "BoundMlp", "GradCheckResult", "MlpParams", "MlpShapeError", "MlpSpec",
    "NonFiniteGradientError", "OptimState", "Tensor", "adam_step", "backward",
    "encode_np", "encoded_dim", "geometric_init", "grad_check", "mlp_eval",
    "mlp_forward", "positional_encoding", "random_init",
]
