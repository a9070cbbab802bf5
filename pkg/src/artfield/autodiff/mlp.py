"""Fully connected networks with optional forward-mode tangents.

Parameters live in one flat float64 vector per network (the checkpoint
layout); binding a network for the tape creates one leaf per weight matrix
and bias as views into that vector, so an in-place optimizer update on the
flat vector is immediately visible to the next forward pass.

Inputs may be split into per-point features ``x`` and a per-batch
conditioning vector ``cond`` (a latent code) that is logically concatenated
onto every row.  The code contribution to the first layer is then computed
once per call instead of once per point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = ("softplus", "relu")
OUTPUT_ACTIVATIONS = ("none", "tanh")


class MlpShapeError(ValueError):
    """Input width does not match what a layer expects."""

    def __init__(self, layer: int, expected: int, got: int):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(f"layer {layer}: expected input width {expected}, got {got}")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "softplus"
    output_activation: str = "none"
    skip_input_at: int | None = None
    softplus_beta: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.skip_input_at is not None and not 1 <= self.skip_input_at < len(self.hidden_widths):
            raise ValueError(
                f"skip_input_at={self.skip_input_at} is not a hidden layer index in "
                f"[1, {len(self.hidden_widths) - 1}]"
            )

    @property
    def n_layers(self) -> int:
        return len(self.hidden_widths) + 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every affine layer, output layer last."""
        widths = list(self.hidden_widths) + [self.output_dim]
        shapes = []
        fan_in = self.input_dim
        for k, w in enumerate(widths):
            if k == self.skip_input_at:
                fan_in += self.input_dim
            shapes.append((fan_in, w))
            fan_in = w
        return shapes

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "output_activation": self.output_activation,
            "skip_input_at": self.skip_input_at,
            "softplus_beta": self.softplus_beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpSpec:
        return cls(**{**d, "hidden_widths": tuple(d["hidden_widths"])})


@dataclass
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(
                f"flat parameter vector has {self.flat.size} entries, spec needs {self.spec.n_params}"
            )

    @classmethod
    def zeros(cls, spec: MlpSpec) -> MlpParams:
        return cls(spec, np.zeros(spec.n_params))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) views into ``flat``; weight is (fan_in, fan_out)."""
        out = []
        off = 0
        for fan_in, fan_out in self.spec.layer_shapes():
            w = self.flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = self.flat[off:off + fan_out]
            off += fan_out
            out.append((w, b))
        return out

    def bind(self, requires_grad: bool = True, name: str = "") -> BoundMlp:
        leaves = [
            (Tensor(w, requires_grad, f"{name}.W{k}"), Tensor(b, requires_grad, f"{name}.b{k}"))
            for k, (w, b) in enumerate(self.layers())
        ]
        return BoundMlp(self.spec, leaves)

    def copy(self) -> MlpParams:
        return MlpParams(self.spec, self.flat.copy())


@dataclass
class BoundMlp:
    """Tape leaves for one network."""

    spec: MlpSpec
    layers: list[tuple[Tensor, Tensor]]

    def leaves(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]

    def flat_grad(self) -> np.ndarray:
        parts = []
        for w, b in self.layers:
            parts.append(np.zeros(w.size) if w.grad is None else w.grad.reshape(-1))
            parts.append(np.zeros(b.size) if b.grad is None else b.grad.reshape(-1))
        return np.concatenate(parts)


def _bound(params) -> BoundMlp:
    if isinstance(params, BoundMlp):
        return params
    if isinstance(params, MlpParams):
        return params.bind(requires_grad=False)
    raise TypeError(f"expected MlpParams or BoundMlp, got {type(params).__name__}")


def _affine(w: Tensor, b: Tensor, parts, cond):
    """Affine map of concat(parts..., cond) with weight rows split to match.

    ``parts`` is a list of (primal, tangent-or-None); tangents have one extra
    axis (directions) before the feature axis.  Returns (z, dz).
    """
    z = None
    dz = None
    row = 0
    for primal, tangent in parts:
        width = primal.shape[-1]
        wk = w if (row == 0 and width == w.shape[0]) else w[row:row + width]
        term = primal @ wk
        z = term if z is None else z + term
        if tangent is not None:
            dterm = tangent @ wk
            dz = dterm if dz is None else dz + dterm
        row += width
    bias = b
    if cond is not None:
        bias = cond @ w[row:] + b
        row += cond.shape[-1]
    return z + bias, dz


def _check_widths(spec: MlpSpec, x: Tensor, cond: Tensor | None):
    got = x.shape[-1] + (0 if cond is None else cond.shape[-1])
    if got != spec.input_dim:
        raise MlpShapeError(0, spec.input_dim, got)


def mlp_forward(spec: MlpSpec, params, x, cond=None, tangent=None):
    """Evaluate the network on rows of ``x`` (plus broadcast ``cond``).

    Without ``tangent`` returns the output tensor.  With ``tangent`` of shape
    (..., K, dim(x)) holding K input directions, also pushes those directions
    through the network and returns ``(y, dy)`` with dy of shape
    (..., K, output_dim).  Both are ordinary tape nodes, so gradients of a
    function of ``dy`` reach the parameters.
    """
    bound = _bound(params)
    x = T.as_tensor(x)
    cond = None if cond is None else T.as_tensor(cond)
    tan = None if tangent is None else T.as_tensor(tangent)
    _check_widths(spec, x, cond)
    if bound.spec.n_layers != spec.n_layers:
        raise MlpShapeError(0, spec.n_layers, bound.spec.n_layers)

    h, dh = x, tan
    parts = [(x, tan)]
    n_hidden = len(spec.hidden_widths)
    beta = spec.softplus_beta
    for k, (w, b) in enumerate(bound.layers):
        if k == spec.skip_input_at:
            parts = [(h, dh), (x, tan)]
        expected = w.shape[0] - (0 if (cond is None or k not in (0, spec.skip_input_at)) else cond.shape[-1])
        got = sum(p.shape[-1] for p, _ in parts)
        if got != expected:
            raise MlpShapeError(k, expected, got)
        use_cond = cond if k in (0, spec.skip_input_at) else None
        z, dz = _affine(w, b, parts, use_cond)
        if k < n_hidden:
            if spec.activation == "softplus":
                h = T.softplus(z, beta)
                if dz is not None:
                    dz_scale = T.sigmoid(z * beta)
            else:
                h = T.relu(z)
                if dz is not None:
                    dz_scale = Tensor(z.value > 0.0)
            dh = None
            if dz is not None:
                dh = dz * _expand_dirs(dz_scale)
            parts = [(h, dh)]
        else:
            h, dh = z, dz
            if spec.output_activation == "tanh":
                h = T.tanh(z)
                if dz is not None:
                    dh = dz * _expand_dirs(1.0 - h * h)
    if tangent is None:
        return h
    return h, dh


def _expand_dirs(t: Tensor) -> Tensor:
    # (..., F) -> (..., 1, F) so it broadcasts over the direction axis
    return T.reshape(t, t.shape[:-1] + (1, t.shape[-1]))


def mlp_eval(spec: MlpSpec, params: MlpParams, x: np.ndarray, cond: np.ndarray | None = None) -> np.ndarray:
    """Forward pass on plain arrays, recording nothing.

    Same arithmetic as ``mlp_forward`` without tape bookkeeping; the code
    contribution to the first and skip layers is folded into their bias.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] + (0 if cond is None else np.shape(cond)[-1]) != spec.input_dim:
        raise MlpShapeError(0, spec.input_dim, x.shape[-1] + (0 if cond is None else np.shape(cond)[-1]))
    n_hidden = len(spec.hidden_widths)
    beta = spec.softplus_beta
    h = x
    for k, (w, b) in enumerate(params.layers()):
        if k == spec.skip_input_at:
            width = h.shape[-1]
            z = h @ w[:width] + x @ w[width:width + x.shape[-1]]
            row = width + x.shape[-1]
        else:
            row = h.shape[-1]
            z = h @ w[:row]
        bias = b
        if cond is not None and k in (0, spec.skip_input_at):
            bias = np.asarray(cond) @ w[row:] + b
        z += bias
        if k < n_hidden:
            if spec.activation == "softplus":
                h = T.softplus_inplace(z, beta)
            else:
                h = np.maximum(z, 0.0, out=z)
        else:
            h = np.tanh(z) if spec.output_activation == "tanh" else z
    return h


# -- initialisation --------------------------------------------------------
def geometric_init(spec: MlpSpec, radius: float, rng=None, n_coord_inputs: int = 3) -> MlpParams:
    """Weights whose network output approximates ``|x| - radius``.

    Only the first ``n_coord_inputs`` inputs (the raw coordinates) receive
    non-zero first-layer and skip weights; encodings and codes start with
    zero influence.  The last layer uses a positive mean weight so the output
    grows with the radial distance.
    """
    if spec.output_dim != 1:
        raise ValueError("geometric_init needs a scalar-output network")
    rng = np.random.default_rng(0) if rng is None else rng
    params = MlpParams.zeros(spec)
    layers = params.layers()
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        fan_in, fan_out = w.shape
        if k == last:
            w[:] = rng.normal(np.sqrt(np.pi) / np.sqrt(fan_in), 1e-4, size=w.shape)
            b[:] = -radius
            continue
        std = np.sqrt(2.0) / np.sqrt(fan_out)
        b[:] = 0.0
        if k == 0:
            w[:] = 0.0
            w[:n_coord_inputs] = rng.normal(0.0, std, size=(n_coord_inputs, fan_out))
        elif k == spec.skip_input_at:
            w[:] = rng.normal(0.0, std, size=w.shape)
            prev = fan_in - spec.input_dim
            w[prev + n_coord_inputs:] = 0.0
        else:
            w[:] = rng.normal(0.0, std, size=w.shape)
    return params


def random_init(spec: MlpSpec, rng=None, last_std: float | None = None) -> MlpParams:
    """He-style init; ``last_std`` overrides the output layer's scale."""
    rng = np.random.default_rng(0) if rng is None else rng
    params = MlpParams.zeros(spec)
    layers = params.layers()
    for k, (w, b) in enumerate(layers):
        fan_in, _ = w.shape
        std = np.sqrt(2.0 / fan_in)
        if k == len(layers) - 1 and last_std is not None:
            std = last_std
        w[:] = rng.normal(0.0, std, size=w.shape)
        b[:] = 0.0
    return params
