"""Coordinate networks, latent codes and their composition per method variant.

Four variants share one interface ``(x, shape code, articulation code) -> sdf``:

========  ======================  =================
variant   articulation codes      deformation field
========  ======================  =================
base      one per (instance,state)  no
art       one per state (shared)    no
def       one per (instance,state)  yes
artdef    one per state (shared)    yes
========  ======================  =================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .autodiff import tensor as T
from .autodiff.encoding import encode_np, encoded_dim, positional_encoding
from .autodiff.mlp import BoundMlp, MlpParams, MlpSpec, geometric_init, mlp_eval, mlp_forward, random_init
from .autodiff.tensor import Tensor

CODE_KINDS = ("shape", "appearance", "articulation")
DEFAULT_CODE_DIMS = {"shape": 256, "appearance": 256, "articulation": 8}
VARIANTS = ("base", "art", "def", "artdef")
# forward-only evaluation works on cache-sized blocks; tape passes on larger ones
CHUNK, GRAD_CHUNK = 4096, 8192


def normalize_variant(variant: str) -> str:
    v = variant.lower()
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return v


def variant_shares_articulation(variant: str) -> bool:
    return normalize_variant(variant) in ("art", "artdef")


def variant_has_deformation(variant: str) -> bool:
    return normalize_variant(variant) in ("def", "artdef")


@dataclass
class LatentCode:
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in CODE_KINDS:
            raise ValueError(f"unknown code kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("latent code must be a vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.kind} code has non-finite entries")

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> LatentCode:
        return LatentCode(self.kind, self.values.copy())


@dataclass
class CodeBook:
    """Per-instance shape/appearance codes and articulation codes.

    With ``shared`` the articulation table is keyed by state id, otherwise by
    (instance id, state id).
    """

    shared: bool
    shape: dict[int, LatentCode] = field(default_factory=dict)
    appearance: dict[int, LatentCode] = field(default_factory=dict)
    articulation: dict[Hashable, LatentCode] = field(default_factory=dict)

    def articulation_key(self, instance: int, state: int):
        return state if self.shared else (instance, state)

    def resolve(self, instance: int, state: int) -> tuple[LatentCode, LatentCode, LatentCode]:
        try:
            return (self.shape[instance], self.appearance[instance],
                    self.articulation[self.articulation_key(instance, state)])
        except KeyError as exc:
            raise KeyError(f"no codes for instance {instance}, state {state}") from exc

    def copy(self) -> CodeBook:
        return CodeBook(
            self.shared,
            {k: c.copy() for k, c in self.shape.items()},
            {k: c.copy() for k, c in self.appearance.items()},
            {k: c.copy() for k, c in self.articulation.items()},
        )

    def counts(self) -> tuple[int, int, int]:
        return len(self.shape), len(self.appearance), len(self.articulation)


@dataclass
class FieldModel:
    variant: str
    geometry: MlpParams
    appearance: MlpParams
    deformation: MlpParams | None = None
    point_freqs: int = 6
    view_freqs: int = 4
    code_dims: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CODE_DIMS))

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if variant_has_deformation(self.variant) != (self.deformation is not None):
            raise ValueError(f"variant {self.variant!r} and presence of a deformation net disagree")
        if self.geometry.spec.output_dim != 1:
            raise ValueError("geometry net must have scalar output")
        if self.appearance.spec.output_dim != 3:
            raise ValueError("appearance net must output rgb")
        if self.deformation is not None and self.deformation.spec.output_dim != 3:
            raise ValueError("deformation net must output a 3-vector")

    @property
    def shares_articulation(self) -> bool:
        return variant_shares_articulation(self.variant)

    def networks(self) -> dict[str, MlpParams]:
        nets = {"geometry": self.geometry, "appearance": self.appearance}
        if self.deformation is not None:
            nets["deformation"] = self.deformation
        return nets

    def bind(self, requires_grad: bool = True) -> BoundField:
        return BoundField(
            self,
            self.geometry.bind(requires_grad, "geometry"),
            self.appearance.bind(requires_grad, "appearance"),
            None if self.deformation is None else self.deformation.bind(requires_grad, "deformation"),
        )

    def copy(self) -> FieldModel:
        return FieldModel(self.variant, self.geometry.copy(), self.appearance.copy(),
                          None if self.deformation is None else self.deformation.copy(),
                          self.point_freqs, self.view_freqs, dict(self.code_dims))


@dataclass
class BoundField:
    """A model whose parameters are tape leaves for one optimization step."""

    model: FieldModel
    geometry: BoundMlp
    appearance: BoundMlp
    deformation: BoundMlp | None

    @property
    def variant(self) -> str:
        return self.model.variant

    def networks(self) -> dict[str, BoundMlp]:
        nets = {"geometry": self.geometry, "appearance": self.appearance}
        if self.deformation is not None:
            nets["deformation"] = self.deformation
        return nets


def network_specs(variant: str, point_freqs: int = 6, view_freqs: int = 4,
                  geometry_widths=(512,) * 8, deformation_widths=(512,) * 8,
                  appearance_widths=(512,) * 4, code_dims=None) -> dict[str, MlpSpec]:
    """Specs for the three networks; defaults are the full-size architecture."""
    variant = normalize_variant(variant)
    dims = dict(DEFAULT_CODE_DIMS if code_dims is None else code_dims)
    pdim = encoded_dim(3, point_freqs)
    has_def = variant_has_deformation(variant)
    geo_in = pdim + dims["shape"] + (0 if has_def else dims["articulation"])
    specs = {
        "geometry": MlpSpec(geo_in, tuple(geometry_widths), 1, "softplus", "none",
                            _middle(geometry_widths)),
        "appearance": MlpSpec(pdim + 3 + encoded_dim(3, view_freqs) + dims["appearance"],
                              tuple(appearance_widths), 3, "relu", "tanh"),
    }
    if has_def:
        specs["deformation"] = MlpSpec(pdim + dims["shape"] + dims["articulation"],
                                       tuple(deformation_widths), 3, "softplus", "none",
                                       _middle(deformation_widths))
    return specs


def _middle(widths) -> int | None:
    n = len(widths)
    return n // 2 if n >= 2 else None


def create_model(variant: str, rng=None, init_radius: float = 0.5, point_freqs: int = 6,
                 view_freqs: int = 4, geometry_widths=(512,) * 8, deformation_widths=(512,) * 8,
                 appearance_widths=(512,) * 4, code_dims=None) -> FieldModel:
    rng = np.random.default_rng(0) if rng is None else rng
    specs = network_specs(variant, point_freqs, view_freqs, geometry_widths,
                          deformation_widths, appearance_widths, code_dims)
    geometry = geometric_init(specs["geometry"], init_radius, rng)
    deformation = None
    if "deformation" in specs:
        deformation = geometric_init_deformation(specs["deformation"], rng)
    appearance = random_init(specs["appearance"], rng)
    return FieldModel(variant, geometry, appearance, deformation, point_freqs, view_freqs,
                      dict(DEFAULT_CODE_DIMS if code_dims is None else code_dims))


def geometric_init_deformation(spec: MlpSpec, rng, last_std: float = 1e-4) -> MlpParams:
    """Hidden layers as in the geometry init, output layer near zero."""
    params = MlpParams.zeros(spec)
    layers = params.layers()
    for k, (w, b) in enumerate(layers):
        if k == len(layers) - 1:
            w[:] = rng.normal(0.0, last_std, size=w.shape)
            b[:] = 0.0
        else:
            w[:] = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(w.shape[1]), size=w.shape)
            b[:] = 0.0
    return params


def _bind(model) -> BoundField:
    if isinstance(model, BoundField):
        return model
    if isinstance(model, FieldModel):
        return model.bind(requires_grad=False)
    raise TypeError(f"expected FieldModel or BoundField, got {type(model).__name__}")


def _code(c) -> Tensor:
    if isinstance(c, LatentCode):
        return Tensor(c.values)
    return T.as_tensor(c)


def _identity_tangent(n: int) -> np.ndarray:
    return np.broadcast_to(np.eye(3), (n, 3, 3))


# -- tape operations -------------------------------------------------------
def deform(x, theta, psi, model, tangent=None):
    """x' = x + D(x, theta, psi); with ``tangent`` also returns dx'."""
    bf = _bind(model)
    if bf.deformation is None:
        raise ValueError(f"variant {bf.variant!r} has no deformation field")
    x = T.as_tensor(x)
    cond = T.concat([_code(theta), _code(psi)])
    enc = positional_encoding(x, bf.model.point_freqs, tangent)
    if tangent is None:
        disp = mlp_forward(bf.deformation.spec, bf.deformation, enc, cond)
        return x + disp
    disp, ddisp = mlp_forward(bf.deformation.spec, bf.deformation, enc[0], cond, tangent=enc[1])
    return x + disp, T.as_tensor(tangent) + ddisp


def _geometry(bf: BoundField, x, dx, theta, psi):
    if bf.deformation is not None:
        cond = _code(theta)
    else:
        cond = T.concat([_code(theta), _code(psi)])
    enc = positional_encoding(x, bf.model.point_freqs, dx)
    if dx is None:
        return mlp_forward(bf.geometry.spec, bf.geometry, enc, cond), None
    return mlp_forward(bf.geometry.spec, bf.geometry, enc[0], cond, tangent=enc[1])


def sdf(x, theta, psi, model) -> Tensor:
    """Signed distance at rows of ``x``; shape (N,)."""
    bf = _bind(model)
    x = T.as_tensor(x)
    if bf.deformation is not None:
        x = deform(x, theta, psi, bf)
    f, _ = _geometry(bf, x, None, theta, psi)
    return T.reshape(f, f.shape[:-1])


def sdf_and_gradient(x, theta, psi, model) -> tuple[Tensor, Tensor]:
    """(f, grad_x f) with the gradient built from forward-mode tangents.

    The gradient is itself a tape node, so losses on it (Eikonal, normals)
    differentiate into the network parameters and codes.
    """
    bf = _bind(model)
    x = T.as_tensor(x)
    dx = _identity_tangent(x.shape[0])
    if bf.deformation is not None:
        x, dx = deform(x, theta, psi, bf, tangent=dx)
    f, df = _geometry(bf, x, dx, theta, psi)
    n = f.shape[0]
    return T.reshape(f, (n,)), T.reshape(df, (n, 3))


def sdf_gradient(x, theta, psi, model) -> Tensor:
    return sdf_and_gradient(x, theta, psi, model)[1]


def radiance(xhat, normal, view, phi, model) -> Tensor:
    """Colour in [0, 1]^3 from the appearance net's tanh output."""
    bf = _bind(model)
    pf, vf = bf.model.point_freqs, bf.model.view_freqs
    feats = T.concat([positional_encoding(xhat, pf), T.as_tensor(normal),
                      positional_encoding(view, vf)], axis=-1)
    out = mlp_forward(bf.appearance.spec, bf.appearance, feats, _code(phi))
    return out * 0.5 + 0.5


# -- forward-only helpers on plain arrays ----------------------------------
def _vals(c) -> np.ndarray:
    if isinstance(c, LatentCode):
        return c.values
    if isinstance(c, Tensor):
        return c.value
    return np.asarray(c, dtype=np.float64)


def _sdf_eval(model: FieldModel, x: np.ndarray, theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    code = np.concatenate([theta, psi])
    if model.deformation is not None:
        spec = model.deformation.spec
        x = x + mlp_eval(spec, model.deformation, encode_np(x, model.point_freqs), code)
        code = theta
    f = mlp_eval(model.geometry.spec, model.geometry, encode_np(x, model.point_freqs), code)
    return f[:, 0]


def sdf_np(model: FieldModel, x: np.ndarray, theta, psi) -> np.ndarray:
    """Forward-only signed distance on plain arrays (no tape)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    theta, psi = _vals(theta), _vals(psi)
    out = np.empty(len(x))
    for s in range(0, len(x), CHUNK):
        out[s:s + CHUNK] = _sdf_eval(model, x[s:s + CHUNK], theta, psi)
    return out


def sdf_grad_np(model: FieldModel, x: np.ndarray, theta, psi) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    theta, psi = _vals(theta), _vals(psi)
    f = np.empty(len(x))
    g = np.empty((len(x), 3))
    step = GRAD_CHUNK
    for s in range(0, len(x), step):
        fs, gs = sdf_and_gradient(Tensor(x[s:s + step]), theta, psi, model)
        f[s:s + step], g[s:s + step] = fs.value, gs.value
    return f, g


def radiance_np(model: FieldModel, xhat, normal, view, phi) -> np.ndarray:
    return radiance(Tensor(xhat), Tensor(normal), Tensor(view), _vals(phi), model).value
