"""Auto-decoder training: datasets, schedules, the optimization step and checkpoints."""
from __future__ import annotations

import json
import math
import struct
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import tensor as T
from .autodiff.mlp import MlpParams, MlpSpec
from .autodiff.optim import NonFiniteGradientError, OptimState, adam_step
from .autodiff.tensor import Tensor, backward
from .errors import CheckpointFormatError, CheckpointVersionError, DataFormatError, NumericalError
from .fields import (CODE_KINDS, DEFAULT_CODE_DIMS, CodeBook, FieldModel, LatentCode, create_model,
                     normalize_variant, radiance, sdf_and_gradient, variant_shares_articulation)
from .imageio import read_pgm, read_ppm
from .losses import (LossBreakdown, LossWeights, code_prior, eikonal_term, mask_loss, rgb_loss,
                     total_loss, weighted_sum)
from .renderer import Camera, Rays, RenderSettings, differentiable_hit, generate_rays, soft_mask_logits, trace

MAGIC = b"ARTFCKPT"
FORMAT_VERSION = 1
LOG_COLUMNS = ("iter", "lr", "alpha", "rgb", "mask", "eikonal", "code", "total")


# -- dataset ----------------------------------------------------------------
@dataclass
class View:
    camera: Camera
    rgb_path: Path
    mask_path: Path


@dataclass
class DatasetIndex:
    """Posed, masked images for M instances at N states.

    ``views[(i, j)]`` lists the views of instance i at state j.  Ground-truth
    articulations and scene descriptions are carried for evaluation only.
    """

    category: str
    instances: list[str]
    states: list[str]
    views: dict[tuple[int, int], list[View]]
    articulations: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    scenes: list[dict] = field(default_factory=list)
    root: Path | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.instances or not self.states:
            raise DataFormatError("dataset needs at least one instance and one state")
        for i in range(len(self.instances)):
            for j in range(len(self.states)):
                if not self.views.get((i, j)):
                    raise DataFormatError(f"no views for {self.instances[i]}/{self.states[j]}")

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_instances) for j in range(self.n_states)]

    def image(self, i: int, j: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(rgb (H, W, 3), occupancy (H, W) bool) for one view, cached."""
        key = (i, j, k)
        if key not in self._cache:
            view = self.views[(i, j)][k]
            rgb = read_ppm(view.rgb_path)
            mask = read_pgm(view.mask_path)
            cam = view.camera
            if rgb.shape[:2] != (cam.height, cam.width) or mask.shape != (cam.height, cam.width):
                raise DataFormatError(f"{view.rgb_path}: image size does not match its camera "
                                      f"({cam.width}x{cam.height})")
            self._cache[key] = (rgb, mask > 0.5)
        return self._cache[key]

    @classmethod
    def load(cls, root, view_set: str | None = None) -> DatasetIndex:
        from .scenegen import read_cameras

        root = Path(root)
        man_path = root / "dataset.json"
        if not man_path.exists():
            raise DataFormatError(f"{root}: missing dataset.json")
        try:
            man = json.loads(man_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{man_path}: {exc}") from exc
        sets = man.get("view_sets")
        if sets and view_set is None:
            raise DataFormatError(f"{root}: choose a view set from {sets}")
        if view_set is not None and (not sets or view_set not in sets):
            raise DataFormatError(f"{root}: no view set {view_set!r}")
        instances, states, views, arts, scenes = [], [], {}, {}, []
        for i, inst in enumerate(man["instances"]):
            instances.append(inst["id"])
            scenes.append(inst.get("scene"))
            ids = [s["id"] for s in inst["states"]]
            if i == 0:
                states = ids
            elif ids != states:
                raise DataFormatError(f"{inst['id']}: state ids differ from the first instance")
            for j, st in enumerate(inst["states"]):
                d = root / inst["id"] / st["id"]
                if view_set is not None:
                    d = d / view_set
                views[(i, j)] = _read_view_dir(d, read_cameras)
                arts[(i, j)] = np.asarray(st.get("articulation", []), dtype=np.float64)
        return cls(man["category"], instances, states, views, arts, scenes, root)

    @classmethod
    def from_view_dirs(cls, dirs, category: str = "unknown") -> DatasetIndex:
        """One instance whose states are the given view directories."""
        from .scenegen import read_cameras

        dirs = [Path(d) for d in dirs]
        views = {(0, j): _read_view_dir(d, read_cameras) for j, d in enumerate(dirs)}
        return cls(category, ["instance_000"], [f"state_{j:03d}" for j in range(len(dirs))], views)

    def subset(self, pairs_or_views) -> DatasetIndex:
        """Restrict views: ``{(i, j): [view indices]}``."""
        views = {key: [self.views[key][k] for k in ks] for key, ks in pairs_or_views.items()}
        keep_i = sorted({i for i, _ in views})
        keep_j = sorted({j for _, j in views})
        remap = {(i, j): (keep_i.index(i), keep_j.index(j)) for i, j in views}
        return DatasetIndex(self.category, [self.instances[i] for i in keep_i], [self.states[j] for j in keep_j],
                            {remap[k]: v for k, v in views.items()},
                            {remap[k]: self.articulations[k] for k in views if k in self.articulations},
                            [self.scenes[i] for i in keep_i] if self.scenes else [], self.root)


def _read_view_dir(d: Path, read_cameras) -> list[View]:
    cam_file = d / "cameras.txt"
    if not cam_file.exists():
        raise DataFormatError(f"{d}: missing cameras.txt")
    try:
        cams = read_cameras(cam_file)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    out = []
    for k, cam in enumerate(cams):
        rgb, mask = d / f"view_{k:03d}.ppm", d / f"mask_{k:03d}.pgm"
        if not rgb.exists() or not mask.exists():
            raise DataFormatError(f"{d}: missing image or mask for view {k}")
        out.append(View(cam, rgb, mask))
    if not out:
        raise DataFormatError(f"{d}: no cameras listed")
    return out


# -- configuration ------------------------------------------------------------
@dataclass
class TrainConfig:
    variant: str = "artdef"
    total_iters: int = 20000
    pixel_batch: int = 2048
    lr: float = 1e-4
    lr_decay_points: tuple[float, ...] = (0.5, 0.75)
    lr_decay_factor: float = 0.5
    alpha0: float = 50.0
    alpha_double_every: int = 4000
    alpha_max_doublings: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    code_dims: dict = field(default_factory=lambda: dict(DEFAULT_CODE_DIMS))
    # "variance": N(0, 1/l) has variance 1/l; "std": standard deviation 1/l
    code_init: str = "variance"
    geometry_widths: tuple[int, ...] = (512,) * 8
    deformation_widths: tuple[int, ...] = (512,) * 8
    appearance_widths: tuple[int, ...] = (512,) * 4
    point_freqs: int = 6
    view_freqs: int = 4
    init_radius: float = 0.5
    eikonal_samples: int = 256
    eikonal_bound: float = 1.0
    sphere_trace_iters: int = 32
    n_ray_samples: int = 100
    secant_iters: int = 8
    scene_bound_radius: float = 1.2
    log_every: int = 100

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        self.lr_decay_points = tuple(float(p) for p in self.lr_decay_points)
        for name in ("geometry_widths", "deformation_widths", "appearance_widths"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.pixel_batch < 1:
            raise ValueError("pixel_batch must be >= 1")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.lr <= 0 or not 0 < self.lr_decay_factor <= 1:
            raise ValueError("need lr > 0 and a decay factor in (0, 1]")
        if list(self.lr_decay_points) != sorted(self.lr_decay_points) or \
                any(not 0 <= p <= 1 for p in self.lr_decay_points):
            raise ValueError("lr decay points must be sorted fractions in [0, 1]")
        if self.alpha0 <= 0 or self.alpha_double_every < 1 or self.alpha_max_doublings < 0:
            raise ValueError("malformed alpha schedule")
        if self.code_init not in ("variance", "std"):
            raise ValueError("code_init must be 'variance' or 'std'")
        if set(self.code_dims) != set(CODE_KINDS) or min(self.code_dims.values()) < 1:
            raise ValueError(f"code_dims needs positive lengths for {CODE_KINDS}")

    @classmethod
    def paper(cls, **overrides) -> TrainConfig:
        """Full-size networks and schedules."""
        base = dict(total_iters=250_000, pixel_batch=2048, lr=1e-4, alpha_double_every=50_000,
                    geometry_widths=(512,) * 8, deformation_widths=(512,) * 8, appearance_widths=(512,) * 4,
                    n_ray_samples=100, sphere_trace_iters=32, eikonal_samples=2048)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        """Small networks sized for toy scenes on one CPU core."""
        base = dict(total_iters=20_000, pixel_batch=512, lr=5e-4, alpha_double_every=4000,
                    geometry_widths=(96,) * 4, deformation_widths=(64,) * 3, appearance_widths=(64, 64),
                    code_dims={"shape": 32, "appearance": 32, "articulation": 8},
                    n_ray_samples=16, sphere_trace_iters=24, eikonal_samples=128, point_freqs=6, view_freqs=2,
                    scene_bound_radius=1.0)
        base.update(overrides)
        return cls(**base)

    def scaled(self, total_iters: int) -> TrainConfig:
        """Same schedule shape over a different run length."""
        every = max(1, round(self.alpha_double_every * total_iters / max(self.total_iters, 1)))
        return replace(self, total_iters=total_iters, alpha_double_every=every)

    def render_settings(self) -> RenderSettings:
        return RenderSettings(self.sphere_trace_iters, 5e-5, self.n_ray_samples, self.secant_iters,
                              self.scene_bound_radius)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def alpha_at(iteration: int, config) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    doublings = min(iteration // config.alpha_double_every, config.alpha_max_doublings)
    return config.alpha0 * 2.0 ** doublings


def step_decay(iteration: int, lr0: float, milestones, factor: float = 0.5) -> float:
    return lr0 * factor ** sum(iteration >= m for m in milestones)


def lr_at(iteration: int, config: TrainConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    milestones = [p * config.total_iters for p in config.lr_decay_points]
    return step_decay(iteration, config.lr, milestones, config.lr_decay_factor)


def code_std(length: int, rule: str = "variance") -> float:
    return 1.0 / math.sqrt(length) if rule == "variance" else 1.0 / length


def random_code(kind: str, length: int, rng, rule: str = "variance") -> LatentCode:
    return LatentCode(kind, rng.normal(0.0, code_std(length, rule), size=length))


def init_codes(dataset: DatasetIndex, variant: str, rng=None, code_dims=None, rule: str = "variance") -> CodeBook:
    rng = np.random.default_rng(rng)
    dims = dict(DEFAULT_CODE_DIMS if code_dims is None else code_dims)
    book = CodeBook(variant_shares_articulation(variant))
    for i in range(dataset.n_instances):
        book.shape[i] = random_code("shape", dims["shape"], rng, rule)
        book.appearance[i] = random_code("appearance", dims["appearance"], rng, rule)
    keys = range(dataset.n_states) if book.shared else dataset.pairs()
    for key in keys:
        book.articulation[key] = random_code("articulation", dims["articulation"], rng, rule)
    return book


# -- batches --------------------------------------------------------------
@dataclass
class PixelBatch:
    instance: int
    state: int
    view: int
    pixels: np.ndarray
    rgb: np.ndarray
    occupancy: np.ndarray
    rays: Rays

    @property
    def size(self) -> int:
        return len(self.pixels)


def sample_pixel_batch(dataset: DatasetIndex, rng, batch_size: int = 2048,
                       bound_radius: float = 1.2) -> PixelBatch:
    """One (instance, state, view) uniformly, then pixels without replacement."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pairs = dataset.pairs()
    i, j = pairs[rng.integers(len(pairs))]
    k = int(rng.integers(len(dataset.views[(i, j)])))
    cam = dataset.views[(i, j)][k].camera
    rgb, occ = dataset.image(i, j, k)
    n_pix = cam.width * cam.height
    flat = rng.choice(n_pix, size=min(batch_size, n_pix), replace=False)
    flat.sort()
    pixels = np.stack([flat % cam.width, flat // cam.width], axis=1).astype(np.float64)
    rays = generate_rays(cam, pixels, bound_radius)
    return PixelBatch(i, j, k, pixels, rgb.reshape(-1, 3)[flat], occ.reshape(-1)[flat], rays)


# -- optimization step --------------------------------------------------------
def code_slot(kind: str, key) -> str:
    key = ",".join(str(k) for k in key) if isinstance(key, tuple) else str(key)
    return f"code/{kind}/{key}"


def _parse_slot_key(text: str):
    parts = text.split(",")
    return tuple(int(p) for p in parts) if len(parts) > 1 else int(parts[0])


@dataclass
class StepResult:
    loss: LossBreakdown
    grads: dict


def batch_objective(model, codes, batch: PixelBatch, alpha: float, weights: LossWeights,
                    settings: RenderSettings, eik_points: np.ndarray | None, train_nets: bool = True,
                    train_codes: bool = True, hits=None):
    """Build the loss on the tape for one pixel batch.

    ``codes`` is (theta, phi, psi) as LatentCodes, arrays or tensors (used
    as given).  ``hits`` freezes the intersections instead of tracing.
    Returns (total tensor, breakdown, bound field, code tensors).
    """
    theta, phi, psi = (c if isinstance(c, Tensor) else
                       Tensor(np.array(c.values if isinstance(c, LatentCode) else c, dtype=np.float64),
                              requires_grad=train_codes) for c in codes)
    bf = model.bind(requires_grad=train_nets)
    rays = batch.rays
    occ = np.asarray(batch.occupancy, dtype=bool)
    if hits is None:
        hits = trace(rays, theta.value, psi.value, model, settings, need_dense=~occ)
    in_idx = np.nonzero(hits.hit & occ)[0]
    xhat, kept = differentiable_hit(rays, theta, psi, bf, hits, in_idx)
    out_mask = np.ones(len(rays), dtype=bool)
    out_mask[in_idx] = False  # grazing hits are dropped from both sets
    out_idx = np.nonzero(out_mask)[0]
    P = batch.size

    grads_in = []
    if len(kept):
        _, g = sdf_and_gradient(xhat, theta, psi, bf)
        grads_in.append(g)
        normal = g / T.reshape(T.norm(g, axis=-1), (len(kept), 1))
        color = radiance(xhat, normal, Tensor(rays.directions[kept]), phi, bf)
        l_rgb = rgb_loss(color, batch.rgb[kept], P)
    else:
        l_rgb = Tensor(0.0)
    if len(out_idx):
        logits = soft_mask_logits(rays, theta, psi, bf, hits, alpha, out_idx)
        l_mask = mask_loss(logits, occ[out_idx].astype(np.float64), alpha, P)
    else:
        l_mask = Tensor(0.0)
    if eik_points is not None and len(eik_points):
        _, g_u = sdf_and_gradient(Tensor(eik_points), theta, psi, bf)
        grads_in.append(g_u)
    l_eik = eikonal_term(T.concat(grads_in, axis=0)) if grads_in else Tensor(0.0)
    l_code = code_prior(theta, phi, psi)
    total = weighted_sum(l_rgb, l_mask, l_eik, l_code, weights)
    parts = total_loss(l_rgb, l_mask, l_eik, l_code, weights, n_in=len(kept), n_out=len(out_idx))
    return total, parts, bf, (theta, phi, psi)


def _check_finite(parts: LossBreakdown, batch: PixelBatch, iteration: int):
    if not all(np.isfinite(v) for v in parts.row()):
        dump = {"iteration": iteration, "instance": batch.instance, "state": batch.state, "view": batch.view,
                "pixels": batch.pixels.tolist(), "loss": parts.row()}
        raise NumericalError(f"non-finite loss at iteration {iteration} "
                             f"(instance {batch.instance}, state {batch.state}, view {batch.view}): "
                             f"rgb={parts.rgb} mask={parts.mask} eikonal={parts.eikonal} code={parts.code}", dump)


def _adam(params, grads, optim, slot, lr, iteration):
    if slot not in optim:
        optim[slot] = OptimState.zeros_like(params)
    try:
        adam_step(params, grads, optim[slot], lr, slot)
    except NonFiniteGradientError as exc:
        raise NumericalError(f"non-finite gradient for {slot} at iteration {iteration}") from exc


def train_step(model: FieldModel, codebook: CodeBook, batch: PixelBatch, optim: dict, config: TrainConfig,
               iteration: int, rng=None) -> LossBreakdown:
    """One Adam step on all networks and the three codes of the sampled pair."""
    rng = np.random.default_rng(iteration) if rng is None else rng
    i, j = batch.instance, batch.state
    akey = codebook.articulation_key(i, j)
    codes = (codebook.shape[i], codebook.appearance[i], codebook.articulation[akey])
    alpha = alpha_at(iteration, config)
    eik = rng.uniform(-config.eikonal_bound, config.eikonal_bound, size=(config.eikonal_samples, 3))
    total, parts, bf, code_t = batch_objective(model, codes, batch, alpha, config.weights,
                                               config.render_settings(), eik)
    _check_finite(parts, batch, iteration)
    backward(total)
    lr = lr_at(iteration, config)
    for name, bound in bf.networks().items():
        _adam(model.networks()[name].flat, bound.flat_grad(), optim, f"net/{name}", lr, iteration)
    for kind, key, t in zip(CODE_KINDS, (i, i, akey), code_t):
        code = getattr(codebook, kind)[key]
        g = np.zeros_like(code.values) if t.grad is None else t.grad
        _adam(code.values, g, optim, code_slot(kind, key), lr, iteration)
    return parts


# -- checkpoints ----------------------------------------------------------------
@dataclass
class Checkpoint:
    model: FieldModel
    codes: CodeBook
    config: TrainConfig
    category: str = "unknown"
    iteration: int = 0
    optim: dict = field(default_factory=dict)
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.model.variant

    def copy(self) -> Checkpoint:
        return Checkpoint(self.model.copy(), self.codes.copy(), replace(self.config), self.category,
                          self.iteration, {k: v.copy() for k, v in self.optim.items()},
                          json.loads(json.dumps(self.rng_state)), json.loads(json.dumps(self.meta)))


def _codebook_header(book: CodeBook, blocks: list):
    tables = {}
    for kind in CODE_KINDS:
        table = getattr(book, kind)
        keys = sorted(table, key=lambda k: k if isinstance(k, tuple) else (k,))
        tables[kind] = [code_slot(kind, k).split("/", 2)[2] for k in keys]
        for k in keys:
            blocks.append((code_slot(kind, k), table[k].values))
    return {"shared": book.shared, "tables": tables}


def _write_container(path, header: dict, blocks: list) -> None:
    header = dict(header)
    header["blocks"] = [[name, int(np.asarray(arr).size)] for name, arr in blocks]
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks)
    data = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(text)) + text + payload
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def _read_container(path) -> tuple[dict, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read {path}: {exc}") from exc
    if raw[:8] != MAGIC or len(raw) < 20:
        raise CheckpointFormatError(f"{path}: not an artfield checkpoint or code file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)
    try:
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    blocks, off = {}, 20 + hlen
    for name, count in header["blocks"]:
        end = off + 8 * count
        if end > len(raw):
            raise CheckpointFormatError(f"{path}: truncated at block {name!r}")
        blocks[name] = np.frombuffer(raw[off:end], dtype="<f8").astype(np.float64)
        off = end
    if off != len(raw):
        raise CheckpointFormatError(f"{path}: trailing bytes after last block")
    return header, blocks


def _read_codebook(header: dict, blocks: dict) -> CodeBook:
    book = CodeBook(bool(header["shared"]))
    for kind in CODE_KINDS:
        for key in header["tables"][kind]:
            getattr(book, kind)[_parse_slot_key(key)] = LatentCode(kind, blocks[f"code/{kind}/{key}"])
    return book


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blocks = []
    nets = {}
    for name, params in ckpt.model.networks().items():
        nets[name] = params.spec.to_dict()
        blocks.append((f"net/{name}", params.flat))
    codebook = _codebook_header(ckpt.codes, blocks)
    optim = {}
    for slot in sorted(ckpt.optim):
        st = ckpt.optim[slot]
        optim[slot] = {"step": st.step, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps}
        blocks.append((f"optim/{slot}/m", st.first_moment))
        blocks.append((f"optim/{slot}/v", st.second_moment))
    header = {"kind": "checkpoint", "category": ckpt.category, "variant": ckpt.variant,
              "iteration": ckpt.iteration, "config": ckpt.config.to_dict(),
              "model": {"point_freqs": ckpt.model.point_freqs, "view_freqs": ckpt.model.view_freqs,
                        "code_dims": ckpt.model.code_dims, "networks": nets},
              "codebook": codebook, "optim": optim, "rng": ckpt.rng_state, "meta": ckpt.meta}
    _write_container(path, header, blocks)


def load_checkpoint(path) -> Checkpoint:
    header, blocks = _read_container(path)
    if header.get("kind") != "checkpoint":
        raise CheckpointFormatError(f"{path}: expected a checkpoint, found {header.get('kind')!r}")
    try:
        m = header["model"]
        nets = {name: MlpParams(MlpSpec.from_dict(spec), blocks[f"net/{name}"])
                for name, spec in m["networks"].items()}
        model = FieldModel(header["variant"], nets["geometry"], nets["appearance"], nets.get("deformation"),
                           m["point_freqs"], m["view_freqs"], dict(m["code_dims"]))
        optim = {slot: OptimState(blocks[f"optim/{slot}/m"], blocks[f"optim/{slot}/v"], s["step"],
                                  s["beta1"], s["beta2"], s["eps"]) for slot, s in header["optim"].items()}
        return Checkpoint(model, _read_codebook(header["codebook"], blocks), TrainConfig.from_dict(header["config"]),
                          header["category"], header["iteration"], optim, header["rng"], header.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: inconsistent checkpoint ({exc})") from exc


def save_codes(book: CodeBook, path, category: str = "unknown", variant: str = "", meta: dict | None = None) -> None:
    blocks = []
    header = {"kind": "codes", "category": category, "variant": variant,
              "codebook": _codebook_header(book, blocks), "meta": meta or {}}
    _write_container(path, header, blocks)


def load_codes(path) -> CodeBook:
    header, blocks = _read_container(path)
    if header.get("kind") != "codes":
        raise CheckpointFormatError(f"{path}: expected a code file, found {header.get('kind')!r}")
    return _read_codebook(header["codebook"], blocks)


# -- training loop ---------------------------------------------------------------
def new_checkpoint(dataset: DatasetIndex, config: TrainConfig) -> Checkpoint:
    init_rng = np.random.default_rng([config.seed, 1])
    model = create_model(config.variant, init_rng, config.init_radius, config.point_freqs, config.view_freqs,
                         config.geometry_widths, config.deformation_widths, config.appearance_widths,
                         config.code_dims)
    codes = init_codes(dataset, config.variant, init_rng, config.code_dims, config.code_init)
    rng = np.random.default_rng([config.seed, 2])
    return Checkpoint(model, codes, config, dataset.category, 0, {}, rng.bit_generator.state,
                      {"instances": dataset.instances, "states": dataset.states})


def format_log_row(iteration: int, lr: float, alpha: float, loss_row) -> str:
    vals = [str(iteration), f"{lr:.6g}", f"{alpha:.6g}"] + [f"{v:.6g}" for v in loss_row]
    return "\t".join(vals)


def train(dataset: DatasetIndex, config: TrainConfig, resume: Checkpoint | None = None, until: int | None = None,
          log=None, callback=None) -> Checkpoint:
    """Run (or continue) training up to ``until`` (default ``config.total_iters``).

    ``log`` receives a tab-separated header and one row per ``log_every``
    iterations with losses averaged over the interval.
    """
    ckpt = new_checkpoint(dataset, config) if resume is None else resume.copy()
    ckpt.config = config
    if resume is not None and (ckpt.codes.counts()[0] != dataset.n_instances):
        raise DataFormatError("resumed checkpoint was trained on a different number of instances")
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    stop = config.total_iters if until is None else min(until, config.total_iters)
    if log is not None and ckpt.iteration == 0:
        print("\t".join(LOG_COLUMNS), file=log, flush=True)
    acc, n_acc = np.zeros(5), 0
    while ckpt.iteration < stop:
        it = ckpt.iteration
        batch = sample_pixel_batch(dataset, rng, config.pixel_batch, config.scene_bound_radius)
        parts = train_step(ckpt.model, ckpt.codes, batch, ckpt.optim, config, it, rng)
        ckpt.iteration += 1
        acc += parts.row()
        n_acc += 1
        if callback is not None:
            callback(it, parts)
        if log is not None and (ckpt.iteration % config.log_every == 0 or ckpt.iteration == stop):
            print(format_log_row(it, lr_at(it, config), alpha_at(it, config), acc / n_acc), file=log, flush=True)
            acc, n_acc = np.zeros(5), 0
    ckpt.rng_state = rng.bit_generator.state
    return ckpt


def stderr_log():
    return sys.stderr
