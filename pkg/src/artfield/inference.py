"""Latent code recovery for unseen objects and optional test-time adaptation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff.optim import NonFiniteGradientError, OptimState, adam_step
from .autodiff.tensor import backward
from .errors import DataFormatError, NumericalError
from .fields import CodeBook, LatentCode
from .trainer import (Checkpoint, DatasetIndex, _check_finite, alpha_at, batch_objective, random_code,
                      sample_pixel_batch, step_decay)

RECOVER_LR = 0.009
TTA_LR = 5e-5
LR_MILESTONES = (300, 450)


class NoSurfaceHitsError(DataFormatError):
    """No ray of any view reached the surface: cameras and object disagree."""


@dataclass
class InferenceConfig:
    iters: int = 600
    lr: float = RECOVER_LR
    lr_milestones: tuple[int, ...] = LR_MILESTONES
    alpha0: float = 50.0
    alpha_double_every: int = 100
    alpha_max_doublings: int = 5
    pixel_batch: int | None = None
    eikonal_samples: int | None = None
    warmup: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.iters < 0 or self.lr <= 0 or self.warmup < 1:
            raise ValueError("need iters >= 0, lr > 0 and warmup >= 1")
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)

    @classmethod
    def tta(cls, **overrides) -> InferenceConfig:
        return cls(**{"lr": TTA_LR, **overrides})


def init_inference_codes(ckpt: Checkpoint, rng=None) -> tuple[LatentCode, LatentCode, LatentCode]:
    """theta, phi drawn as in training; psi the mean of all trained articulation codes."""
    rng = np.random.default_rng(rng)
    dims, rule = ckpt.model.code_dims, ckpt.config.code_init
    theta = random_code("shape", dims["shape"], rng, rule)
    phi = random_code("appearance", dims["appearance"], rng, rule)
    psis = [ckpt.codes.articulation[k].values for k in sorted(ckpt.codes.articulation, key=str)]
    psi = LatentCode("articulation", np.mean(psis, axis=0) if len(psis) > 1 else psis[0].copy())
    return theta, phi, psi


def _check_views(views: DatasetIndex):
    if views.n_instances != 1:
        raise DataFormatError("inference expects views of a single object")
    for (i, j), vs in views.views.items():
        for k in range(len(vs)):
            if views.image(i, j, k)[1].any():
                return
    raise NoSurfaceHitsError("all provided masks are empty; nothing to reconstruct")


def _optimize(ckpt: Checkpoint, book: CodeBook, views: DatasetIndex, cfg: InferenceConfig,
              train_nets: bool, history=None) -> None:
    """Shared loop: codes always move, network weights only when ``train_nets``."""
    model = ckpt.model
    tc = ckpt.config
    settings = tc.render_settings()
    batch_size = cfg.pixel_batch or tc.pixel_batch
    n_eik = tc.eikonal_samples if cfg.eikonal_samples is None else cfg.eikonal_samples
    rng = np.random.default_rng([cfg.seed, 3])
    optim: dict[str, OptimState] = {}
    hit_count = 0

    def step(params, grads, slot, lr, it):
        if slot not in optim:
            optim[slot] = OptimState.zeros_like(params)
        try:
            adam_step(params, grads, optim[slot], lr, slot)
        except NonFiniteGradientError as exc:
            raise NumericalError(f"non-finite gradient for {slot} at iteration {it}") from exc

    for it in range(cfg.iters):
        batch = sample_pixel_batch(views, rng, batch_size, tc.scene_bound_radius)
        codes = (book.shape[0], book.appearance[0], book.articulation[batch.state])
        alpha = alpha_at(it, cfg)
        eik = rng.uniform(-tc.eikonal_bound, tc.eikonal_bound, size=(n_eik, 3)) if n_eik else None
        total, parts, bf, code_t = batch_objective(model, codes, batch, alpha, tc.weights, settings, eik,
                                                   train_nets=train_nets)
        _check_finite(parts, batch, it)
        hit_count += parts.n_in
        if it + 1 == cfg.warmup and hit_count == 0:
            raise NoSurfaceHitsError(f"no pixel of the provided views hit the surface in {cfg.warmup} iterations; "
                                     "check that cameras and object match")
        if history is not None:
            history.append(parts)
        backward(total)
        lr = step_decay(it, cfg.lr, cfg.lr_milestones)
        if train_nets:
            for name, bound in bf.networks().items():
                step(model.networks()[name].flat, bound.flat_grad(), f"net/{name}", lr, it)
        for kind, key, t in zip(("shape", "appearance", "articulation"), (0, 0, batch.state), code_t):
            code = getattr(book, kind)[key]
            step(code.values, np.zeros_like(code.values) if t.grad is None else t.grad,
                 f"code/{kind}/{key}", lr, it)


def recover_codes(ckpt: Checkpoint, views: DatasetIndex, iters: int = 600, config: InferenceConfig | None = None,
                  history=None) -> CodeBook:
    """Fit (theta, phi, psi) to posed masked views with frozen network weights.

    Every state of ``views`` gets its own psi while theta and phi are shared.
    The checkpoint is not modified.
    """
    cfg = replace(config or InferenceConfig(), iters=iters)
    _check_views(views)
    rng = np.random.default_rng([cfg.seed, 4])
    theta, phi, psi = init_inference_codes(ckpt, rng)
    book = CodeBook(True, {0: theta}, {0: phi}, {j: psi.copy() for j in range(views.n_states)})
    work = replace(ckpt, model=ckpt.model.copy())
    _optimize(work, book, views, cfg, train_nets=False, history=history)
    return book


def test_time_adapt(ckpt: Checkpoint, views: DatasetIndex, codes: CodeBook, iters: int = 600,
                    config: InferenceConfig | None = None, history=None) -> tuple[Checkpoint, CodeBook]:
    """Jointly fine-tune network weights and codes; returns a new checkpoint."""
    cfg = replace(config or InferenceConfig.tta(), iters=iters)
    out, book = ckpt.copy(), codes.copy()
    if iters == 0:
        return out, book
    _check_views(views)
    out.optim = {}
    _optimize(out, book, views, cfg, train_nets=True, history=history)
    out.meta = dict(out.meta, adapted_iters=iters)
    return out, book


def codes_for(book: CodeBook, state: int = 0) -> tuple[LatentCode, LatentCode, LatentCode]:
    return book.shape[0], book.appearance[0], book.articulation[state]
