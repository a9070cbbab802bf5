"""scikit-learn style wrapper around training, code recovery and rendering."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import psnr
from .inference import InferenceConfig, recover_codes, test_time_adapt
from .latents import CodeSet
from .renderer import RenderSettings, render_image
from .trainer import TrainConfig, train
from .validation import check_dataset, check_positive_float, check_positive_int, check_view_sets


class ArticulatedShapeModel(BaseEstimator, TransformerMixin):
    """Category-level articulated radiance field.

    ``fit`` trains networks and per-object codes on a multi-view dataset;
    ``transform`` recovers codes for new objects from posed masked views and
    returns them as rows ``[theta | phi | psi]`` (one row per state);
    ``predict`` renders those views back; ``score`` is their mean PSNR.
    """

    def __init__(self, variant="artdef", preset="desk", total_iters=20000, pixel_batch=None, lr=None,
                 seed=0, infer_iters=600, tta_iters=0, threads=1):
        self.variant = variant
        self.preset = preset
        self.total_iters = total_iters
        self.pixel_batch = pixel_batch
        self.lr = lr
        self.seed = seed
        self.infer_iters = infer_iters
        self.tta_iters = tta_iters
        self.threads = threads

    def _config(self) -> TrainConfig:
        if self.preset not in ("desk", "paper"):
            raise ValueError(f"preset must be 'desk' or 'paper', got {self.preset!r}")
        make = TrainConfig.desk if self.preset == "desk" else TrainConfig.paper
        cfg = make(variant=self.variant, seed=self.seed)
        cfg = cfg.scaled(check_positive_int(self.total_iters, "total_iters", 0))
        overrides = {}
        if self.pixel_batch is not None:
            overrides["pixel_batch"] = check_positive_int(self.pixel_batch, "pixel_batch")
        if self.lr is not None:
            overrides["lr"] = check_positive_float(self.lr, "lr")
        return replace(cfg, **overrides)

    def fit(self, X, y=None):
        dataset = check_dataset(X)
        check_positive_int(self.threads, "threads")
        self.checkpoint_ = train(dataset, self._config())
        self.n_instances_ = dataset.n_instances
        self.n_states_ = dataset.n_states
        return self

    def _recover(self, views):
        ckpt = self.checkpoint_
        book = recover_codes(ckpt, views, check_positive_int(self.infer_iters, "infer_iters", 0),
                             InferenceConfig(seed=self.seed))
        if self.tta_iters:
            ckpt, book = test_time_adapt(ckpt, views, book, check_positive_int(self.tta_iters, "tta_iters", 0),
                                         InferenceConfig.tta(seed=self.seed))
        return ckpt, book

    def transform(self, X):
        check_is_fitted(self, "checkpoint_")
        rows = []
        self.recovered_ = []
        for views in check_view_sets(X):
            ckpt, book = self._recover(views)
            self.recovered_.append((ckpt, book))
            for j in range(views.n_states):
                c = CodeSet.from_book(book, 0, j)
                rows.append(np.concatenate([c.shape.values, c.appearance.values, c.articulation.values]))
        return np.stack(rows)

    def predict(self, X):
        """Rendered (rgb, mask) per view, recovering codes first."""
        check_is_fitted(self, "checkpoint_")
        out = []
        for views in check_view_sets(X):
            ckpt, book = self._recover(views)
            settings = RenderSettings(scene_bound_radius=ckpt.config.scene_bound_radius)
            for (_, j), vs in sorted(views.views.items()):
                codes = CodeSet.from_book(book, 0, j).as_tuple()
                out.extend(render_image(v.camera, codes, ckpt.model, settings, threads=self.threads) for v in vs)
        return out

    def score(self, X, y=None):
        check_is_fitted(self, "checkpoint_")
        sets = check_view_sets(X)
        renders = iter(self.predict(sets))
        values = []
        for views in sets:
            for (i, j), vs in sorted(views.views.items()):
                for k in range(len(vs)):
                    values.append(psnr(next(renders)[0], views.image(i, j, k)[0]))
        return float(np.mean(values))
