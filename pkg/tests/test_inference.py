import numpy as np
import pytest

from artfield.errors import DataFormatError
from artfield.imageio import write_pgm
from artfield.inference import (InferenceConfig, NoSurfaceHitsError, codes_for, init_inference_codes,
                                recover_codes, test_time_adapt as adapt)
from artfield.trainer import DatasetIndex


def test_init_psi_is_mean_of_trained_codes(tiny_ckpt):
    _, _, psi = init_inference_codes(tiny_ckpt, 0)
    trained = np.stack([c.values for c in tiny_ckpt.codes.articulation.values()])
    np.testing.assert_allclose(psi.values, trained.mean(axis=0), atol=1e-15)


def test_init_theta_phi_follow_training_rule(tiny_ckpt):
    a = init_inference_codes(tiny_ckpt, 5)
    b = init_inference_codes(tiny_ckpt, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
    assert len(a[0]) == tiny_ckpt.model.code_dims["shape"]


def test_recover_moves_codes_only(tiny_ckpt, holdout_views):
    before = {k: n.flat.copy() for k, n in tiny_ckpt.model.networks().items()}
    history = []
    book = recover_codes(tiny_ckpt, holdout_views, 3, InferenceConfig(pixel_batch=64), history=history)
    assert len(history) == 3
    assert set(book.articulation) == {0, 1} and book.shared
    for k, n in tiny_ckpt.model.networks().items():
        np.testing.assert_array_equal(n.flat, before[k])
    theta0, _, _ = init_inference_codes(tiny_ckpt, np.random.default_rng([0, 4]))
    assert np.any(book.shape[0].values != theta0.values)
    theta, phi, psi = codes_for(book, 1)
    assert psi is book.articulation[1] and theta is book.shape[0]


def test_recover_is_deterministic(tiny_ckpt, holdout_views):
    cfg = InferenceConfig(pixel_batch=32, seed=3)
    a = recover_codes(tiny_ckpt, holdout_views, 2, cfg)
    b = recover_codes(tiny_ckpt, holdout_views, 2, cfg)
    for kind in ("shape", "appearance", "articulation"):
        for key, c in getattr(a, kind).items():
            np.testing.assert_array_equal(c.values, getattr(b, kind)[key].values)


def test_tta_changes_weights_on_a_copy(tiny_ckpt, holdout_views):
    book = recover_codes(tiny_ckpt, holdout_views, 1, InferenceConfig(pixel_batch=32))
    same, same_book = adapt(tiny_ckpt, holdout_views, book, 0)
    assert same is not tiny_ckpt
    np.testing.assert_array_equal(same.model.networks()["geometry"].flat,
                                  tiny_ckpt.model.networks()["geometry"].flat)
    before = tiny_ckpt.model.networks()["geometry"].flat.copy()
    out, out_book = adapt(tiny_ckpt, holdout_views, book, 2, InferenceConfig.tta(pixel_batch=32))
    np.testing.assert_array_equal(tiny_ckpt.model.networks()["geometry"].flat, before)
    assert np.any(out.model.networks()["geometry"].flat != before)
    assert out.meta["adapted_iters"] == 2
    assert out_book is not book


def test_multi_instance_views_rejected(tiny_ckpt, tiny_data):
    _, ds, _ = tiny_data
    with pytest.raises(DataFormatError):
        recover_codes(tiny_ckpt, ds, 1)


def test_empty_masks_rejected(tiny_ckpt, holdout_views, tmp_path):
    view = holdout_views.views[(0, 0)][0]
    d = tmp_path / "blank"
    d.mkdir()
    (d / "cameras.txt").write_text((view.rgb_path.parent / "cameras.txt").read_text())
    for k, v in enumerate(holdout_views.views[(0, 0)]):
        (d / f"view_{k:03d}.ppm").write_bytes(v.rgb_path.read_bytes())
        write_pgm(d / f"mask_{k:03d}.pgm", np.zeros((v.camera.height, v.camera.width)))
    with pytest.raises(NoSurfaceHitsError):
        recover_codes(tiny_ckpt, DatasetIndex.from_view_dirs([d]), 1)


def test_config_validation():
    with pytest.raises(ValueError):
        InferenceConfig(lr=0.0)
    with pytest.raises(ValueError):
        InferenceConfig(iters=-1)
