import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from artfield.errors import DataFormatError
from artfield.estimator import ArticulatedShapeModel
from artfield.validation import check_image, check_positive_float, check_positive_int, parse_resolution


@pytest.fixture(scope="module")
def fitted(tiny_data):
    _, ds, _ = tiny_data
    return ArticulatedShapeModel(total_iters=2, pixel_batch=64, infer_iters=2).fit(ds)


def test_params_and_clone():
    est = ArticulatedShapeModel(variant="art", seed=3)
    assert est.get_params()["variant"] == "art"
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    est.set_params(total_iters=7)
    assert est.total_iters == 7


def test_fit_records_shape(fitted):
    assert fitted.checkpoint_.iteration == 2
    assert (fitted.n_instances_, fitted.n_states_) == (2, 2)


def test_transform_rows_per_state(fitted, tiny_data):
    root, _, _ = tiny_data
    rows = fitted.transform(str(root / "holdout" / "instance_000" / "state_000" / "infer"))
    dims = fitted.checkpoint_.model.code_dims
    assert rows.shape == (1, dims["shape"] + dims["appearance"] + dims["articulation"])
    assert np.all(np.isfinite(rows))


def test_predict_and_score(fitted, holdout_views):
    renders = fitted.predict(holdout_views)
    assert len(renders) == 2 * 4
    rgb, mask = renders[0]
    assert rgb.shape == (18, 24, 3) and mask.shape == (18, 24)
    assert np.isfinite(fitted.score(holdout_views))


def test_not_fitted(holdout_views):
    with pytest.raises(NotFittedError):
        ArticulatedShapeModel().transform(holdout_views)


def test_bad_parameters_fail_at_fit(tiny_data):
    _, ds, _ = tiny_data
    with pytest.raises(ValueError):
        ArticulatedShapeModel(preset="huge").fit(ds)
    with pytest.raises(ValueError):
        ArticulatedShapeModel(total_iters=-1).fit(ds)
    with pytest.raises(TypeError):
        ArticulatedShapeModel(pixel_batch=2.5, total_iters=1).fit(ds)
    with pytest.raises(TypeError):
        ArticulatedShapeModel().fit(42)


def test_view_set_checks(fitted, tiny_data):
    _, ds, _ = tiny_data
    with pytest.raises(DataFormatError):
        fitted.transform(ds)
    with pytest.raises(ValueError):
        fitted.transform([])
    with pytest.raises(TypeError):
        fitted.transform([np.zeros(3)])


def test_validation_helpers():
    assert check_positive_int(np.int64(3), "n") == 3
    with pytest.raises(TypeError):
        check_positive_int(True, "n")
    with pytest.raises(ValueError):
        check_positive_int(0, "n")
    with pytest.raises(ValueError):
        check_positive_float(float("inf"), "lr")
    assert parse_resolution("64X48") == (64, 48)
    with pytest.raises(ValueError):
        parse_resolution("0x4")
    with pytest.raises(ValueError):
        check_image(np.full((2, 2), 1.5))
