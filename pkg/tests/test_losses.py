import numpy as np
import pytest

from artfield.autodiff import Tensor, grad_check
from artfield.losses import (LossWeights, code_prior, eikonal_loss, eikonal_term, mask_loss, rgb_loss, total_loss,
                             weighted_sum)

from conftest import tiny_codes, tiny_model


def test_default_weights():
    w = LossWeights()
    assert (w.mask, w.eikonal, w.code) == (100.0, 0.1, 1e-4)
    with pytest.raises(ValueError):
        LossWeights(mask=-1.0)


def test_rgb_loss_hand_value():
    pred = Tensor(np.array([[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]]))
    target = np.array([[0.0, 0.5, 1.0], [1.0, 0.0, 0.25]])
    # |errors| sum to 1.0 + 0.25 over a batch of 4 pixels
    assert rgb_loss(pred, target, 4).value == pytest.approx(1.25 / 4)
    assert rgb_loss(Tensor(np.zeros((0, 3))), np.zeros((0, 3)), 4).value == 0.0


def test_mask_loss_is_scaled_cross_entropy(rng):
    logits = rng.normal(size=7) * 3
    occ = (rng.random(7) > 0.5).astype(float)
    s = 1 / (1 + np.exp(-logits))
    ce = -(occ * np.log(s) + (1 - occ) * np.log(1 - s))
    assert mask_loss(Tensor(logits), occ, 50.0, 10).value == pytest.approx(ce.sum() / (50.0 * 10))


def test_mask_loss_finite_for_huge_logits():
    v = mask_loss(Tensor(np.array([-1e4, 1e4])), np.array([1.0, 0.0]), 1600.0, 2).value
    assert np.isfinite(v) and v == pytest.approx(2e4 / 3200)


def test_mask_loss_gradient(rng):
    occ = np.array([1.0, 0.0, 1.0, 0.0])
    assert grad_check(lambda t: mask_loss(t, occ, 100.0, 8), rng.normal(size=4) * 5).passed(1e-6)


def test_eikonal_zero_for_exact_distance(rng):
    x = rng.normal(size=(500, 3))
    g = x / np.linalg.norm(x, axis=1, keepdims=True)
    assert eikonal_term(Tensor(g)).value < 1e-10
    assert eikonal_term(Tensor(2 * g)).value == pytest.approx(1.0)


def test_eikonal_loss_on_model_differentiable(rng):
    model = tiny_model("art")
    theta, _, psi = tiny_codes(rng)
    val = eikonal_loss(model, theta, psi, 32, 1.0, np.random.default_rng(0))
    assert val.value > 0
    f = lambda t: eikonal_loss(model, t, psi, 16, 1.0, np.random.default_rng(0))
    assert grad_check(f, theta.values).passed(1e-4)


def test_code_prior_and_totals(rng):
    a, b, c = rng.normal(size=3), rng.normal(size=2), rng.normal(size=4)
    assert code_prior(a, b, c).value == pytest.approx((a ** 2).sum() + (b ** 2).sum() + (c ** 2).sum())
    w = LossWeights(mask=2.0, eikonal=3.0, code=4.0)
    parts = total_loss(1.0, 0.5, 0.25, 0.125, w, n_in=3, n_out=5)
    assert parts.total == pytest.approx(1.0 + 1.0 + 0.75 + 0.5)
    assert weighted_sum(1.0, 0.5, 0.25, 0.125, w).value == pytest.approx(parts.total)
    assert parts.row() == [1.0, 0.5, 0.25, 0.125, parts.total]
    assert (parts.n_in, parts.n_out) == (3, 5)
