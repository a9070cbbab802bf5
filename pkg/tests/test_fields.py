import numpy as np
import pytest

from artfield.autodiff import Tensor, backward, grad_check
from artfield.fields import (CodeBook, LatentCode, VARIANTS, deform, network_specs, radiance, radiance_np, sdf,
                             sdf_and_gradient, sdf_grad_np, sdf_np)

from conftest import TINY, tiny_codes, tiny_model


@pytest.mark.parametrize("variant", VARIANTS)
def test_numpy_and_tape_sdf_agree(variant, rng):
    model = tiny_model(variant)
    theta, _, psi = tiny_codes(rng)
    x = rng.uniform(-1, 1, (50, 3))
    np.testing.assert_allclose(sdf_np(model, x, theta, psi), sdf(x, theta, psi, model).value, atol=1e-13)


@pytest.mark.parametrize("variant", VARIANTS)
def test_spatial_gradient_matches_finite_difference(variant, rng):
    model = tiny_model(variant)
    theta, _, psi = tiny_codes(rng)
    x = rng.uniform(-1, 1, (20, 3))
    f, g = sdf_grad_np(model, x, theta, psi)
    np.testing.assert_allclose(f, sdf_np(model, x, theta, psi), atol=1e-13)
    h = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (sdf_np(model, x + e, theta, psi) - sdf_np(model, x - e, theta, psi)) / (2 * h)
        np.testing.assert_allclose(g[:, d], fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("variant", ["art", "artdef"])
def test_eikonal_gradient_reaches_codes(variant, rng):
    model = tiny_model(variant)
    theta, _, psi = tiny_codes(rng)
    x = rng.uniform(-1, 1, (8, 3))

    def eik_theta(t):
        _, g = sdf_and_gradient(x, t, psi, model)
        return (((g * g).sum(axis=-1) - 1.0) ** 2).sum()

    def eik_psi(p):
        _, g = sdf_and_gradient(x, theta, p, model)
        return (((g * g).sum(axis=-1) - 1.0) ** 2).sum()

    assert grad_check(eik_theta, theta.values).passed(1e-4)
    assert grad_check(eik_psi, psi.values).passed(1e-4)


def test_geometry_does_not_see_psi_with_deformation():
    specs = network_specs("artdef", 2, 1, code_dims=TINY["code_dims"])
    base = network_specs("art", 2, 1, code_dims=TINY["code_dims"])
    assert base["geometry"].input_dim - specs["geometry"].input_dim == TINY["code_dims"]["articulation"]
    assert specs["deformation"].output_dim == 3


def test_deformation_starts_near_identity(rng):
    model = tiny_model("def")
    theta, _, psi = tiny_codes(rng)
    x = rng.uniform(-1, 1, (30, 3))
    moved = deform(x, theta, psi, model).value
    assert np.max(np.abs(moved - x)) < 1e-2


def test_init_is_a_sphere_like_field(rng):
    model = tiny_model("base", geometry_widths=(64, 64, 64))
    theta, _, psi = tiny_codes(rng)
    d = rng.normal(size=(100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    assert sdf_np(model, np.zeros((1, 3)), theta, psi)[0] < 0
    assert np.all(sdf_np(model, 2.0 * d, theta, psi) > 0)


def test_radiance_in_unit_range_and_differentiable(rng):
    model = tiny_model()
    _, phi, _ = tiny_codes(rng)
    x = rng.uniform(-1, 1, (10, 3))
    n = rng.normal(size=(10, 3))
    v = rng.normal(size=(10, 3))
    c = radiance_np(model, x, n, v, phi)
    assert c.shape == (10, 3) and np.all((c >= 0) & (c <= 1))
    assert grad_check(lambda p: radiance(x, n, v, p, model).sum(), phi.values).passed(1e-5)
    assert grad_check(lambda xx: radiance(xx, n, v, phi, model).sum(), x).passed(1e-4)


def test_network_parameters_receive_gradients(rng):
    model = tiny_model("artdef")
    theta, _, psi = tiny_codes(rng)
    bf = model.bind()
    f = sdf(rng.uniform(-1, 1, (5, 3)), theta, psi, bf)
    backward((f * f).sum())
    for name, net in bf.networks().items():
        if name != "appearance":
            assert np.any(net.flat_grad() != 0), name


def test_codebook_keys():
    c = lambda k: LatentCode(k, np.zeros(2))
    shared = CodeBook(True, {0: c("shape")}, {0: c("appearance")}, {3: c("articulation")})
    assert shared.articulation_key(0, 3) == 3
    assert shared.resolve(0, 3)[2] is shared.articulation[3]
    own = CodeBook(False, {1: c("shape")}, {1: c("appearance")}, {(1, 3): c("articulation")})
    assert own.articulation_key(1, 3) == (1, 3)
    with pytest.raises(KeyError):
        own.resolve(0, 3)


def test_latent_code_validation():
    with pytest.raises(ValueError):
        LatentCode("colour", np.zeros(2))
    with pytest.raises(ValueError):
        LatentCode("shape", np.array([np.nan]))
    with pytest.raises(ValueError):
        LatentCode("shape", np.zeros((2, 2)))


def test_unknown_variant():
    with pytest.raises(ValueError):
        tiny_model("nerf")
