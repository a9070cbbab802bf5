import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from artfield.autodiff import (BoundMlp, MlpShapeError, MlpSpec, NonFiniteGradientError, OptimState, Tensor,
                               adam_step, backward, encode_np, encoded_dim, geometric_init, grad_check, mlp_eval,
                               mlp_forward, positional_encoding, random_init)
from artfield.autodiff import tensor as T

finite = st.floats(-2.0, 2.0, allow_nan=False, width=64)


def small_arrays(shape):
    return arrays(np.float64, shape, elements=finite)


UNARY = {
    "exp": T.exp,
    "sin": T.sin,
    "cos": T.cos,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "softplus": lambda a: T.softplus(a, 3.0),
    "square": lambda a: a ** 2,
    "log": lambda a: T.log(T.exp(a) + 1.0),
    "sqrt": lambda a: T.sqrt(a * a + 1.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=small_arrays((3, 2)))
@settings(max_examples=15, deadline=None)
def test_unary_gradients(name, x):
    res = grad_check(lambda t: UNARY[name](t).sum(), x)
    assert res.passed(1e-5), res


@given(a=small_arrays((4, 3)), b=small_arrays((3,)))
@settings(max_examples=20, deadline=None)
def test_broadcast_arithmetic(a, b):
    bt = Tensor(b)
    res = grad_check(lambda t: ((t * bt + bt) / (t * t + 2.0) - bt).sum(), a)
    assert res.passed(1e-5)
    res = grad_check(lambda t: (Tensor(a) * t - t / (Tensor(a) ** 2 + 1.0)).sum(), b)
    assert res.passed(1e-5)


@given(a=small_arrays((5, 3)), w=small_arrays((3, 2)))
@settings(max_examples=20, deadline=None)
def test_matmul_both_sides(a, w):
    assert grad_check(lambda t: T.tanh(t @ Tensor(w)).sum(), a).passed(1e-5)
    assert grad_check(lambda t: T.tanh(Tensor(a) @ t).sum(), w).passed(1e-5)


def test_indexing_concat_reshape_norm(rng):
    x = rng.normal(size=(6, 3))
    idx = np.array([0, 2, 2, 5])

    def f(t):
        picked = t[idx]
        joined = T.concat([picked, t[1:3]], axis=0)
        return (T.norm(joined, axis=-1) * T.reshape(joined, (-1,))[:6]).sum()

    assert grad_check(f, x).passed(1e-6)


def test_repeated_index_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    y = x[np.array([1, 1, 3])].sum()
    g = backward(y, [x])[x]
    np.testing.assert_array_equal(g, [0.0, 2.0, 0.0, 1.0])


def test_abs_and_relu_kinks_are_reported():
    res = grad_check(lambda t: T.absolute(t).sum(), np.array([0.0, 1.0, -2.0]))
    assert res.noncomparable == [0]
    assert res.passed(1e-6)


def test_softplus_large_beta_is_finite():
    x = np.array([-50.0, -1.0, 0.0, 1.0, 50.0])
    y = T.softplus(Tensor(x), 100.0).value
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y[[0, 1, 3, 4]], [0.0, 0.0, 1.0, 50.0], atol=1e-12)
    assert y[2] == pytest.approx(np.log(2.0) / 100.0)
    z = x.copy()
    np.testing.assert_allclose(T.softplus_inplace(z, 100.0), y, rtol=1e-15, atol=0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_detach_blocks_gradient():
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    y = (x * x.detach()).sum()
    np.testing.assert_allclose(backward(y, [x])[x], x.value)


# -- Adam --------------------------------------------------------------------
def test_adam_first_steps_match_hand_computation():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -4.0])
    s = OptimState.zeros_like(p)
    adam_step(p, g, s, lr=0.1)
    # after one step the bias-corrected ratio is sign(g)
    np.testing.assert_allclose(p, [0.9, -1.9], atol=1e-7)
    adam_step(p, g, s, lr=0.1)
    np.testing.assert_allclose(p, [0.8, -1.8], atol=1e-7)
    m = 0.9 * 0.1 * g + 0.1 * g
    v = 0.999 * 0.001 * g * g + 0.001 * g * g
    np.testing.assert_allclose(s.first_moment, m)
    np.testing.assert_allclose(s.second_moment, v)
    assert s.step == 2


def test_adam_rejects_non_finite():
    p = np.zeros(2)
    with pytest.raises(NonFiniteGradientError) as exc:
        adam_step(p, np.array([np.nan, 0.0]), OptimState.zeros_like(p), 0.1, block="net/geometry")
    assert exc.value.block == "net/geometry"
    np.testing.assert_array_equal(p, 0.0)


# -- encodings --------------------------------------------------------------------
@given(x=small_arrays((7, 3)), k=st.integers(0, 4))
@settings(max_examples=25, deadline=None)
def test_encode_np_matches_tape(x, k):
    np.testing.assert_allclose(encode_np(x, k), positional_encoding(Tensor(x), k).value, atol=1e-14)
    assert encode_np(x, k).shape == (7, encoded_dim(3, k))


def test_encoding_layout_and_pi(rng):
    x = rng.normal(size=(2, 3))
    e = encode_np(x, 2)
    np.testing.assert_array_equal(e[:, :3], x)
    np.testing.assert_allclose(e[:, 3:6], np.sin(np.pi * x))
    np.testing.assert_allclose(e[:, 6:9], np.cos(np.pi * x))
    np.testing.assert_allclose(e[:, 9:12], np.sin(2 * np.pi * x))


def test_encoding_tangent_is_jacobian(rng):
    x = rng.normal(size=(4, 3))
    _, dy = positional_encoding(Tensor(x), 3, np.broadcast_to(np.eye(3), (4, 3, 3)))
    h = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (encode_np(x + e, 3) - encode_np(x - e, 3)) / (2 * h)
        np.testing.assert_allclose(dy.value[:, d], fd, atol=1e-6)


# -- MLPs ------------------------------------------------------------------------------
SPECS = [
    MlpSpec(5, (8, 8, 8), 1, "softplus", "none", 2),
    MlpSpec(5, (6,), 3, "relu", "tanh"),
    MlpSpec(5, (7, 7), 2, "softplus", "none", 1, softplus_beta=10.0),
]


@pytest.mark.parametrize("spec", SPECS)
def test_mlp_eval_matches_tape(spec, rng):
    params = random_init(spec, rng)
    x, cond = rng.normal(size=(9, 3)), rng.normal(size=2)
    np.testing.assert_allclose(mlp_eval(spec, params, x, cond), mlp_forward(spec, params, x, cond).value,
                               atol=1e-13)


@pytest.mark.parametrize("spec", SPECS)
def test_mlp_parameter_gradients(spec, rng):
    params = random_init(spec, rng)
    x, cond = rng.normal(size=(6, 3)), rng.normal(size=2)

    res = grad_check(lambda flat: _forward_with_flat(spec, flat, x, cond), params.flat)
    assert res.passed(1e-4), res.max_rel_error


def _forward_with_flat(spec, flat, x, cond):
    """mlp_forward driven by one flat tensor, so grad_check can perturb it."""
    layers, off = [], 0
    for fi, fo in spec.layer_shapes():
        w = T.reshape(flat[off:off + fi * fo], (fi, fo))
        off += fi * fo
        b = flat[off:off + fo]
        off += fo
        layers.append((w, b))
    return (mlp_forward(spec, BoundMlp(spec, layers), x, cond) ** 2).sum()


def test_mlp_tangent_matches_finite_difference(rng):
    spec = SPECS[0]
    params = random_init(spec, rng)
    x = rng.normal(size=(4, 3))
    _, dy = mlp_forward(spec, params, x, np.zeros(2), tangent=np.broadcast_to(np.eye(3), (4, 3, 3)))
    h = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (mlp_eval(spec, params, x + e, np.zeros(2)) - mlp_eval(spec, params, x - e, np.zeros(2))) / (2 * h)
        np.testing.assert_allclose(dy.value[:, d], fd, rtol=1e-5, atol=1e-7)


def test_mlp_shape_errors(rng):
    spec = SPECS[0]
    params = random_init(spec, rng)
    with pytest.raises(MlpShapeError) as exc:
        mlp_forward(spec, params, rng.normal(size=(2, 4)), np.zeros(2))
    assert exc.value.expected == 5 and exc.value.got == 6
    with pytest.raises(MlpShapeError):
        mlp_eval(spec, params, rng.normal(size=(2, 2)))
    with pytest.raises(ValueError):
        MlpSpec(3, (4, 4), 1, skip_input_at=2)


def test_geometric_init_sign_property(rng):
    spec = MlpSpec(3 + 8, (64, 64, 64, 64), 1, "softplus", "none", 2)
    params = geometric_init(spec, 0.5, rng)
    cond = rng.normal(size=8)
    d = rng.normal(size=(100, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    assert mlp_eval(spec, params, np.zeros((1, 3)), cond)[0, 0] < 0
    assert np.all(mlp_eval(spec, params, 2.0 * d, cond)[:, 0] > 0)


def test_geometric_init_is_radial_distance_in_expectation(rng):
    # with ReLU the network is positively homogeneous, so f(r d) + R is linear in r
    spec = MlpSpec(3, (256,) * 4, 1, "relu", "none")
    params = geometric_init(spec, 0.5, rng)
    d = rng.normal(size=(400, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    for r in (0.0, 0.5, 1.0, 2.0):
        assert np.mean(mlp_eval(spec, params, r * d)[:, 0]) == pytest.approx(r - 0.5, abs=0.05)
