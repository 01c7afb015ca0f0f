"""Hand-written backprop vs central finite differences on tiny float64 nets."""

import numpy as np
import pytest

from crib_lab import nets as N
from crib_lab.checkpoint import read_checkpoint, write_checkpoint

H = 1e-5


def tiny_touch_net():
    return N.TouchPolicyNet(touch_dim=5, proprio_dim=4, action_dim=3,
                            touch_hidden=(6,), proprio_hidden=(5,),
                            fusion_dim=7, trunk_hidden=(6,), seed=3,
                            dtype=np.float64)


def tiny_vision_net():
    return N.VisionPolicyNet(image_size=8, in_channels=2, conv_channels=(3, 4),
                             proprio_dim=3, proprio_hidden=(4,), fusion_dim=5,
                             trunk_hidden=(4,), action_dim=2, seed=4,
                             dtype=np.float64)


def quadratic_loss(mu, sigma, value):
    """Smooth scalar objective exercising all three heads."""
    return float(np.sum(mu ** 2) + np.sum(np.log(sigma)) + np.sum(value ** 2))


def quadratic_grads(mu, sigma, value):
    return 2.0 * mu, 1.0 / sigma, 2.0 * value


def check_param_grads(net, forward):
    """Analytic parameter gradients vs central differences, elementwise."""
    mu, sigma, value = forward()
    net.zero_grads()
    net.backward(*quadratic_grads(mu, sigma, value))
    for name, p in net.params().items():
        analytic = p.grad
        flat = p.value.ravel()
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + H
            hi = quadratic_loss(*forward())
            flat[i] = orig - H
            lo = quadratic_loss(*forward())
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * H)
        numeric = numeric.reshape(p.value.shape)
        err = np.abs(analytic - numeric)
        tol = 1e-6 * (1.0 + np.abs(numeric))
        assert np.all(err <= tol), f"gradient mismatch in {name}: " \
                                   f"max err {err.max():.3e}"


def test_touch_net_gradients_match_finite_differences():
    net = tiny_touch_net()
    assert net.num_params() < 300
    rng = np.random.default_rng(0)
    touch = rng.random((4, 5))
    proprio = rng.normal(0, 1, (4, 4))
    check_param_grads(net, lambda: net.forward(touch, proprio))


def test_vision_net_gradients_match_finite_differences():
    net = tiny_vision_net()
    assert net.num_params() < 450
    rng = np.random.default_rng(1)
    left = rng.random((2, 2, 8, 8))
    right = rng.random((2, 2, 8, 8))
    proprio = rng.normal(0, 1, (2, 3))
    check_param_grads(net, lambda: net.forward(left, right, proprio))


# -- single layers -------------------------------------------------------------


def input_grad_check(layer, x, seed=0):
    rng = np.random.default_rng(seed)
    y = layer.forward(x)
    w = rng.normal(0, 1, y.shape)
    dx = layer.backward(w)

    def loss(xv):
        return float(np.sum(layer.forward(xv) * w))

    numeric = np.zeros_like(x)
    flat_x = x.ravel()
    flat_n = numeric.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + H
        hi = loss(x)
        flat_x[i] = orig - H
        lo = loss(x)
        flat_x[i] = orig
        flat_n[i] = (hi - lo) / (2.0 * H)
    np.testing.assert_allclose(dx, numeric, atol=1e-7)


def test_linear_input_gradient():
    rng = np.random.default_rng(7)
    layer = N.Linear(6, 4, rng, dtype=np.float64)
    input_grad_check(layer, rng.normal(0, 1, (3, 6)))


def test_conv_input_gradient():
    rng = np.random.default_rng(8)
    layer = N.Conv2d(2, 3, 3, 2, 1, rng, dtype=np.float64)
    input_grad_check(layer, rng.normal(0, 1, (2, 2, 6, 6)))


def test_pool_input_gradient():
    rng = np.random.default_rng(9)
    input_grad_check(N.GlobalAvgPool(), rng.normal(0, 1, (2, 3, 4, 4)))


def test_activation_input_gradients():
    rng = np.random.default_rng(10)
    # keep relu inputs away from the kink at zero
    x = rng.normal(0, 1, (5, 7))
    x[np.abs(x) < 0.05] = 0.1
    input_grad_check(N.Relu(), x.copy())
    input_grad_check(N.Tanh(), rng.normal(0, 1, (5, 7)))
    input_grad_check(N.Softplus(), rng.normal(0, 2, (5, 7)))


def conv_forward_oracle(layer, x):
    k, s, p = layer.kernel, layer.stride, layer.pad
    bsz, c, h, w = x.shape
    ho, wo = layer.out_size(h), layer.out_size(w)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    W = layer.W.value.reshape(layer.c_out, c, k, k)
    out = np.zeros((bsz, layer.c_out, ho, wo))
    for bi in range(bsz):
        for f in range(layer.c_out):
            for oy in range(ho):
                for ox in range(wo):
                    patch = xp[bi, :, oy * s:oy * s + k, ox * s:ox * s + k]
                    out[bi, f, oy, ox] = np.sum(patch * W[f]) + layer.b.value[f]
    return out


def test_conv_forward_matches_loop_oracle():
    rng = np.random.default_rng(11)
    for kernel, stride, pad in ((5, 2, 2), (3, 2, 1), (3, 1, 1)):
        layer = N.Conv2d(3, 4, kernel, stride, pad, rng, dtype=np.float64)
        x = rng.normal(0, 1, (2, 3, 8, 8))
        np.testing.assert_allclose(layer.forward(x), conv_forward_oracle(layer, x),
                                   atol=1e-12)
        layer._ctx.clear()


# -- numerics and bookkeeping -----------------------------------------------------


def test_softplus_stable_at_extremes():
    sp = N.Softplus()
    y = sp.forward(np.array([[-800.0, 0.0, 800.0]]))
    assert y[0, 0] == 0.0
    assert y[0, 1] == pytest.approx(np.log(2.0))
    assert y[0, 2] == 800.0
    g = sp.backward(np.ones((1, 3)))
    assert np.all(np.isfinite(g))
    assert g[0, 0] == 0.0 and g[0, 2] == 1.0


def test_orthogonal_init_properties():
    rng = np.random.default_rng(12)
    W = N.orthogonal(rng, (64, 16), gain=np.sqrt(2.0), dtype=np.float64)
    np.testing.assert_allclose(W.T @ W, 2.0 * np.eye(16), atol=1e-10)


def test_forward_shapes_and_sigma_positive():
    net = N.TouchPolicyNet(seed=1)
    touch = np.random.default_rng(0).random((3, 68)).astype(np.float32)
    proprio = np.random.default_rng(1).normal(0, 1, (3, 44)).astype(np.float32)
    mu, sigma, value = net.forward(touch, proprio)
    assert mu.shape == (3, 22) and sigma.shape == (3, 22) and value.shape == (3,)
    assert np.all(sigma > 0.0)
    assert np.all(np.abs(mu) <= 1.0)


def test_fresh_net_starts_near_neutral():
    # 0.01-gain heads with zero bias: mu ~ 0 and sigma ~ softplus(0) = ln 2
    net = N.TouchPolicyNet(seed=2)
    touch = np.zeros((1, 68), dtype=np.float32)
    proprio = np.zeros((1, 44), dtype=np.float32)
    mu, sigma, value = net.forward(touch, proprio)
    np.testing.assert_allclose(mu, 0.0, atol=1e-6)
    np.testing.assert_allclose(sigma, np.log(2.0), atol=1e-6)
    np.testing.assert_allclose(value, 0.0, atol=1e-6)


def test_default_parameter_counts():
    assert N.TouchPolicyNet(seed=0).num_params() == 551_981
    assert N.VisionPolicyNet(seed=0).num_params() == 687_853


def test_vision_conv_weights_shared_across_eyes():
    net = tiny_vision_net()
    rng = np.random.default_rng(5)
    img = rng.random((2, 2, 8, 8))
    proprio = rng.normal(0, 1, (2, 3))
    # with identical eye inputs the two fusion blocks see identical features
    mu, sigma, value = net.forward(img, img.copy(), proprio)
    el = net.conv.forward(img)
    np.testing.assert_array_equal(net.fusion._ctx[-1][:, :4],
                                  net.fusion._ctx[-1][:, 4:8])


def test_param_roundtrip_through_checkpoint(tmp_path):
    net = tiny_touch_net()
    rng = np.random.default_rng(6)
    touch, proprio = rng.random((2, 5)), rng.normal(0, 1, (2, 4))
    before = net.forward(touch, proprio)
    path = tmp_path / "net.ckpt"
    write_checkpoint(path, net.param_values(), {"kind": "test"})
    other = tiny_touch_net()
    for p in other.params().values():
        p.value += 1.0   # scramble
    arrays, meta = read_checkpoint(path)
    other.load_param_values(arrays)
    after = other.forward(touch, proprio)
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)
    assert meta == {"kind": "test"}


def test_load_rejects_mismatched_names():
    net = tiny_touch_net()
    values = net.param_values()
    values.pop(sorted(values)[0])
    with pytest.raises(ValueError, match="mismatch"):
        net.load_param_values(values)


def test_seeded_init_reproducible():
    a = N.TouchPolicyNet(seed=9).param_values()
    b = N.TouchPolicyNet(seed=9).param_values()
    c = N.TouchPolicyNet(seed=10).param_values()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
