import numpy as np
import pytest

from sfrkit.jets import (Jet2, JetBundle, JetWorkspace, adjoint_grad,
                         engine_backward, engine_forward, jet_layer,
                         network_jets, zeros_grads)
from sfrkit.siren import (InitSpec, SirenLayer, SirenNetwork, forward,
                          init_siren)


def toy_net(seed=1, width=8, hidden=2):
    return init_siren(InitSpec(seed=seed), hidden_width=width,
                      hidden_layers=hidden)


def perturbed(net, li, kind, idx, eps):
    layers = list(net.layers)
    layer = layers[li]
    w = layer.weight.copy()
    b = layer.bias.copy()
    (w if kind == "w" else b)[idx] += eps
    layers[li] = SirenLayer(w, b, layer.omega0, layer.is_linear)
    return SirenNetwork(tuple(layers))


def test_jet_layer_zero_direction():
    rng = np.random.default_rng(0)
    layer = SirenLayer(rng.standard_normal((6, 4)), rng.standard_normal(6), 2.0)
    x = Jet2(rng.standard_normal((3, 4)), np.zeros((3, 4)), np.zeros((3, 4)))
    out = jet_layer(layer, x)
    assert np.all(out.d1 == 0.0)
    assert np.all(out.d2 == 0.0)


def test_jet_layer_sin_at_zero():
    layer = SirenLayer(np.array([[1.0]]), np.zeros(1), 1.0)
    out = jet_layer(layer, Jet2(np.zeros((1, 1)), np.ones((1, 1)),
                                np.zeros((1, 1))))
    assert out.v[0, 0] == 0.0
    assert out.d1[0, 0] == 1.0
    assert out.d2[0, 0] == 0.0


def test_jet_layer_matches_finite_differences():
    rng = np.random.default_rng(1)
    layer = SirenLayer(rng.standard_normal((8, 8)) / np.sqrt(8),
                       rng.standard_normal(8) * 0.1, 1.0)
    v = rng.standard_normal(8)
    d = rng.standard_normal(8)

    def f(t):
        x = Jet2((v + t * d)[None, :], np.zeros((1, 8)), np.zeros((1, 8)))
        return jet_layer(layer, x).v[0]

    out = jet_layer(layer, Jet2(v[None, :], d[None, :], np.zeros((1, 8))))
    h = 1e-4
    d1_fd = (f(h) - f(-h)) / (2 * h)
    d2_fd = (f(h) - 2 * f(0.0) + f(-h)) / h**2
    assert np.max(np.abs(out.d1[0] - d1_fd)) < 1e-7 * max(np.max(np.abs(d1_fd)), 1)
    assert np.max(np.abs(out.d2[0] - d2_fd)) < 1e-7 * max(np.max(np.abs(d2_fd)), 1)


def test_network_jets_zero_weights():
    layers = (
        SirenLayer(np.zeros((8, 4)), np.zeros(8), 30.0),
        SirenLayer(np.zeros((1, 8)), np.array([0.3]), 1.0, is_linear=True),
    )
    net = SirenNetwork(layers)
    bundle = network_jets(net, np.random.default_rng(2).uniform(-1, 1, (5, 4)))
    assert np.allclose(bundle.value, 0.3)
    assert np.all(bundle.grad == 0.0)
    assert np.all(bundle.diag2 == 0.0)


def test_value_identical_across_direction_runs():
    net = toy_net()
    u = np.random.default_rng(3).uniform(-1, 1, (11, 4))
    values = []
    for i in range(4):
        d1 = np.zeros_like(u)
        d1[:, i] = 1.0
        jet = Jet2(u, d1, np.zeros_like(u))
        for layer in net.layers:
            jet = jet_layer(layer, jet)
        values.append(jet.v[:, 0])
    for v in values[1:]:
        assert np.array_equal(values[0], v)


def _fd_bundle(net, u, steps=(1e-2, 1e-3)):
    """4th-order central differences of the plain forward pass."""
    grad = np.empty((u.shape[0], 4))
    diag2 = np.empty((u.shape[0], 4))
    for i in range(4):
        h = steps[0] if i == 0 else steps[1]
        e = np.zeros(4)
        e[i] = h
        f2p = forward(net, u + 2 * e)
        f1p = forward(net, u + e)
        f0 = forward(net, u)
        f1m = forward(net, u - e)
        f2m = forward(net, u - 2 * e)
        grad[:, i] = (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h)
        diag2[:, i] = (-f2p + 16 * f1p - 30 * f0 + 16 * f1m - f2m) / (12 * h**2)
    return grad, diag2


def test_network_jets_match_finite_differences():
    net = toy_net(seed=5, width=16, hidden=3)
    u = np.random.default_rng(4).uniform(-1, 1, (6, 4))
    u[:, 0] *= 100
    bundle = network_jets(net, u)
    grad_fd, diag2_fd = _fd_bundle(net, u)
    assert (np.max(np.abs(bundle.grad - grad_fd))
            / np.max(np.abs(grad_fd)) < 1e-6)
    assert (np.max(np.abs(bundle.diag2 - diag2_fd))
            / np.max(np.abs(diag2_fd)) < 1e-6)


def test_analytic_plane_wave_jets():
    # single sinusoidal layer wired to sin(kappa u_x - omega u_t)
    kappa, omega_hat = 3.0, 1.7
    layers = (
        SirenLayer(np.array([[-omega_hat, kappa, 0.0, 0.0]]), np.zeros(1), 1.0),
    )
    net = SirenNetwork(layers)
    u = np.random.default_rng(5).uniform(-1, 1, (50, 4))
    bundle = network_jets(net, u)
    p = bundle.value
    expected = np.stack([-omega_hat**2 * p, -kappa**2 * p,
                         np.zeros_like(p), np.zeros_like(p)], axis=1)
    scale = np.max(np.abs(expected))
    assert np.max(np.abs(bundle.diag2 - expected)) < 1e-10 * scale


def test_jets_linear_in_final_layer_split():
    # block-diagonal trunk: jets of the joined net equal the sum of parts
    rng = np.random.default_rng(6)
    net_a = toy_net(seed=7, width=6, hidden=1)
    net_b = toy_net(seed=8, width=6, hidden=1)
    wa, ba = net_a.layers[0].weight, net_a.layers[0].bias
    wb, bb = net_b.layers[0].weight, net_b.layers[0].bias
    w_stack = np.vstack([wa, wb])
    b_stack = np.concatenate([ba, bb])
    out_a, out_b = net_a.layers[1], net_b.layers[1]
    w_out = np.concatenate([out_a.weight, out_b.weight], axis=1)
    b_out = out_a.bias + out_b.bias
    joined = SirenNetwork((
        SirenLayer(w_stack, b_stack, net_a.layers[0].omega0),
        SirenLayer(w_out, b_out, 1.0, is_linear=True),
    ))
    u = rng.uniform(-1, 1, (9, 4))
    ja = network_jets(net_a, u)
    jb = network_jets(net_b, u)
    jj = network_jets(joined, u)
    assert np.allclose(jj.value, ja.value + jb.value, atol=1e-12)
    assert np.allclose(jj.grad, ja.grad + jb.grad, atol=1e-12)
    assert np.allclose(jj.diag2, ja.diag2 + jb.diag2, atol=1e-12)


def test_engine_matches_reference_jets():
    net = toy_net(seed=9, width=12, hidden=3)
    u = np.random.default_rng(7).uniform(-1, 1, (33, 4))
    bundle = network_jets(net, u)
    ws = JetWorkspace(net, 33, num_d2=4, with_d1=True)
    value, d1, d2 = engine_forward(net, u, np.eye(4), ws)
    assert np.max(np.abs(value - bundle.value)) < 1e-13
    assert np.max(np.abs(d1 - bundle.grad)) < 1e-12
    assert np.max(np.abs(d2 - bundle.diag2)) < 1e-11


def test_adjoint_zero_loss_gives_zero_grads():
    net = toy_net()
    u = np.random.default_rng(8).uniform(-1, 1, (4, 4))
    loss, grads = adjoint_grad(net, u, lambda b: (0.0, None, None, None))
    assert loss == 0.0
    for dw, db in grads:
        assert np.all(dw == 0.0)
        assert np.all(db == 0.0)


def _check_adjoint_against_fd(net, u, head, loss_fn, tol=1e-4):
    _, grads = adjoint_grad(net, u, head)
    worst = 0.0
    for li in range(len(net.layers)):
        dw, db = grads[li]
        scale = max(np.max(np.abs(dw)), np.max(np.abs(db)), 1e-12)
        for kind, arr in (("w", dw), ("b", db)):
            for idx in np.ndindex(arr.shape):
                eps = 1e-6
                fp = loss_fn(perturbed(net, li, kind, idx, eps))
                fm = loss_fn(perturbed(net, li, kind, idx, -eps))
                worst = max(worst, abs(arr[idx] - (fp - fm) / (2 * eps)) / scale)
    assert worst < tol, f"worst relative gradient error {worst}"


def test_adjoint_value_squared_loss():
    net = toy_net(seed=11, width=4, hidden=1)
    u = np.random.default_rng(9).uniform(-1, 1, (1, 4))

    def head(b):
        return float(np.sum(b.value**2)), 2 * b.value, None, None

    def loss_fn(network):
        return float(np.sum(network_jets(network, u).value**2))

    _check_adjoint_against_fd(net, u, head, loss_fn)


def test_adjoint_wave_residual_loss():
    # validates third-order mixed derivatives through the reverse pass
    net = toy_net(seed=12, width=8, hidden=2)
    u = np.random.default_rng(10).uniform(-1, 1, (1, 4))
    c2 = 0.578**2
    wvec = np.array([-1.0 / c2, 1.0, 1.0, 1.0])

    def head(b):
        resid = b.diag2 @ wvec
        return (float(np.sum(resid**2)), None, None,
                2 * resid[:, None] * wvec[None, :])

    def loss_fn(network):
        resid = network_jets(network, u).diag2 @ wvec
        return float(np.sum(resid**2))

    _check_adjoint_against_fd(net, u, head, loss_fn)


def test_adjoint_gradient_head():
    net = toy_net(seed=13, width=6, hidden=1)
    u = np.random.default_rng(11).uniform(-1, 1, (2, 4))

    def head(b):
        return float(np.sum(b.grad**2)), None, 2 * b.grad, None

    def loss_fn(network):
        return float(np.sum(network_jets(network, u).grad**2))

    _check_adjoint_against_fd(net, u, head, loss_fn)


def test_adjoint_deterministic_bitwise():
    net = toy_net(seed=14)
    u = np.random.default_rng(12).uniform(-1, 1, (16, 4))

    def head(b):
        loss = float(np.sum(b.value**2) + np.sum(b.diag2**2))
        return loss, 2 * b.value, None, 2 * b.diag2

    _, g1 = adjoint_grad(net, u, head)
    _, g2 = adjoint_grad(net, u, head)
    for (w1, b1), (w2, b2) in zip(g1, g2):
        assert np.array_equal(w1, w2)
        assert np.array_equal(b1, b2)


def test_wave_combination_channel_matches_full_engine():
    net = toy_net(seed=15, width=10, hidden=2)
    u = np.random.default_rng(13).uniform(-1, 1, (7, 4))
    wvec = np.array([[-2.5, 1.0, 1.0, 1.0]])
    ws = JetWorkspace(net, 7, num_d2=1, with_d1=True)
    _, _, dd = engine_forward(net, u, wvec, ws)
    bundle = network_jets(net, u)
    assert np.max(np.abs(dd[:, 0] - bundle.diag2 @ wvec[0])) < 1e-11

    grads_wave = zeros_grads(net)
    engine_backward(net, wvec, ws, None, None, 2 * dd, grads_wave)

    def head(b):
        resid = b.diag2 @ wvec[0]
        return (float(np.sum(resid**2)), None, None,
                2 * resid[:, None] * wvec[0][None, :])

    _, grads_full = adjoint_grad(net, u, head)
    for (w1, b1), (w2, b2) in zip(grads_wave, grads_full):
        assert np.allclose(w1, w2, rtol=1e-10, atol=1e-14)
        assert np.allclose(b1, b2, rtol=1e-10, atol=1e-14)


def test_jet_layer_dimension_mismatch():
    layer = SirenLayer(np.zeros((3, 5)), np.zeros(3), 1.0)
    x = Jet2(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        jet_layer(layer, x)
