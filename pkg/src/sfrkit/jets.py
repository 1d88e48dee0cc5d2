"""Order-2 directional Taylor jets through sinusoidal MLP layers, and a
hand-derived reverse pass over the extended forward computation.

The jet of a layer carries (value, first, second directional derivative).
Seeding the direction with each input axis yields the network value, input
gradient, and the pure second derivatives needed by the wave operator; the
reverse pass turns cotangents on those quantities into exact weight
gradients. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .siren import SirenLayer, SirenNetwork


@dataclass
class Jet2:
    """Value and first/second directional derivatives of one layer's
    activations, batched as (..., width)."""

    v: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        if not (self.v.shape == self.d1.shape == self.d2.shape):
            raise ValueError(
                f"jet component shapes differ: {self.v.shape}, "
                f"{self.d1.shape}, {self.d2.shape}")


@dataclass
class JetBundle:
    """Network value, input gradient, and pure second input derivatives.

    Axis order matches the network input [u_t, u_x, u_y, u_z]: grad and
    diag2 have shape (..., input_dim).
    """

    value: np.ndarray
    grad: np.ndarray
    diag2: np.ndarray


def jet_layer(layer: SirenLayer, x: Jet2) -> Jet2:
    """Propagate a second-order jet through one layer.

    With a = W v + b, a' = W d1, a'' = W d2 the sinusoidal layer maps to
    (sin(wa), w cos(wa) a', w cos(wa) a'' - w^2 sin(wa) a'^2); the linear
    layer passes (a, a', a'') through.
    """
    w, b, omega = layer.weight, layer.bias, layer.omega0
    if x.v.shape[-1] != layer.fan_in:
        raise ValueError(
            f"jet width {x.v.shape[-1]} does not match layer fan_in "
            f"{layer.fan_in}")
    a = x.v @ w.T + b
    a1 = x.d1 @ w.T
    a2 = x.d2 @ w.T
    if layer.is_linear:
        return Jet2(a, a1, a2)
    s = np.sin(omega * a)
    c = omega * np.cos(omega * a)
    return Jet2(s, c * a1, c * a2 - omega**2 * s * a1**2)


def network_jets(net: SirenNetwork, u) -> JetBundle:
    """Run jets through all layers once per input axis (d1 seeded with e_i,
    d2 with zero) and assemble value, gradient, and diagonal second
    derivatives. The value is identical across the runs."""
    u = np.asarray(u, dtype=np.float64)
    dim = net.input_dim
    if u.shape[-1] != dim:
        raise ValueError(f"expected inputs (..., {dim}), got {u.shape}")
    batch_shape = u.shape[:-1]
    flat = u.reshape(-1, dim)
    value = None
    grad = np.empty((flat.shape[0], dim))
    diag2 = np.empty((flat.shape[0], dim))
    for i in range(dim):
        d1 = np.zeros_like(flat)
        d1[:, i] = 1.0
        jet = Jet2(flat, d1, np.zeros_like(flat))
        for layer in net.layers:
            jet = jet_layer(layer, jet)
        if value is None:
            value = jet.v[:, 0]
        grad[:, i] = jet.d1[:, 0]
        diag2[:, i] = jet.d2[:, 0]
    return JetBundle(value.reshape(batch_shape),
                     grad.reshape(batch_shape + (dim,)),
                     diag2.reshape(batch_shape + (dim,)))


# ---------------------------------------------------------------------------
# Stacked tape engine.
#
# All jet channels of one layer live in a single (C, B, width) array so each
# layer costs one GEMM forward, one for the input cotangents, and one for the
# weight gradient. Channel layout: 0 = value, 1..dim = first derivatives
# along each input axis, then K second-derivative channels. Channel k
# propagates the combination sum_i omega_mat[k, i] * d2_i, which covers both
# the per-axis case (omega_mat = I) and the fused wave-operator combination
# (omega_mat = [[-1/c^2, 1, 1, 1]]).
# ---------------------------------------------------------------------------


class JetWorkspace:
    """Preallocated per-layer buffers for the stacked engine; reuse across
    calls to avoid allocator churn in training loops."""

    def __init__(self, net: SirenNetwork, batch: int, num_d2: int,
                 with_d1: bool = True):
        if num_d2 > 0 and not with_d1:
            raise ValueError("second-derivative channels require d1 channels")
        self.batch = batch
        self.num_d2 = num_d2
        self.with_d1 = with_d1
        self.dim = net.input_dim
        self.channels = 1 + (self.dim if with_d1 else 0) + num_d2
        c, b = self.channels, batch
        self.in0 = np.zeros((c, b, self.dim))
        self.pre = []      # per layer: (C, B, fan_out); becomes lbar in reverse
        self.out = []      # per layer: activations stack (alias of pre for linear)
        self.gbar = []     # per layer: output cotangent stack
        self.sw = []       # sin(omega z) per sinusoidal layer
        self.cd = []       # omega cos(omega z) per sinusoidal layer
        self.q2 = []       # (K, B, fan_out) weighted squared first derivatives
        for layer in net.layers:
            n = layer.fan_out
            pre = np.zeros((c, b, n))
            self.pre.append(pre)
            self.out.append(pre if layer.is_linear else np.zeros((c, b, n)))
            self.gbar.append(np.zeros((c, b, n)))
            if layer.is_linear:
                self.sw.append(None)
                self.cd.append(None)
                self.q2.append(None)
            else:
                self.sw.append(np.zeros((b, n)))
                self.cd.append(np.zeros((b, n)))
                self.q2.append(np.zeros((num_d2, b, n)) if num_d2 else None)
        widths = {l.fan_out for l in net.layers}
        wmax = max(widths)
        self.tmp = np.zeros((b, wmax))
        self.tmp2 = np.zeros((b, wmax))
        self.shapes = [(l.fan_out, l.fan_in) for l in net.layers]

    def matches(self, net: SirenNetwork) -> bool:
        return self.shapes == [(l.fan_out, l.fan_in) for l in net.layers]


def _stack_inputs(ws: JetWorkspace, u: np.ndarray) -> None:
    ws.in0[0] = u
    if ws.with_d1:
        ws.in0[1:1 + ws.dim] = 0.0
        for i in range(ws.dim):
            ws.in0[1 + i, :, i] = 1.0
    if ws.num_d2:
        ws.in0[1 + ws.dim:] = 0.0


def engine_forward(net: SirenNetwork, u: np.ndarray,
                   omega_mat: np.ndarray | None,
                   ws: JetWorkspace):
    """Extended forward pass; records everything the reverse pass needs.

    Returns (value, d1, d2) with shapes (B,), (B, dim) or None, (B, K) or
    None, taken from the last layer's channel stack.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (ws.batch, ws.dim):
        raise ValueError(f"engine expects ({ws.batch}, {ws.dim}) inputs")
    k = ws.num_d2
    if k:
        omega_mat = np.asarray(omega_mat, dtype=np.float64)
        if omega_mat.shape != (k, ws.dim):
            raise ValueError(
                f"omega_mat must be ({k}, {ws.dim}), got {omega_mat.shape}")
    _stack_inputs(ws, u)
    c = ws.channels
    x = ws.in0
    for li, layer in enumerate(net.layers):
        n = layer.fan_out
        pre = ws.pre[li]
        np.matmul(x.reshape(c * x.shape[1], -1), layer.weight.T,
                  out=pre.reshape(c * ws.batch, n))
        pre[0] += layer.bias
        out = ws.out[li]
        if not layer.is_linear:
            omega = layer.omega0
            z = ws.tmp[:, :n]
            np.multiply(pre[0], omega, out=z)
            sw, cd = ws.sw[li], ws.cd[li]
            np.sin(z, out=sw)
            np.cos(z, out=cd)
            cd *= omega
            out[0] = sw
            if ws.with_d1:
                np.multiply(cd[None], pre[1:1 + ws.dim],
                            out=out[1:1 + ws.dim])
            if k:
                q2 = ws.q2[li]
                sq = ws.tmp2[:, :n]
                for kk in range(k):
                    qk = q2[kk]
                    np.multiply(pre[1], pre[1], out=sq)
                    np.multiply(sq, omega_mat[kk, 0], out=qk)
                    for i in range(1, ws.dim):
                        np.multiply(pre[1 + i], pre[1 + i], out=sq)
                        sq *= omega_mat[kk, i]
                        qk += sq
                    dd = out[1 + ws.dim + kk]
                    np.multiply(cd, pre[1 + ws.dim + kk], out=dd)
                    np.multiply(sw, qk, out=z)
                    z *= omega**2
                    dd -= z
        x = out
    last = ws.out[-1]
    value = last[0, :, 0].copy() if net.output_dim == 1 else last[0].copy()
    d1 = last[1:1 + ws.dim, :, 0].T.copy() if ws.with_d1 else None
    d2 = last[1 + ws.dim:, :, 0].T.copy() if k else None
    return value, d1, d2


def engine_backward(net: SirenNetwork, omega_mat: np.ndarray | None,
                    ws: JetWorkspace, vbar, d1bar, d2bar, grads) -> None:
    """Reverse pass over the recorded extended forward.

    Accumulates d(loss)/d(W, b) into `grads` (list of (dw, db) arrays) given
    cotangents of the last layer's value / gradient / second-derivative
    outputs. Overwrites the recorded pre-activation stacks.
    """
    c = ws.channels
    dim, k = ws.dim, ws.num_d2
    nlayers = len(net.layers)
    gb = ws.gbar[-1]
    gb[:] = 0.0
    gb[0, :, 0] = vbar if vbar is not None else 0.0
    if d1bar is not None:
        gb[1:1 + dim, :, 0] = np.asarray(d1bar).T
    if d2bar is not None:
        gb[1 + dim:, :, 0] = np.asarray(d2bar).T
    for li in range(nlayers - 1, -1, -1):
        layer = net.layers[li]
        n = layer.fan_out
        gbar = ws.gbar[li]
        pre = ws.pre[li]       # holds A1/A2 channels; becomes lbar below
        if layer.is_linear:
            lbar = gbar
        else:
            omega = layer.omega0
            sw, cd = ws.sw[li], ws.cd[li]
            s = ws.tmp[:, :n]
            np.multiply(sw, omega**2, out=s)
            t = ws.tmp2[:, :n]
            # zbar = cd*gbar0 - s*sum_i A1_i gbar_{1+i}
            #        - sum_k (s*A2_k + omega^2 cd q2_k) gbar_{1+dim+k}
            zbar = pre[0]
            np.multiply(cd, gbar[0], out=zbar)
            if ws.with_d1:
                for i in range(dim):
                    np.multiply(pre[1 + i], gbar[1 + i], out=t)
                    t *= s
                    zbar -= t
            for kk in range(k):
                np.multiply(s, pre[1 + dim + kk], out=t)
                t *= gbar[1 + dim + kk]
                zbar -= t
                np.multiply(cd, ws.q2[li][kk], out=t)
                t *= omega**2
                t *= gbar[1 + dim + kk]
                zbar -= t
            # a1bar_i = cd*gbar_{1+i} - 2 s A1_i sum_k omega_mat[k,i] gbar_d2_k
            if ws.with_d1:
                for i in range(dim):
                    a1bar = pre[1 + i]
                    if k:
                        np.multiply(gbar[1 + dim], omega_mat[0, i], out=t)
                        for kk in range(1, k):
                            t += omega_mat[kk, i] * gbar[1 + dim + kk]
                        t *= s
                        t *= a1bar
                        t *= 2.0
                        np.multiply(cd, gbar[1 + i], out=a1bar)
                        a1bar -= t
                    else:
                        np.multiply(cd, gbar[1 + i], out=a1bar)
            # a2bar_k = cd * gbar_d2_k
            for kk in range(k):
                np.multiply(cd, gbar[1 + dim + kk], out=pre[1 + dim + kk])
            lbar = pre
        x = ws.in0 if li == 0 else ws.out[li - 1]
        dw, db = grads[li]
        bsz = ws.batch
        dw += lbar.reshape(c * bsz, n).T @ x.reshape(c * bsz, -1)
        db += lbar[0].sum(axis=0)
        if li > 0:
            gprev = ws.gbar[li - 1]
            np.matmul(lbar.reshape(c * bsz, n), layer.weight,
                      out=gprev.reshape(c * bsz, -1))


def zeros_grads(net: SirenNetwork) -> list:
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias))
            for l in net.layers]


def scale_grads(grads: list, factor: float) -> list:
    return [(dw * factor, db * factor) for dw, db in grads]


def add_grads(a: list, b: list, factor: float = 1.0) -> list:
    return [(dwa + factor * dwb, dba + factor * dbb)
            for (dwa, dba), (dwb, dbb) in zip(a, b)]


def adjoint_grad(net: SirenNetwork, u, loss_head):
    """Exact weight gradients of a scalar function of the jets at a batch of
    input points.

    `loss_head(bundle)` must return (loss, vbar, gbar, d2bar): the loss value
    and its partial derivatives with respect to bundle.value (B,),
    bundle.grad (B, dim), and bundle.diag2 (B, dim); any cotangent may be
    None. Returns (loss, grads).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != net.input_dim:
        raise ValueError(f"expected (B, {net.input_dim}) inputs, got {u.shape}")
    dim = net.input_dim
    eye = np.eye(dim)
    ws = JetWorkspace(net, u.shape[0], num_d2=dim, with_d1=True)
    value, d1, d2 = engine_forward(net, u, eye, ws)
    loss, vbar, d1bar, d2bar = loss_head(JetBundle(value, d1, d2))
    grads = zeros_grads(net)
    engine_backward(net, eye, ws, vbar, d1bar, d2bar, grads)
    return loss, grads
