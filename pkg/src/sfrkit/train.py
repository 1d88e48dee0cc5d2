"""Physics-informed training loop: data-fidelity plus wave-equation residual
loss over random collocation points, optimized with Adam."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .field import (DomainScaling, PressureField, SensorSubset,
                    normalize_coords, restrict, to_network_coords)
from .jets import (JetBundle, JetWorkspace, add_grads, engine_backward,
                   engine_forward, zeros_grads)
from .siren import InitSpec, SirenLayer, SirenNetwork, init_siren, save_checkpoint

log = logging.getLogger(__name__)

# Points per engine call; performance knob only, does not change semantics.
CHUNK = 512

CHECKPOINT_EVERY = 500


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; the last periodic checkpoint
    (if a checkpoint directory was given) is left on disk."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_pde: float = 1e-5
    iterations: int = 3000
    lr: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    data_batch: int = 4096        # (sensor, sample) pairs per step; 0 = all
    collocation_count: int = 8192
    seed: int = 0

    def __post_init__(self):
        if self.lambda_pde < 0:
            raise ValueError("lambda_pde must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.collocation_count < 1:
            raise ValueError("collocation_count must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_network(cls, net: SirenNetwork) -> "AdamState":
        return cls(
            m=[(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers],
            v=[(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers],
        )


@dataclass(frozen=True)
class LossReport:
    iteration: int
    data_term: float
    pde_term: float
    total: float


def wave_operator_weights(c_scaled: float) -> np.ndarray:
    """Axis weights of the scaled wave operator on [u_t, u_x, u_y, u_z]."""
    if c_scaled <= 0:
        raise ValueError("c_scaled must be positive")
    return np.array([-1.0 / c_scaled**2, 1.0, 1.0, 1.0])


def pde_residual(jets: JetBundle, c_scaled: float) -> np.ndarray:
    """Wave-equation residual Laplacian(p) - p_tt / c^2 in network units."""
    d2 = jets.diag2
    return (d2[..., 1] + d2[..., 2] + d2[..., 3]) - d2[..., 0] / c_scaled**2


def sample_collocation(q: int, seed: int, iteration: int) -> np.ndarray:
    """Q i.i.d. uniform points over [-100, 100] x [-1, 1]^3, deterministic
    per (seed, iteration)."""
    if q < 1:
        raise ValueError("need at least one collocation point")
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, iteration, 1])))
    u = rng.uniform(-1.0, 1.0, size=(q, 4))
    u[:, 0] *= 100.0
    return u


def _sample_data_batch(observations: PressureField, cfg: TrainConfig,
                       iteration: int):
    n, m = observations.num_samples, observations.num_sensors
    total = n * m
    if cfg.data_batch <= 0 or cfg.data_batch >= total:
        flat = np.arange(total)
    else:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([cfg.seed, iteration, 0])))
        flat = rng.choice(total, size=cfg.data_batch, replace=False)
    n_idx, m_idx = np.divmod(flat, m)
    times = observations.t0 + n_idx / observations.sample_rate
    positions = observations.grid.positions[m_idx]
    targets = observations.data[n_idx, m_idx]
    return positions, times, targets


class _Engines:
    """Reusable fixed-size workspaces for the two training passes."""

    def __init__(self, net: SirenNetwork, chunk: int = CHUNK):
        self.chunk = chunk
        self.value_ws = JetWorkspace(net, chunk, num_d2=0, with_d1=False)
        self.wave_ws = JetWorkspace(net, chunk, num_d2=1, with_d1=True)

    def matches(self, net: SirenNetwork) -> bool:
        return self.value_ws.matches(net)


def _pad_chunk(u: np.ndarray, chunk: int) -> np.ndarray:
    if u.shape[0] == chunk:
        return u
    padded = np.zeros((chunk, u.shape[1]))
    padded[:u.shape[0]] = u
    return padded


def _data_pass(net, u, targets, engines, grads):
    """Mean squared error over (sensor, sample) points and its gradient."""
    total = u.shape[0]
    sq_sum = 0.0
    ws = engines.value_ws
    for lo in range(0, total, engines.chunk):
        hi = min(lo + engines.chunk, total)
        cu = _pad_chunk(u[lo:hi], engines.chunk)
        value, _, _ = engine_forward(net, cu, None, ws)
        err = np.zeros(engines.chunk)
        err[:hi - lo] = value[:hi - lo] - targets[lo:hi]
        sq_sum += float(err @ err)
        engine_backward(net, None, ws, (2.0 / total) * err, None, None, grads)
    return sq_sum / total


def _pde_pass(net, u, wvec, engines, grads):
    """Mean squared wave residual over collocation points and its gradient."""
    total = u.shape[0]
    sq_sum = 0.0
    ws = engines.wave_ws
    for lo in range(0, total, engines.chunk):
        hi = min(lo + engines.chunk, total)
        cu = _pad_chunk(u[lo:hi], engines.chunk)
        _, _, dd = engine_forward(net, cu, wvec, ws)
        resid = np.zeros(engines.chunk)
        resid[:hi - lo] = dd[:hi - lo, 0]
        sq_sum += float(resid @ resid)
        engine_backward(net, wvec, ws, None, None,
                        (2.0 / total) * resid[:, None], grads)
    return sq_sum / total


def loss_eval(net: SirenNetwork, observations: PressureField,
              scaling: DomainScaling, cfg: TrainConfig, iteration: int,
              engines: _Engines | None = None):
    """One evaluation of the combined loss and its exact weight gradients.

    Returns (LossReport, grads) where grads pairs with net.layers. The data
    term is the MSE over a deterministic mini-batch of observed (sensor,
    sample) pairs; the physics term is the mean squared wave residual over
    fresh collocation points.
    """
    if observations.num_sensors < 1 or observations.data.size == 0:
        raise ValueError("observations must be non-empty")
    if engines is None or not engines.matches(net):
        engines = _Engines(net)
    positions, times, targets = _sample_data_batch(observations, cfg, iteration)
    u_data = to_network_coords(scaling, positions, times)
    grads_data = zeros_grads(net)
    data_term = _data_pass(net, u_data, targets, engines, grads_data)

    u_coll = sample_collocation(cfg.collocation_count, cfg.seed, iteration)
    wvec = wave_operator_weights(scaling.c_scaled)[None, :]
    grads_pde = zeros_grads(net)
    pde_term = _pde_pass(net, u_coll, wvec, engines, grads_pde)

    grads = add_grads(grads_data, grads_pde, cfg.lambda_pde)
    report = LossReport(iteration=iteration, data_term=data_term,
                        pde_term=pde_term,
                        total=data_term + cfg.lambda_pde * pde_term)
    return report, grads


def adam_step(net: SirenNetwork, grads: list, state: AdamState,
              cfg: TrainConfig):
    """Standard bias-corrected Adam update; returns (new_net, new_state)."""
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    t = state.step + 1
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_layers = []
    new_m, new_v = [], []
    for li, (layer, (dw, db), (mw, mb), (vw, vb)) in enumerate(
            zip(net.layers, grads, state.m, state.v)):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise TrainingDiverged(f"non-finite gradient in layer {li}")
        mw = b1 * mw + (1 - b1) * dw
        mb = b1 * mb + (1 - b1) * db
        vw = b2 * vw + (1 - b2) * dw**2
        vb = b2 * vb + (1 - b2) * db**2
        w = layer.weight - cfg.lr * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
        b = layer.bias - cfg.lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
        new_layers.append(SirenLayer(w, b, layer.omega0, layer.is_linear))
        new_m.append((mw, mb))
        new_v.append((vw, vb))
    return (SirenNetwork(tuple(new_layers)),
            AdamState(m=new_m, v=new_v, step=t))


def train(observations: PressureField, subset: SensorSubset, cfg: TrainConfig,
          *, scaling: DomainScaling | None = None,
          net: SirenNetwork | None = None,
          c_phys: float | None = None,
          checkpoint_dir=None, log_every: int = 100):
    """Fit the network to the subset's signals under the wave-equation
    penalty; returns (network, list of LossReport).

    The normalization is derived from the full grid (the reconstruction
    domain), while only the subset's signals enter the data term. Periodic
    checkpoints land in checkpoint_dir when given.
    """
    if scaling is None:
        scaling = normalize_coords(
            observations.grid, observations.duration,
            c_phys=c_phys if c_phys is not None else 346.8,
            t0=observations.t0)
    observed = restrict(observations, subset)
    if net is None:
        net = init_siren(InitSpec(seed=cfg.seed))
    engines = _Engines(net)
    state = AdamState.for_network(net)
    history = []
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    for it in range(cfg.iterations):
        report, grads = loss_eval(net, observed, scaling, cfg, it, engines)
        history.append(report)
        if not np.isfinite(report.total):
            raise TrainingDiverged(
                f"loss became non-finite at iteration {it}")
        net, state = adam_step(net, grads, state, cfg)
        if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
            log.info("iter %d: data %.3e pde %.3e total %.3e",
                     it, report.data_term, report.pde_term, report.total)
        if checkpoint_dir is not None and (it + 1) % CHECKPOINT_EVERY == 0:
            save_checkpoint(net, os.path.join(
                checkpoint_dir, f"checkpoint_{it + 1:06d}.sfrd"))
    if checkpoint_dir is not None:
        save_checkpoint(net, os.path.join(checkpoint_dir, "checkpoint_final.sfrd"))
    return net, history


def write_loss_history(history: list, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "data_term", "pde_term", "total"])
        for rep in history:
            writer.writerow([rep.iteration, repr(rep.data_term),
                             repr(rep.pde_term), repr(rep.total)])
