"""Definition, initialization, and forward evaluation of the sinusoidal MLP.

The canonical configuration is 5 layers: four sin(omega0 * (Wx + b)) layers
of width 512 followed by a linear output layer, with omega0 = 0.5 on the
first layer and 30 on the hidden ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import (DomainScaling, PressureField, SensorGrid, read_meta,
                    read_tensor, sidecar_path, to_network_coords, write_tensor)


@dataclass(frozen=True)
class SirenLayer:
    weight: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray    # (fan_out,)
    omega0: float
    is_linear: bool = False

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ValueError(
                f"layer shape mismatch: weight {w.shape}, bias {b.shape}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class SirenNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.fan_in != prev.fan_out:
                raise ValueError(
                    f"layer widths do not chain: {prev.fan_out} -> {nxt.fan_in}")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass(frozen=True)
class InitSpec:
    """Seed plus uniform init bounds; None bounds pick the standard rule
    (first layer 1/fan_in, later layers sqrt(6/fan_in)/omega0)."""

    seed: int
    first_layer_bound: float | None = None
    hidden_bound: float | None = None

    def __post_init__(self):
        for name in ("first_layer_bound", "hidden_bound"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


def init_siren(spec: InitSpec, *, input_dim: int = 4, hidden_width: int = 512,
               hidden_layers: int = 4, output_dim: int = 1,
               first_omega0: float = 0.5,
               hidden_omega0: float = 30.0) -> SirenNetwork:
    """Uniform-initialized network, deterministic per seed; biases start at zero.

    `hidden_layers` counts the sinusoidal layers; one linear output layer is
    appended, so the canonical call yields 5 layers and 791,041 parameters.
    """
    if hidden_layers < 1:
        raise ValueError("need at least one sinusoidal layer")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    layers = []
    fan_in = input_dim
    for i in range(hidden_layers):
        if i == 0:
            bound = spec.first_layer_bound or 1.0 / fan_in
            omega0 = first_omega0
        else:
            bound = spec.hidden_bound or np.sqrt(6.0 / fan_in) / hidden_omega0
            omega0 = hidden_omega0
        w = rng.uniform(-bound, bound, size=(hidden_width, fan_in))
        layers.append(SirenLayer(w, np.zeros(hidden_width), omega0))
        fan_in = hidden_width
    bound = spec.hidden_bound or np.sqrt(6.0 / fan_in) / hidden_omega0
    w = rng.uniform(-bound, bound, size=(output_dim, fan_in))
    layers.append(SirenLayer(w, np.zeros(output_dim), 1.0, is_linear=True))
    return SirenNetwork(tuple(layers))


def forward(net: SirenNetwork, u) -> np.ndarray:
    """Evaluate the network on inputs of shape (..., input_dim).

    Returns shape (...,) when output_dim is 1, else (..., output_dim).
    """
    x = np.asarray(u, dtype=np.float64)
    for layer in net.layers:
        z = x @ layer.weight.T + layer.bias
        x = z if layer.is_linear else np.sin(layer.omega0 * z)
    if net.output_dim == 1:
        return x[..., 0]
    return x


def evaluate_on_grid(net: SirenNetwork, scaling: DomainScaling,
                     grid: SensorGrid, times: np.ndarray, *,
                     sample_rate: float | None = None,
                     chunk: int = 16384) -> PressureField:
    """Evaluate the network at every (time, sensor) pair of a grid.

    `times` are absolute seconds; uniform spacing is assumed when
    sample_rate is not given.
    """
    times = np.asarray(times, dtype=np.float64)
    if sample_rate is None:
        if times.size < 2:
            raise ValueError("need sample_rate or at least two time samples")
        sample_rate = 1.0 / (times[1] - times[0])
    n, m = times.size, grid.count
    rr = np.broadcast_to(grid.positions[None, :, :], (n, m, 3))
    tt = np.broadcast_to(times[:, None], (n, m))
    u = to_network_coords(scaling, rr, tt).reshape(n * m, 4)
    out = np.empty(n * m)
    for lo in range(0, n * m, chunk):
        hi = min(lo + chunk, n * m)
        out[lo:hi] = forward(net, u[lo:hi])
    return PressureField(out.reshape(n, m), sample_rate, grid, t0=float(times[0]))


def save_checkpoint(net: SirenNetwork, path) -> None:
    """Flattened weights in the field tensor container plus a shape manifest."""
    flat = np.concatenate(
        [np.concatenate([l.weight.ravel(), l.bias]) for l in net.layers])
    write_tensor(path, flat)
    manifest = {
        "kind": "siren_checkpoint",
        "layer_shapes": [[l.fan_out, l.fan_in] for l in net.layers],
        "omega0": [l.omega0 for l in net.layers],
        "is_linear": [l.is_linear for l in net.layers],
    }
    with open(sidecar_path(path), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> SirenNetwork:
    flat = read_tensor(path)
    manifest = read_meta(path)
    layers = []
    offset = 0
    for shape, omega0, is_linear in zip(manifest["layer_shapes"],
                                        manifest["omega0"],
                                        manifest["is_linear"]):
        fan_out, fan_in = int(shape[0]), int(shape[1])
        w = flat[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = flat[offset:offset + fan_out]
        offset += fan_out
        layers.append(SirenLayer(w, b, float(omega0), bool(is_linear)))
    if offset != flat.size:
        raise ValueError(
            f"checkpoint holds {flat.size} values but manifest describes {offset}")
    return SirenNetwork(tuple(layers))
