"""Derived acoustic quantities from a trained network: particle velocity via
the momentum-conservation integral of the pressure gradient, and the
instantaneous intensity field."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .field import DomainScaling, PressureField, SensorGrid, to_network_coords
from .jets import network_jets
from .siren import SirenNetwork

DEFAULT_RHO = 1.2  # kg/m^3


@dataclass(frozen=True)
class VelocityField:
    """Particle velocity (m/s), shape (N, M, 3)."""

    values: np.ndarray
    grid: SensorGrid
    sample_rate: float
    t0: float
    rho: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[1] != self.grid.count:
            raise ValueError(f"velocity values must be (N, M, 3), got {v.shape}")
        if self.rho <= 0:
            raise ValueError("fluid density must be positive")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class IntensityField:
    """Instantaneous intensity u * p (W/m^2), shape (N, M, 3)."""

    values: np.ndarray
    grid: SensorGrid
    sample_rate: float
    t0: float


def spatial_gradients(net: SirenNetwork, scaling: DomainScaling,
                      grid: SensorGrid, times, chunk: int = 4096) -> np.ndarray:
    """Physical-unit pressure gradient (Pa/m) at every (time, sensor) pair,
    shape (N, M, 3). Network-coordinate gradients scale by space_scale."""
    times = np.asarray(times, dtype=np.float64)
    n, m = times.size, grid.count
    rr = np.broadcast_to(grid.positions[None, :, :], (n, m, 3)).reshape(-1, 3)
    tt = np.broadcast_to(times[:, None], (n, m)).reshape(-1)
    u = to_network_coords(scaling, rr, tt)
    grad = np.empty((n * m, 3))
    for lo in range(0, n * m, chunk):
        hi = min(lo + chunk, n * m)
        bundle = network_jets(net, u[lo:hi])
        grad[lo:hi] = bundle.grad[:, 1:4] * scaling.space_scale
    return grad.reshape(n, m, 3)


def particle_velocity(net: SirenNetwork, scaling: DomainScaling,
                      grid: SensorGrid, times, rho: float = DEFAULT_RHO,
                      chunk: int = 4096) -> VelocityField:
    """u = -(1/rho) * cumulative integral of grad p from the first sample,
    with u(t0) = 0 and trapezoidal quadrature over the uniform time grid."""
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise ValueError("need at least two time samples to integrate")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
        raise ValueError("time samples must be uniform")
    grad = spatial_gradients(net, scaling, grid, times, chunk=chunk)
    integral = cumulative_trapezoid(grad, dx=float(dt[0]), axis=0, initial=0.0)
    return VelocityField(values=-integral / rho, grid=grid,
                         sample_rate=1.0 / float(dt[0]), t0=float(times[0]),
                         rho=rho)


def instantaneous_intensity(pressure: PressureField,
                            velocity: VelocityField) -> IntensityField:
    """Elementwise i = u * p."""
    if pressure.data.shape != velocity.values.shape[:2]:
        raise ValueError(
            f"pressure {pressure.data.shape} and velocity "
            f"{velocity.values.shape[:2]} shapes do not match")
    return IntensityField(
        values=velocity.values * pressure.data[:, :, None],
        grid=velocity.grid, sample_rate=velocity.sample_rate,
        t0=velocity.t0)


def time_averaged_intensity(intensity: IntensityField) -> np.ndarray:
    """Mean intensity vector per sensor, shape (M, 3)."""
    return intensity.values.mean(axis=0)


def write_intensity_csv(intensity: IntensityField, path) -> None:
    """Per-sensor time-averaged vectors as (x, y, z, ix, iy, iz) rows."""
    mean_vec = time_averaged_intensity(intensity)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z", "ix", "iy", "iz"])
        for pos, vec in zip(intensity.grid.positions, mean_vec):
            writer.writerow([repr(v) for v in (*pos, *vec)])
