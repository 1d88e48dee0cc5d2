"""Image-source-method ground truth: shoebox-room impulse responses (or free
field), source-signal convolution, and canonical simulated datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, rfft
from scipy.signal import fftconvolve

from .field import GeometryError, PressureField, SensorGrid
from .tesm import windowed_sinc_kernel

log = logging.getLogger(__name__)

SABINE_COEFF = 0.161


@dataclass(frozen=True)
class ShoeboxRoom:
    dimensions: np.ndarray  # (3,) meters
    absorption: float       # energy absorption per wall bounce, in (0, 1]
    c: float = 346.8
    max_order: int = 20

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise GeometryError(f"room dimensions must be 3 positive values, got {dims}")
        if not 0 < self.absorption <= 1:
            raise ValueError(f"absorption must be in (0, 1], got {self.absorption}")
        if self.max_order < 0:
            raise ValueError("max_order must be non-negative")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: float


def sabine_alpha(dimensions, t60: float) -> float:
    """Uniform energy absorption that yields the requested reverberation time
    (alpha = 0.161 V / (S T60))."""
    if t60 <= 0:
        raise ValueError("T60 must be positive")
    dims = np.asarray(dimensions, dtype=np.float64)
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_COEFF * volume / (surface * t60)
    if alpha > 1.0:
        raise ValueError(
            f"T60 {t60} s needs absorption {alpha:.3f} > 1; room too small")
    return alpha


def image_source_expansion(room: ShoeboxRoom, src, mic, max_order: int):
    """All mirror images with per-axis order up to max_order.

    Returns (distances, reflection_counts), each of length
    (2 max_order + 1)^3.
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    dims = room.dimensions
    for name, p in (("source", src), ("microphone", mic)):
        if np.any(p <= 0) or np.any(p >= dims):
            raise GeometryError(f"{name} position {p} not strictly inside room {dims}")
    orders = np.arange(-max_order, max_order + 1)
    images_per_axis = []
    for ax in range(3):
        img = orders * dims[ax] + np.where(orders % 2 == 0, src[ax],
                                           dims[ax] - src[ax])
        images_per_axis.append(img)
    ix, iy, iz = np.meshgrid(*images_per_axis, indexing="ij")
    nx, ny, nz = np.meshgrid(orders, orders, orders, indexing="ij")
    dx, dy, dz = ix - mic[0], iy - mic[1], iz - mic[2]
    distances = np.sqrt(dx * dx + dy * dy + dz * dz).ravel()
    reflections = (np.abs(nx) + np.abs(ny) + np.abs(nz)).ravel()
    return distances, reflections


def synthesize_rir(images, alpha: float, c: float, fs: float, length: int,
                   taps: int = 81) -> Rir:
    """Sum of attenuated fractional-delay impulses, one per image.

    Each image contributes (1 - alpha)^reflections / (4 pi d) at its travel
    delay. Images whose arrival lies beyond the buffer are dropped (counted
    in a warning).
    """
    distances, reflections = images
    buf = np.zeros(length)
    refl_amp = max(1.0 - alpha, 0.0)
    dropped = 0
    half = (taps - 1) // 2
    for d, refl in zip(np.asarray(distances, dtype=np.float64),
                       np.asarray(reflections)):
        if d <= 1e-12:
            raise GeometryError("image coincides with the receiver")
        amp = refl_amp**refl / (4.0 * np.pi * d)
        if amp == 0.0:
            continue
        delay = d / c * fs
        start, coeffs = windowed_sinc_kernel(delay, taps)
        if start + half >= length:
            dropped += 1
            continue
        lo = max(start, 0)
        hi = min(start + taps, length)
        if hi > lo:
            buf[lo:hi] += amp * coeffs[lo - start:hi - start]
    if dropped:
        log.warning("synthesize_rir: %d image(s) arrived beyond the %d-sample "
                    "buffer and were dropped", dropped, length)
    return Rir(taps=buf, sample_rate=fs)


def convolve(rir: Rir, signal, n_out: int | None = None) -> np.ndarray:
    """Linear convolution of the signal with the impulse response, truncated
    (or zero-padded) to n_out samples; defaults to the signal length."""
    s = np.asarray(signal, dtype=np.float64)
    if n_out is None:
        n_out = s.shape[0]
    full = fftconvolve(s, rir.taps)
    out = np.zeros(n_out)
    take = min(n_out, full.shape[0])
    out[:take] = full[:take]
    return out


def bandlimited_noise(n: int, fs: float, f_lo: float = 200.0,
                      f_hi: float = 2000.0, seed: int = 0) -> np.ndarray:
    """Unit-RMS noise with spectral support limited to [f_lo, f_hi] Hz."""
    rng = np.random.Generator(np.random.PCG64(seed))
    freqs = np.arange(n // 2 + 1) * fs / n
    spectrum = np.zeros(n // 2 + 1, dtype=np.complex128)
    band = (freqs >= f_lo) & (freqs <= f_hi)
    count = int(np.count_nonzero(band))
    spectrum[band] = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    x = irfft(spectrum, n=n)
    rms = np.sqrt(np.mean(x * x))
    if rms == 0:
        raise ValueError("band holds no spectral bins; widen it or raise n")
    return x / rms


def simulate_dataset(room: ShoeboxRoom | None, src, grid: SensorGrid,
                     signal, n_samples: int, fs: float, *,
                     c: float = 346.8, max_order: int | None = None,
                     rir_taps: int = 81) -> PressureField:
    """Per-sensor impulse response synthesis and convolution.

    room=None simulates free field (direct path only) at sound speed c;
    otherwise the room's c and absorption apply, with max_order optionally
    overriding the room default.
    """
    src = np.asarray(src, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    data = np.empty((n_samples, grid.count))
    if room is not None:
        c = room.c
        order = room.max_order if max_order is None else max_order
    for mi in range(grid.count):
        mic = grid.positions[mi]
        if room is None:
            d = float(np.linalg.norm(src - mic))
            if d <= 1e-12:
                raise GeometryError("source coincides with a sensor")
            images = (np.array([d]), np.array([0]))
            alpha = 1.0
            max_dist = d
        else:
            images = image_source_expansion(room, src, mic, order)
            alpha = room.absorption
            max_dist = float(np.max(images[0]))
        needed = int(np.ceil(max_dist / c * fs)) + rir_taps + 1
        length = min(needed, n_samples + rir_taps)
        rir = synthesize_rir(images, alpha, c, fs, length, taps=rir_taps)
        data[:, mi] = convolve(rir, signal, n_out=n_samples)
    return PressureField(data, fs, grid)


def desk_preset(*, reverberant: bool = False, n_samples: int = 800,
                fs: float = 16000.0, c: float = 346.8, signal_seed: int = 0,
                source_distance: float = 1.0,
                room_t60: float = 0.38, max_order: int = 20):
    """Canonical desk-scale experiment: 4 x 4 x 4 grid at 0.1 m spacing,
    bandlimited 200-2000 Hz noise source placed outside the array along +x.

    Returns (field, source_position, room_or_none).
    """
    signal = bandlimited_noise(n_samples + 512, fs, seed=signal_seed)
    if reverberant:
        dims = np.array([7.0, 6.4, 2.7])
        grid_center = np.array([3.0, 3.2, 1.35])
        grid = SensorGrid.cubic(4, 0.1, center=grid_center)
        src = grid_center + np.array([source_distance, 0.0, 0.0])
        room = ShoeboxRoom(dims, sabine_alpha(dims, room_t60), c=c,
                           max_order=max_order)
        field = simulate_dataset(room, src, grid, signal, n_samples, fs)
        return field, src, room
    grid = SensorGrid.cubic(4, 0.1)
    src = np.array([source_distance, 0.0, 0.0])
    field = simulate_dataset(None, src, grid, signal, n_samples, fs, c=c)
    return field, src, None
