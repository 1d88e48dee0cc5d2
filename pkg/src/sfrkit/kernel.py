"""Frequency-domain kernel ridge regression baseline.

Per frequency bin, observed spectra are interpolated with the sinc-family
reproducing kernel j0(k ||r - r'||) (which bakes the Helmholtz constraint
into the solution space), then mapped back to the time domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, rfft
from scipy.linalg import cho_factor, cho_solve

from .field import PressureField, SensorGrid


class KernelFitError(RuntimeError):
    pass


def j0(x) -> np.ndarray:
    """Zero-order spherical Bessel function sin(x)/x with the removable
    singularity handled by its quadratic series."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    with np.errstate(invalid="ignore"):
        out = np.where(small, 1.0 - x * x / 6.0, np.sin(safe) / safe)
    return out


@dataclass(frozen=True)
class SpectralField:
    """One-sided spectra of the sensor signals, shape (bins, M)."""

    values: np.ndarray
    fft_size: int

    @property
    def bins(self) -> int:
        return self.values.shape[0]


def dft_forward(signals, fft_size: int) -> SpectralField:
    """One-sided DFT of zero-padded time signals (N, M) -> (bins, M)."""
    s = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    if fft_size < s.shape[0]:
        raise ValueError(
            f"fft_size {fft_size} shorter than the {s.shape[0]}-sample signals")
    return SpectralField(rfft(s, n=fft_size, axis=0), fft_size)


def dft_inverse(spectral: SpectralField, n_samples: int) -> np.ndarray:
    """Back to time domain, truncated to the original length."""
    x = irfft(spectral.values, n=spectral.fft_size, axis=0)
    return x[:n_samples]


def gram_matrix(positions, k: float) -> np.ndarray:
    """K[i, j] = j0(k ||r_i - r_j||); symmetric with unit diagonal."""
    if k < 0:
        raise ValueError("wavenumber must be non-negative")
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return j0(k * dist)


@dataclass(frozen=True)
class KernelModel:
    positions: np.ndarray      # (M, 3) observed sensors
    alphas: np.ndarray         # (bins, M) complex solved coefficients
    wavenumbers: np.ndarray    # (bins,)
    lam: float
    fft_size: int
    sample_rate: float
    n_samples: int
    t0: float
    c: float

    @property
    def bins(self) -> int:
        return self.alphas.shape[0]


def kernel_fit(observations: PressureField, lam: float, fft_size: int = 2048,
               c: float = 346.8) -> KernelModel:
    """Solve (K + lambda I) alpha = p per frequency bin.

    lambda = 0 is accepted only where the Gram matrix is numerically
    positive definite; a failed factorization raises naming the bin.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    spec = dft_forward(observations.data, fft_size)
    m = observations.num_sensors
    bins = spec.bins
    fs = observations.sample_rate
    wavenumbers = 2.0 * np.pi * np.arange(bins) * fs / fft_size / c
    alphas = np.empty((bins, m), dtype=np.complex128)
    eye = np.eye(m)
    for b in range(bins):
        gram = gram_matrix(observations.grid.positions, wavenumbers[b])
        try:
            factor = cho_factor(gram + lam * eye, lower=True)
        except np.linalg.LinAlgError as exc:
            raise KernelFitError(
                f"Gram factorization failed at bin {b} "
                f"(k = {wavenumbers[b]:.4g}, lambda = {lam}): {exc}") from exc
        rhs = np.stack([spec.values[b].real, spec.values[b].imag], axis=1)
        sol = cho_solve(factor, rhs)
        alphas[b] = sol[:, 0] + 1j * sol[:, 1]
    return KernelModel(positions=observations.grid.positions, alphas=alphas,
                       wavenumbers=wavenumbers, lam=lam, fft_size=fft_size,
                       sample_rate=fs, n_samples=observations.num_samples,
                       t0=observations.t0, c=c)


def kernel_reconstruct(model: KernelModel, query_positions) -> PressureField:
    """Evaluate the fitted interpolant at arbitrary positions and return the
    time-domain field."""
    query = np.atleast_2d(np.asarray(query_positions, dtype=np.float64))
    diff = query[:, None, :] - model.positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))  # (P, M)
    kappa = j0(model.wavenumbers[:, None, None] * dist[None, :, :])
    spectra = np.einsum("bpm,bm->bp", kappa, model.alphas)
    data = dft_inverse(SpectralField(spectra, model.fft_size), model.n_samples)
    return PressureField(data, model.sample_rate, SensorGrid(query),
                         t0=model.t0)
