"""Time-domain equivalent source method: a dictionary of fractional-delay
Green's-function atoms on a sphere of virtual sources, fit to observed
signals by l1-regularized least squares (FISTA)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .field import PressureField, SensorGrid

log = logging.getLogger(__name__)


class TesmError(ValueError):
    pass


def fibonacci_sphere(count: int, radius: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Near-uniform deterministic points on a sphere (golden-angle lattice)."""
    if count < 1:
        raise ValueError("need at least one point")
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    pts = np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)
    return np.asarray(center, dtype=np.float64) + radius * pts


def windowed_sinc_kernel(delay: float, taps: int):
    """Hann-windowed sinc approximating a delay of `delay` samples.

    Returns (start, coeffs): `coeffs[k]` sits at absolute sample index
    start + k, the window being centered on the (fractional) delay. start
    may be negative for short delays; callers decide how to place it.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"taps must be odd and positive, got {taps}")
    half = (taps - 1) // 2
    start = int(np.floor(delay + 0.5)) - half
    offsets = start + np.arange(taps) - delay
    window = 0.5 * (1.0 + np.cos(np.pi * offsets / (half + 1.0)))
    return start, np.sinc(offsets) * window


def frac_delay_filter(delay: float, taps: int) -> np.ndarray:
    """Causal FIR approximating x[n - delay]; unit DC gain to ~1e-3.

    The full window must fit at non-negative indices, so delay must be at
    least (taps - 1) / 2 samples.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"taps must be odd and positive, got {taps}")
    if delay < (taps - 1) / 2:
        raise ValueError(
            f"delay {delay} too small for a {taps}-tap window; "
            f"needs at least {(taps - 1) / 2} samples")
    start, coeffs = windowed_sinc_kernel(delay, taps)
    out = np.zeros(start + taps)
    out[start:] = coeffs
    return out


class EsmDictionary:
    """Sources, sensors, and the per-pair gain/delay atoms, with cached
    spectra for matrix-free apply/adjoint."""

    def __init__(self, source_positions, sensor_positions, *,
                 sample_rate: float, n_samples: int, c: float = 346.8,
                 taps: int = 81):
        self.source_positions = np.atleast_2d(
            np.asarray(source_positions, dtype=np.float64))
        self.sensor_positions = np.atleast_2d(
            np.asarray(sensor_positions, dtype=np.float64))
        if taps % 2 == 0:
            raise ValueError("taps must be odd")
        self.sample_rate = float(sample_rate)
        self.n_samples = int(n_samples)
        self.c = float(c)
        self.taps = int(taps)
        diff = (self.source_positions[:, None, :]
                - self.sensor_positions[None, :, :])
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        if np.min(dist) <= 1e-9:
            l, m = np.unravel_index(np.argmin(dist), dist.shape)
            raise TesmError(
                f"source {l} coincides with sensor {m}; gain is singular")
        self.distances = dist
        self.gains = 1.0 / (4.0 * np.pi * dist)
        self.delays = dist / self.c * self.sample_rate
        self._build_spectra()

    @property
    def num_sources(self) -> int:
        return self.source_positions.shape[0]

    @property
    def num_sensors(self) -> int:
        return self.sensor_positions.shape[0]

    def _build_spectra(self):
        half = (self.taps - 1) // 2
        max_start = int(np.floor(np.max(self.delays) + 0.5)) - half
        self.nfft = next_fast_len(self.n_samples + self.taps
                                  + max(max_start, 0) + 8)
        lcount, mcount = self.num_sources, self.num_sensors
        spectra = np.empty((lcount, mcount, self.nfft // 2 + 1),
                           dtype=np.complex128)
        buf = np.zeros((mcount, self.nfft))
        for l in range(lcount):
            buf[:] = 0.0
            for m in range(mcount):
                start, coeffs = windowed_sinc_kernel(self.delays[l, m], self.taps)
                idx = (start + np.arange(self.taps)) % self.nfft
                buf[m, idx] = coeffs * self.gains[l, m]
            spectra[l] = rfft(buf, axis=-1)
        self._spectra = spectra


def esm_apply(dic: EsmDictionary, w) -> PressureField:
    """Synthesize sensor signals from coefficient signals: per sensor the sum
    over sources of the delayed, 1/(4 pi d)-scaled coefficient signal."""
    warr = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if warr.shape != (dic.num_sources, dic.n_samples):
        raise ValueError(
            f"coefficients must be ({dic.num_sources}, {dic.n_samples}), "
            f"got {warr.shape}")
    spec_w = rfft(warr, n=dic.nfft, axis=-1)
    spec_y = np.einsum("lmf,lf->mf", dic._spectra, spec_w)
    y = irfft(spec_y, n=dic.nfft, axis=-1)[:, :dic.n_samples]
    return PressureField(y.T, dic.sample_rate, SensorGrid(dic.sensor_positions))


def esm_adjoint(dic: EsmDictionary, residual) -> np.ndarray:
    """Exact transpose of esm_apply: correlate sensor signals with the atoms."""
    r = residual.data if isinstance(residual, PressureField) else np.asarray(residual)
    if r.shape != (dic.n_samples, dic.num_sensors):
        raise ValueError(
            f"residual must be ({dic.n_samples}, {dic.num_sensors}), "
            f"got {r.shape}")
    spec_r = rfft(r.T, n=dic.nfft, axis=-1)
    spec_g = np.einsum("lmf,mf->lf", np.conj(dic._spectra), spec_r)
    return irfft(spec_g, n=dic.nfft, axis=-1)[:, :dic.n_samples]


@dataclass
class EsmCoefficients:
    """Per-source time-domain coefficient signals, shape (L, N_w)."""

    w: np.ndarray

    def sparsity(self, threshold_rel: float = 1e-8) -> float:
        peak = np.max(np.abs(self.w))
        if peak == 0:
            return 1.0
        return float(np.mean(np.abs(self.w) < threshold_rel * peak))


@dataclass(frozen=True)
class FistaConfig:
    mu: float
    max_iters: int = 500
    power_iters: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


def soft_threshold(x, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def operator_norm_sq(dic: EsmDictionary, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of A^T A by power iteration (the squared operator
    norm of the apply map)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal((dic.num_sources, dic.n_samples))
    v /= np.linalg.norm(v)
    est = 1.0
    for _ in range(iters):
        u = esm_apply(dic, v).data
        v = esm_adjoint(dic, u)
        est = np.linalg.norm(v)
        if est == 0:
            return 0.0
        v /= est
    return float(est)


def default_mu(dic: EsmDictionary, observations) -> float:
    """0.01 * ||A^T p||_inf, a scale-aware default for the l1 weight."""
    g = esm_adjoint(dic, observations)
    return 0.01 * float(np.max(np.abs(g)))


def fista_objective(dic: EsmDictionary, w, observations, mu: float) -> float:
    p = observations.data if isinstance(observations, PressureField) else observations
    warr = np.asarray(getattr(w, "w", w))
    r = esm_apply(dic, warr).data - p
    return 0.5 * float(np.sum(r * r)) + mu * float(np.sum(np.abs(warr)))


def fista(dic: EsmDictionary, observations, cfg: FistaConfig,
          on_iteration=None) -> EsmCoefficients:
    """Minimize 0.5 ||A w - p||^2 + mu ||w||_1 with momentum and restart on
    objective increase; stops on relative objective change below tol."""
    p = observations.data if isinstance(observations, PressureField) else np.asarray(observations)
    if p.shape != (dic.n_samples, dic.num_sensors):
        raise ValueError(
            f"observations must be ({dic.n_samples}, {dic.num_sensors})")
    norm_sq = operator_norm_sq(dic, iters=cfg.power_iters)
    if norm_sq <= 0:
        raise TesmError("operator norm estimate is zero")
    step = 1.0 / norm_sq
    tau = step * cfg.mu
    shape = (dic.num_sources, dic.n_samples)
    x = np.zeros(shape)
    x_prev = np.zeros(shape)
    ax = np.zeros_like(p)
    ax_prev = np.zeros_like(p)
    t = 1.0
    obj = 0.5 * float(np.sum(p * p)) + 0.0
    for it in range(cfg.max_iters):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        # A y for y = x + beta (x - x_prev) from cached applications
        ay = (1.0 + beta) * ax - beta * ax_prev
        y = (1.0 + beta) * x - beta * x_prev
        g = esm_adjoint(dic, ay - p)
        x_new = soft_threshold(y - step * g, tau)
        ax_new = esm_apply(dic, x_new).data
        r = ax_new - p
        obj_new = 0.5 * float(np.sum(r * r)) + cfg.mu * float(np.sum(np.abs(x_new)))
        if not np.isfinite(obj_new):
            raise TesmError(f"objective became non-finite at iteration {it}")
        if obj_new > obj:
            # restart momentum; keep the proximal point
            t_next = 1.0
        x_prev, x = x, x_new
        ax_prev, ax = ax, ax_new
        t = t_next
        if on_iteration is not None:
            on_iteration(it, obj_new)
        if abs(obj - obj_new) <= cfg.tol * max(abs(obj), 1e-30):
            obj = obj_new
            break
        obj = obj_new
    log.debug("fista stopped after %d iterations, objective %.6e", it + 1, obj)
    return EsmCoefficients(w=x)


def tesm_reconstruct(dic: EsmDictionary, coeffs, query_positions) -> PressureField:
    """Evaluate the atom sum at arbitrary positions (fresh gains and delays
    from the geometry)."""
    query = np.atleast_2d(np.asarray(query_positions, dtype=np.float64))
    qdic = EsmDictionary(dic.source_positions, query,
                         sample_rate=dic.sample_rate, n_samples=dic.n_samples,
                         c=dic.c, taps=dic.taps)
    return esm_apply(qdic, coeffs)
