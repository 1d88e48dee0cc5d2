"""Normalized mean square error metrics over sensor signals, their
observed/missing split, and magnitude-spectrum helpers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.fft import rfft

from .field import PressureField, SensorSubset

DB_CLAMP = -200.0
SPECTRUM_DB_FLOOR = -400.0


class MetricsError(ValueError):
    pass


def _as_data(x) -> np.ndarray:
    if isinstance(x, PressureField):
        return x.data
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _subset_indices(subset) -> list:
    if isinstance(subset, SensorSubset):
        return list(subset.indices)
    return sorted(int(i) for i in subset)


def _ratio_db(mean_ratio: float) -> float:
    return 10.0 * np.log10(max(mean_ratio, 10.0**(DB_CLAMP / 10.0)))


def per_sensor_ratios(est, ref) -> np.ndarray:
    """Per-column ||err||^2 / ||ref||^2; errors out on silent reference sensors."""
    e, r = _as_data(est), _as_data(ref)
    if e.shape != r.shape:
        raise MetricsError(f"shape mismatch: estimate {e.shape} vs reference {r.shape}")
    ref_energy = np.sum(r * r, axis=0)
    zero = np.nonzero(ref_energy == 0)[0]
    if zero.size:
        raise MetricsError(
            f"reference sensor {int(zero[0])} has zero energy; NMSE undefined")
    err = e - r
    return np.sum(err * err, axis=0) / ref_energy


def nmse_total(est, ref) -> float:
    """10 log10 of the sensor-averaged normalized squared error, clamped at
    -200 dB for exact matches."""
    return _ratio_db(float(np.mean(per_sensor_ratios(est, ref))))


def nmse_val(est, ref, subset) -> float:
    """NMSE over the sensors missing from the subset."""
    ratios = per_sensor_ratios(est, ref)
    idx = _subset_indices(subset)
    missing = [i for i in range(ratios.size) if i not in set(idx)]
    if not missing:
        raise MetricsError("subset covers all sensors; no validation channels")
    return _ratio_db(float(np.mean(ratios[missing])))


def nmse_sig(est, ref, subset) -> float:
    """NMSE over the observed (subset) sensors."""
    ratios = per_sensor_ratios(est, ref)
    idx = _subset_indices(subset)
    if not idx:
        raise MetricsError("subset is empty")
    if max(idx) >= ratios.size:
        raise MetricsError("subset index out of range")
    return _ratio_db(float(np.mean(ratios[idx])))


@dataclass(frozen=True)
class NmseReport:
    nmse_total_db: float
    nmse_sig_db: float
    nmse_val_db: float | None     # absent when every sensor is observed
    per_sensor_db: tuple
    subset_indices: tuple | None


def compute_report(est, ref, subset=None) -> NmseReport:
    ratios = per_sensor_ratios(est, ref)
    per_sensor = tuple(_ratio_db(float(x)) for x in ratios)
    if subset is None:
        idx = list(range(ratios.size))
    else:
        idx = _subset_indices(subset)
    total = _ratio_db(float(np.mean(ratios)))
    sig = _ratio_db(float(np.mean(ratios[idx])))
    missing = [i for i in range(ratios.size) if i not in set(idx)]
    val = _ratio_db(float(np.mean(ratios[missing]))) if missing else None
    return NmseReport(
        nmse_total_db=total, nmse_sig_db=sig, nmse_val_db=val,
        per_sensor_db=per_sensor,
        subset_indices=tuple(idx) if subset is not None else None)


def report_to_json(report: NmseReport) -> str:
    payload = {
        "nmse_total_db": report.nmse_total_db,
        "nmse_sig_db": report.nmse_sig_db,
        "nmse_val_db": report.nmse_val_db,
        "per_sensor_db": list(report.per_sensor_db),
        "subset_indices": (list(report.subset_indices)
                           if report.subset_indices is not None else None),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report_csv(report: NmseReport, path, label: str = "") -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label", "nmse_total_db", "nmse_sig_db", "nmse_val_db"])
        writer.writerow([label, repr(report.nmse_total_db),
                         repr(report.nmse_sig_db),
                         "" if report.nmse_val_db is None
                         else repr(report.nmse_val_db)])


def magnitude_spectrum(signal, fft_size: int) -> np.ndarray:
    """One-sided magnitude spectrum in dB of a zero-padded signal."""
    s = np.asarray(signal, dtype=np.float64)
    if fft_size < s.shape[-1]:
        raise ValueError(
            f"fft_size {fft_size} shorter than signal ({s.shape[-1]})")
    mag = np.abs(rfft(s, n=fft_size, axis=-1))
    floor = 10.0**(SPECTRUM_DB_FLOOR / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor))
