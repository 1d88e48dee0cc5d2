"""Core domain types: sensor grids, sampled pressure fields, coordinate
normalization between physical and network units, sensor subsetting, and the
binary field-tensor file format shared by all modules."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SFRD"
FORMAT_VERSION = 1

DEFAULT_SOUND_SPEED = 346.8  # m/s, air at ~26 C


class GeometryError(ValueError):
    """Raised for degenerate or inconsistent sensor geometry."""


class FieldFormatError(ValueError):
    """Raised when a field tensor file fails to parse; names the bad header field."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SensorGrid:
    """Ordered list of 3D sensor positions in meters."""

    positions: np.ndarray  # (M, 3)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError(f"positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise GeometryError("grid needs at least one sensor")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("sensor positions must be finite")
        object.__setattr__(self, "positions", _readonly(pos))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def cubic(cls, n_per_axis: int = 4, spacing: float = 0.1,
              center=(0.0, 0.0, 0.0)) -> "SensorGrid":
        """Axis-aligned n x n x n grid; the canonical experiment uses 4/0.1 m."""
        axis = (np.arange(n_per_axis) - (n_per_axis - 1) / 2.0) * spacing
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        pos = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        return cls(pos + np.asarray(center, dtype=np.float64))

    def bounding_box(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)


@dataclass(frozen=True)
class PressureField:
    """N x M matrix of sampled pressure signals (Pa, arbitrary linear scale)."""

    data: np.ndarray  # (N, M)
    sample_rate: float
    grid: SensorGrid
    t0: float = 0.0

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2:
            raise ValueError(f"pressure data must be 2-D, got {data.ndim}-D")
        if data.shape[0] < 1:
            raise ValueError("pressure data needs at least one time sample")
        if data.shape[1] != self.grid.count:
            raise ValueError(
                f"data has {data.shape[1]} columns but grid has "
                f"{self.grid.count} sensors")
        if not np.all(np.isfinite(data)):
            raise ValueError("pressure data must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def num_samples(self) -> int:
        return self.data.shape[0]

    @property
    def num_sensors(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        """Window length N / fs in seconds."""
        return self.num_samples / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.num_samples) / self.sample_rate


@dataclass(frozen=True)
class DomainScaling:
    """Affine map between physical (meters, seconds) and network units.

    Space maps isotropically into [-1, 1] on the largest bounding-box extent,
    time onto [-100, 100]; the scaled sound speed keeps the wave operator
    form-invariant: c_scaled = c_phys * space_scale / time_scale.
    """

    center: np.ndarray         # (3,) meters
    space_scale: float         # network units per meter
    time_scale: float          # network units per second
    c_phys: float              # m/s
    c_scaled: float            # network space units per network time unit
    t_mid: float               # seconds mapped to u_t = 0

    def __post_init__(self):
        if self.space_scale <= 0 or self.time_scale <= 0:
            raise ValueError("scales must be positive")
        expected = self.c_phys * self.space_scale / self.time_scale
        if abs(self.c_scaled - expected) > 1e-12 * max(abs(expected), 1.0):
            raise ValueError(
                f"inconsistent c_scaled: {self.c_scaled} vs "
                f"c_phys*space_scale/time_scale = {expected}")
        object.__setattr__(
            self, "center", _readonly(np.asarray(self.center, dtype=np.float64)))


def normalize_coords(grid: SensorGrid, duration: float, *,
                     c_phys: float = DEFAULT_SOUND_SPEED,
                     t0: float = 0.0) -> DomainScaling:
    """Build the physical-to-network scaling for a grid and a time window.

    The grid's bounding-box midpoint maps to the spatial origin and the
    window midpoint t0 + duration/2 maps to u_t = 0.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    lo, hi = grid.bounding_box()
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise GeometryError(
            "grid has zero spatial extent; cannot define a space scale")
    space_scale = 2.0 / extent
    time_scale = 200.0 / duration
    return DomainScaling(
        center=(lo + hi) / 2.0,
        space_scale=space_scale,
        time_scale=time_scale,
        c_phys=c_phys,
        c_scaled=c_phys * space_scale / time_scale,
        t_mid=t0 + duration / 2.0,
    )


def to_network_coords(scaling: DomainScaling, r, t) -> np.ndarray:
    """Map positions (..., 3) in meters and times (...) in seconds to
    network inputs [u_t, u_x, u_y, u_z] with shape (..., 4)."""
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    u_spatial = (r - scaling.center) * scaling.space_scale
    u_t = (t - scaling.t_mid) * scaling.time_scale
    return np.concatenate(
        [u_t[..., None], u_spatial], axis=-1)


def from_network_coords(scaling: DomainScaling, u) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of to_network_coords; returns (r, t)."""
    u = np.asarray(u, dtype=np.float64)
    r = u[..., 1:4] / scaling.space_scale + scaling.center
    t = u[..., 0] / scaling.time_scale + scaling.t_mid
    return r, t


@dataclass(frozen=True)
class SensorSubset:
    """Sorted distinct sensor indices selected from a grid."""

    indices: tuple
    seed: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ValueError("subset must contain at least one sensor")
        if sorted(set(idx)) != list(idx):
            raise ValueError("indices must be sorted and distinct")
        if idx[0] < 0:
            raise ValueError("indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        return len(self.indices)

    def complement(self, total: int) -> tuple:
        chosen = set(self.indices)
        return tuple(i for i in range(total) if i not in chosen)


def select_subset(grid: SensorGrid, fraction: float, seed: int) -> SensorSubset:
    """Uniform random subset of round(fraction * M) sensors, deterministic per seed."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    m = grid.count
    k = int(round(fraction * m))
    if k <= 0:
        raise ValueError(
            f"fraction {fraction} of {m} sensors selects no sensor")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.choice(m, size=k, replace=False))
    return SensorSubset(indices=tuple(int(i) for i in idx), seed=seed)


def restrict(field: PressureField, subset: SensorSubset) -> PressureField:
    """Field restricted to the subset's sensors (columns and grid rows)."""
    idx = list(subset.indices)
    if idx[-1] >= field.num_sensors:
        raise ValueError("subset index out of range for this field")
    return PressureField(
        data=field.data[:, idx],
        sample_rate=field.sample_rate,
        grid=SensorGrid(field.grid.positions[idx]),
        t0=field.t0,
    )


# ---------------------------------------------------------------------------
# Field tensor file format.
#
# Layout: magic "SFRD", uint32 LE version (=1), uint32 LE ndim, ndim uint64 LE
# dims, then row-major float64 LE payload. Metadata lives in a sidecar JSON
# document with the same basename and extension ".meta.json".
# ---------------------------------------------------------------------------

def sidecar_path(path) -> str:
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".meta.json"


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FieldFormatError(
            f"truncated file while reading {what}: wanted {n} bytes, "
            f"got {len(buf)}")
    return buf


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise FieldFormatError(f"bad magic: {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FieldFormatError(
                f"unsupported version {version}, expected {FORMAT_VERSION}")
        (ndim,) = struct.unpack("<I", _read_exact(f, 4, "ndim"))
        if ndim > 16:
            raise FieldFormatError(f"implausible ndim {ndim}")
        dims = []
        for i in range(ndim):
            (d,) = struct.unpack("<Q", _read_exact(f, 8, f"dims[{i}]"))
            dims.append(d)
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = _read_exact(f, count * 8, "payload")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return arr.reshape(dims)


def _scaling_to_dict(scaling: DomainScaling) -> dict:
    return {
        "center": [float(x) for x in scaling.center],
        "space_scale": scaling.space_scale,
        "time_scale": scaling.time_scale,
        "c_phys": scaling.c_phys,
        "c_scaled": scaling.c_scaled,
        "t_mid": scaling.t_mid,
    }


def scaling_from_dict(d: dict) -> DomainScaling:
    return DomainScaling(
        center=np.asarray(d["center"], dtype=np.float64),
        space_scale=float(d["space_scale"]),
        time_scale=float(d["time_scale"]),
        c_phys=float(d["c_phys"]),
        c_scaled=float(d["c_scaled"]),
        t_mid=float(d["t_mid"]),
    )


def save_field(field: PressureField, path, *, c_phys: float | None = None,
               scaling: DomainScaling | None = None) -> None:
    """Write field data plus a sidecar metadata document."""
    write_tensor(path, field.data)
    meta = {
        "kind": "pressure_field",
        "sample_rate": field.sample_rate,
        "t0": field.t0,
        "grid_positions": field.grid.positions.tolist(),
        "c_phys": c_phys,
        "scaling": _scaling_to_dict(scaling) if scaling is not None else None,
    }
    with open(sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_meta(path) -> dict:
    with open(sidecar_path(path)) as f:
        return json.load(f)


def load_field(path) -> PressureField:
    data = read_tensor(path)
    if data.ndim != 2:
        raise FieldFormatError(
            f"pressure field must be 2-D, file holds {data.ndim}-D tensor")
    meta = read_meta(path)
    return PressureField(
        data=data,
        sample_rate=float(meta["sample_rate"]),
        grid=SensorGrid(np.asarray(meta["grid_positions"], dtype=np.float64)),
        t0=float(meta["t0"]),
    )
