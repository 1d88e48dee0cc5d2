import numpy as np
import pytest

from sfrkit.field import (PressureField, SensorGrid, normalize_coords)
from sfrkit.intensity import (IntensityField, VelocityField,
                              instantaneous_intensity, particle_velocity,
                              time_averaged_intensity, write_intensity_csv)
from sfrkit.siren import SirenLayer, SirenNetwork, forward


def plane_wave_net(kappa_u, c_scaled, amplitude=1.0):
    """Network computing amplitude * sin(kappa (u_x - c u_t))."""
    first = SirenLayer(np.array([[-c_scaled * kappa_u, kappa_u, 0.0, 0.0]]),
                       np.zeros(1), 1.0)
    out = SirenLayer(np.array([[amplitude]]), np.zeros(1), 1.0, is_linear=True)
    return SirenNetwork((first, out))


def constant_net(value):
    first = SirenLayer(np.zeros((4, 4)), np.zeros(4), 1.0)
    out = SirenLayer(np.zeros((1, 4)), np.array([value]), 1.0, is_linear=True)
    return SirenNetwork((first, out))


def small_setup(n=64, fs=16000.0):
    grid = SensorGrid.cubic(3, 0.1)
    scaling = normalize_coords(grid, n / fs)
    times = np.arange(n) / fs
    return grid, scaling, times


def test_constant_pressure_zero_velocity():
    grid, scaling, times = small_setup()
    vel = particle_velocity(constant_net(2.5), scaling, grid, times)
    assert np.max(np.abs(vel.values)) == 0.0


def test_plane_wave_impedance_relation():
    # traveling wave p = f(x - ct): u_x = p / (rho c), within trapezoid error
    grid, scaling, times = small_setup(n=160)
    fs = 16000.0
    f_hz = 800.0  # bandlimited well under 2 kHz keeps quadrature error small
    kappa_u = 2 * np.pi * f_hz / (scaling.c_scaled * scaling.time_scale)
    net = plane_wave_net(kappa_u, scaling.c_scaled)
    rho = 1.2
    vel = particle_velocity(net, scaling, grid, times, rho=rho)
    n0 = grid.count // 2
    u = np.zeros((times.size, 4))
    u[:, 0] = (times - scaling.t_mid) * scaling.time_scale
    u[:, 1:] = (grid.positions[n0] - scaling.center) * scaling.space_scale
    p = forward(net, u)
    expected = p / (rho * scaling.c_phys)
    # skip the settling of the integration constant over the first cycle
    skip = int(fs / f_hz) + 1
    got = vel.values[skip:, n0, 0]
    want = expected[skip:] - np.mean(expected[skip:] - got)
    err = np.max(np.abs(got - want)) / np.max(np.abs(expected))
    assert err < 0.02
    assert np.max(np.abs(vel.values[:, n0, 1:])) < 1e-12


def test_velocity_scales_inversely_with_density():
    grid, scaling, times = small_setup()
    net = plane_wave_net(3.0, scaling.c_scaled)
    v1 = particle_velocity(net, scaling, grid, times, rho=1.2)
    v2 = particle_velocity(net, scaling, grid, times, rho=2.4)
    assert np.allclose(v1.values, 2 * v2.values, rtol=1e-12, atol=1e-15)


def test_velocity_linear_in_network_amplitude():
    grid, scaling, times = small_setup()
    v1 = particle_velocity(plane_wave_net(3.0, scaling.c_scaled, 1.0),
                           scaling, grid, times)
    v3 = particle_velocity(plane_wave_net(3.0, scaling.c_scaled, 3.0),
                           scaling, grid, times)
    assert np.allclose(v3.values, 3 * v1.values, rtol=1e-10, atol=1e-14)


def test_velocity_integration_telescopes():
    grid, scaling, times = small_setup(n=96)
    net = plane_wave_net(5.0, scaling.c_scaled)
    full = particle_velocity(net, scaling, grid, times)
    # integrate the two halves separately; the shared endpoint chains them
    first = particle_velocity(net, scaling, grid, times[:49])
    second = particle_velocity(net, scaling, grid, times[48:])
    chained = second.values + first.values[-1][None]
    assert np.allclose(full.values[48:], chained, rtol=1e-12, atol=1e-15)


def test_velocity_requires_uniform_times():
    grid, scaling, _ = small_setup()
    bad = np.array([0.0, 1e-4, 3e-4])
    with pytest.raises(ValueError, match="uniform"):
        particle_velocity(constant_net(0.0), scaling, grid, bad)


def test_intensity_zero_velocity():
    grid, scaling, times = small_setup()
    p = PressureField(np.ones((times.size, grid.count)), 16000.0, grid)
    vel = VelocityField(np.zeros((times.size, grid.count, 3)), grid,
                        16000.0, 0.0, 1.2)
    out = instantaneous_intensity(p, vel)
    assert np.all(out.values == 0.0)


def test_intensity_sign_matches_product():
    rng = np.random.default_rng(0)
    grid, scaling, times = small_setup(n=16)
    pdata = rng.standard_normal((16, grid.count))
    vdata = rng.standard_normal((16, grid.count, 3))
    p = PressureField(pdata, 16000.0, grid)
    vel = VelocityField(vdata, grid, 16000.0, 0.0, 1.2)
    out = instantaneous_intensity(p, vel)
    assert np.array_equal(out.values, vdata * pdata[:, :, None])
    same_sign = (vdata[..., 0] * pdata > 0)
    assert np.all(out.values[..., 0][same_sign] > 0)


def test_intensity_shape_mismatch():
    grid, scaling, times = small_setup(n=16)
    p = PressureField(np.ones((16, grid.count)), 16000.0, grid)
    vel = VelocityField(np.zeros((8, grid.count, 3)), grid, 16000.0, 0.0, 1.2)
    with pytest.raises(ValueError):
        instantaneous_intensity(p, vel)


def test_intensity_csv_layout(tmp_path):
    grid, scaling, times = small_setup(n=8)
    vals = np.ones((8, grid.count, 3))
    field = IntensityField(vals, grid, 16000.0, 0.0)
    path = tmp_path / "intensity.csv"
    write_intensity_csv(field, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x,y,z,ix,iy,iz"
    assert len(lines) == 1 + grid.count
    mean = time_averaged_intensity(field)
    assert np.allclose(mean, 1.0)
