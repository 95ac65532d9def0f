import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smforge.core import Grid
from smforge.errors import ConfigError, InvalidDataError, UndefinedMetricError
from smforge.sim import (
    Phantom, SimConfig, add_noise, drive_amplitudes, ffp_trajectory, langevin, mixing_frequencies,
    sample_times, simulate_sm, simulate_voltage, voltage_signal,
)

SMALL = SimConfig(fov=Grid(8, 8, 32.0, 32.0), samples_per_period=40, rows_per_channel=12)


@pytest.fixture(scope="module")
def small_sm():
    return simulate_sm(SMALL)


def test_drive_amplitude_examples():
    assert drive_amplitudes(SimConfig())[0] == pytest.approx(32.0)
    assert drive_amplitudes(SimConfig(gradient_x=4.0))[0] == pytest.approx(64.0)
    tiny = SimConfig(fov=Grid(4, 4, 1e-9, 1e-9))
    assert drive_amplitudes(tiny)[0] < 1e-8
    assert drive_amplitudes(SimConfig(amp_drive=12.5))[0] == 12.5


def test_trajectory_origin_and_quarter_period():
    cfg = SimConfig()
    x, y = ffp_trajectory(cfg, 0.0)
    assert x == 0 and y == 0
    x, _ = ffp_trajectory(cfg, 0.25 / cfg.f_drive)
    assert x == pytest.approx(cfg.fov.fov_x / 2, rel=1e-12)
    with pytest.raises(ValueError):
        ffp_trajectory(cfg, -1.0)


def test_repetition_period_is_4_ms():
    cfg = SimConfig()
    assert cfg.repetition_time == pytest.approx(4e-3, rel=1e-15)
    x0, y0 = ffp_trajectory(cfg, np.linspace(0, 1e-3, 17))
    x1, y1 = ffp_trajectory(cfg, np.linspace(0, 1e-3, 17) + 4e-3)
    np.testing.assert_allclose(x1, x0, atol=1e-9)
    np.testing.assert_allclose(y1, y0, atol=1e-9)


def test_langevin_examples():
    assert langevin(0.0) == 0.0
    assert abs(langevin(0.01) - 0.0033333) < 1e-6
    assert abs(langevin(1000.0) - 0.999) < 1e-3


@given(st.floats(-200, 200, allow_nan=False))
def test_langevin_odd_and_bounded(xi):
    assert langevin(-xi) == pytest.approx(-langevin(xi), abs=1e-15)
    assert abs(langevin(xi)) < 1


def test_langevin_continuous_across_series_switch():
    xs = np.array([9.999e-4, 1.0001e-3])
    direct = 1 / np.tanh(xs) - 1 / xs  # both sides, evaluated directly
    np.testing.assert_allclose(langevin(xs), direct, rtol=1e-6)


def test_mixing_lines_are_lattice_points():
    cfg = SimConfig()
    for m, n, f in mixing_frequencies(cfg, 50):
        assert f == m * cfg.f_drive + n * cfg.f_focus and f > 0
    freqs = [f for _, _, f in mixing_frequencies(cfg, 50)]
    assert len(set(freqs)) == 50


def test_signal_repeats_after_one_period():
    cfg = SMALL
    t = sample_times(cfg, 2)
    v = voltage_signal(cfg, [3.0, -7.5], [1.0, 10.0], t)
    n = t.size // 2
    assert np.abs(v[..., :n] - v[..., n:]).max() <= 1e-9 * np.abs(v).max()


def test_spectral_support_on_mixing_grid():
    # over two repetition periods every mixing line falls on an even bin
    cfg = SMALL
    t = sample_times(cfg, 2)
    v = voltage_signal(cfg, [3.0, -7.5, 0.5], [1.0, 10.0, -12.0], t)
    spec = np.abs(np.fft.rfft(v, axis=-1))
    assert spec[..., 1::2].max() <= 1e-9 * spec.max()


def test_rows_follow_channels_and_frequencies(small_sm):
    assert small_sm.k == 2 * SMALL.rows_per_channel
    assert [f.channel for f in small_sm.freqs] == [0] * 12 + [1] * 12
    assert all(f.order is not None for f in small_sm.freqs)


def test_magnitude_mirror_symmetry(small_sm):
    imgs = np.abs(small_sm.images())
    peak = imgs.max(axis=(1, 2), keepdims=True)
    assert np.abs(imgs - imgs[:, :, ::-1]).max(axis=(1, 2)).max() <= 1e-9 * peak.max()


def test_thread_count_does_not_change_output(monkeypatch, small_sm):
    monkeypatch.setenv("SMFORGE_THREADS", "3")
    np.testing.assert_array_equal(simulate_sm(SMALL).data, small_sm.data)


def test_guards():
    with pytest.raises(ConfigError):
        SimConfig(particle_diameter=0.0)
    with pytest.raises(ConfigError):
        SimConfig(f_focus=25_000.0)
    with pytest.raises(ConfigError):
        simulate_sm(dataclasses.replace(SMALL, samples_per_period=2))


def test_voltage_linearity_and_columns(small_sm, rng):
    g = small_sm.grid
    c1, c2 = rng.uniform(0, 1, g.shape), rng.uniform(0, 1, g.shape)
    u1 = simulate_voltage(small_sm, Phantom(g, c1)).coefficients
    u2 = simulate_voltage(small_sm, Phantom(g, c2)).coefficients
    u12 = simulate_voltage(small_sm, Phantom(g, 2 * c1 + 0.5 * c2)).coefficients
    np.testing.assert_allclose(u12, 2 * u1 + 0.5 * u2, rtol=1e-10, atol=1e-10 * np.abs(u12).max())
    assert not simulate_voltage(small_sm, Phantom(g, np.zeros(g.shape))).coefficients.any()
    one = np.zeros(g.shape)
    one[2, 5] = 1
    np.testing.assert_allclose(simulate_voltage(small_sm, Phantom(g, one)).coefficients,
                               small_sm.data[:, 2 * g.nx + 5])
    two = one.copy()
    two[6, 1] = 1
    np.testing.assert_allclose(simulate_voltage(small_sm, Phantom(g, two)).coefficients,
                               small_sm.data[:, 2 * g.nx + 5] + small_sm.data[:, 6 * g.nx + 1])
    u = simulate_voltage(small_sm, Phantom(g, 2 * c1)).coefficients
    np.testing.assert_allclose(u, 2 * u1, rtol=1e-12)


def test_phantom_must_be_nonnegative():
    with pytest.raises(InvalidDataError):
        Phantom(Grid(2, 2), -np.ones((2, 2)))


def _empirical_snr_db(clean, noisy):
    return 10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noisy - clean) ** 2))


def test_add_noise_hits_target_snr(rng):
    from smforge.core import FreqDescriptor, SystemMatrix

    sm = SystemMatrix(Grid(100, 100), [FreqDescriptor(0, 1.0, 0)], rng.standard_normal((1, 10_000)) + 0j)
    noisy = add_noise(sm, 20.0, seed=5)
    assert abs(_empirical_snr_db(sm.data, noisy.data) - 20.0) <= 0.5
    np.testing.assert_allclose(noisy.row_snr, [100.0])


def test_add_noise_vanishing_and_deterministic(small_sm):
    quiet = add_noise(small_sm, 300.0, seed=1)
    assert np.linalg.norm(quiet.data - small_sm.data) <= 1e-10 * np.linalg.norm(small_sm.data)
    a, b = add_noise(small_sm, 10.0, seed=7), add_noise(small_sm, 10.0, seed=7)
    np.testing.assert_array_equal(a.data, b.data)


def test_add_noise_guards(small_sm):
    with pytest.raises(InvalidDataError):
        add_noise(small_sm, float("inf"), seed=0)
    with pytest.raises(UndefinedMetricError):
        add_noise(small_sm.with_data(np.zeros_like(small_sm.data)), 20.0, seed=0)


def test_larger_particles_give_stronger_signal():
    weak = simulate_sm(dataclasses.replace(SMALL, particle_diameter=20.0))
    strong = simulate_sm(dataclasses.replace(SMALL, particle_diameter=30.0))
    assert np.linalg.norm(strong.data) > np.linalg.norm(weak.data)
