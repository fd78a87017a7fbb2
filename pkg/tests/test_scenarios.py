import numpy as np
import pytest
from scipy import ndimage, stats

from otfs_chest.channel import pilot_columns
from otfs_chest.grid import to_matrix
from otfs_chest.scenarios import (
    DEMOS,
    AircraftScenarioConfig,
    aircraft_channel,
    aircraft_frame,
    single_path_demo,
    two_path_demo,
)


def test_draw_is_normalised_and_within_bounds():
    cfg = AircraftScenarioConfig()
    p = aircraft_frame(config=cfg)
    rng = np.random.default_rng(0)
    for _ in range(50):
        ch = aircraft_channel(cfg, rng)
        assert len(ch) == 5
        assert abs(np.sum(np.abs(ch.h) ** 2) - 1) <= 1e-12
        ch.check_bounds(p)
        assert ch.tau[0] == 0 and ch.nu[0] == cfg.nu_max
        assert np.all(ch.tau[1:] > 0)


def test_los_power_from_rice_factor():
    ch = aircraft_channel(AircraftScenarioConfig(K_dB=15.0), 1)
    # 10^1.5 / (1 + 10^1.5)
    assert abs(ch.h[0]) ** 2 == pytest.approx(0.969346569968284491, abs=1e-14)


def test_single_path_draw_is_los_only():
    ch = aircraft_channel(AircraftScenarioConfig(P=1), 2)
    assert abs(ch.h[0]) == pytest.approx(1.0)


def test_draws_are_reproducible():
    a = aircraft_channel(AircraftScenarioConfig(), np.random.default_rng(9))
    b = aircraft_channel(AircraftScenarioConfig(), np.random.default_rng(9))
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_array_equal(a.tau, b.tau)


def test_los_dominates_on_average():
    rng = np.random.default_rng(3)
    powers = np.array([np.abs(aircraft_channel(AircraftScenarioConfig(), rng).h) ** 2 for _ in range(1000)])
    mean = powers.mean(axis=0)
    assert np.all(mean[0] > mean[1:])


def test_expectation_normalisation_mode():
    cfg = AircraftScenarioConfig(normalization="expectation")
    rng = np.random.default_rng(4)
    totals = [np.sum(np.abs(aircraft_channel(cfg, rng).h) ** 2) for _ in range(4000)]
    assert np.mean(totals) == pytest.approx(1.0, abs=0.005)
    assert np.std(totals) > 0


def test_exponential_power_delay_profile():
    # log(|h_i|^2 / |h_j|^2) + (tau_i - tau_j) / slope is the log-ratio of two
    # unit exponentials, which is standard logistic whatever the normalisation
    cfg = AircraftScenarioConfig(P=3)
    rng = np.random.default_rng(5)
    log_ratio = np.empty(100_000)
    dtau = np.empty(100_000)
    for n in range(len(log_ratio)):
        ch = aircraft_channel(cfg, rng)
        p = np.abs(ch.h[1:]) ** 2
        log_ratio[n] = np.log(p[0] / p[1])
        dtau[n] = ch.tau[1] - ch.tau[2]
    assert stats.kstest(log_ratio + dtau / cfg.tau_slope, stats.logistic.cdf).pvalue > 0.01
    # a profile twice as long is rejected
    assert stats.kstest(log_ratio + dtau / (2 * cfg.tau_slope), stats.logistic.cdf).pvalue < 0.01


def test_doppler_follows_cosine_of_uniform_angle():
    cfg = AircraftScenarioConfig(P=2)
    rng = np.random.default_rng(6)
    nu = np.array([aircraft_channel(cfg, rng).nu[1] for _ in range(20_000)]) / cfg.nu_max
    # arcsine law on [-1, 1]
    assert stats.kstest(nu, stats.arcsine(loc=-1, scale=2).cdf).pvalue > 0.01


def test_config_validation():
    with pytest.raises(ValueError):
        AircraftScenarioConfig(P=0)
    with pytest.raises(ValueError):
        AircraftScenarioConfig(tau_slope=0)
    with pytest.raises(ValueError):
        AircraftScenarioConfig(normalization="sometimes")


def half_max_peaks(params, channel):
    x = channel.h @ pilot_columns(channel.tau, channel.nu, params)
    A = np.abs(to_matrix(x, params.M, params.N))
    local = A == ndimage.maximum_filter(A, size=3, mode="wrap")
    return int(np.count_nonzero(local & (A >= 0.5 * A.max())))


def test_two_path_demo_peak_contrast():
    coarse_p, coarse_ch = two_path_demo("coarse")
    fine_p, fine_ch = two_path_demo("fine")
    np.testing.assert_array_equal(coarse_ch.tau, fine_ch.tau)
    np.testing.assert_array_equal(coarse_ch.nu, fine_ch.nu)
    assert abs(coarse_ch.tau[1] - coarse_ch.tau[0]) < coarse_p.delay_resolution
    assert abs(coarse_ch.nu[1] - coarse_ch.nu[0]) < coarse_p.doppler_resolution
    assert half_max_peaks(coarse_p, coarse_ch) == 1
    assert half_max_peaks(fine_p, fine_ch) == 2
    with pytest.raises(ValueError):
        two_path_demo("medium")


def test_single_path_demo_peak_location():
    p, ch = single_path_demo()
    x = ch.h @ pilot_columns(ch.tau, ch.nu, p)
    l, k = np.unravel_index(np.argmax(np.abs(to_matrix(x, p.M, p.N))), (p.M, p.N))
    assert l == int(np.floor(p.l_p + ch.tau[0] * p.M * p.delta_f))
    assert k == int(np.floor(p.k_p + ch.nu[0] * p.N * p.T))


def test_demo_registry():
    assert sorted(DEMOS) == ["single-path", "two-path-coarse", "two-path-fine"]
