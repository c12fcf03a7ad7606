import math

import numpy as np
import pytest

from feel_sched.channel import (
    ChannelConfig,
    DeviceProfile,
    downlink_rate,
    draw_snapshot,
    effective_snr,
    path_loss_db,
    place_devices,
    uplink_rate,
)


def make_profiles(distances, tx_dbm=24.0):
    return [
        DeviceProfile(device_id=i + 1, n_k=10, f_k=1e9, distance_km=d, tx_power_dbm=tx_dbm)
        for i, d in enumerate(distances)
    ]


STATIC = ChannelConfig(bandwidth_hz=1e6, fading="none", seed=0)


# ---------------------------------------------------------------------------
# path loss
# ---------------------------------------------------------------------------

def test_path_loss_reference_distance():
    assert path_loss_db(1.0) == pytest.approx(128.1)


def test_path_loss_half_km():
    # 128.1 + 37.6 * log10(0.5) = 128.1 - 11.32
    assert path_loss_db(0.5) == pytest.approx(116.78, abs=0.01)


def test_path_loss_hundred_meters():
    assert path_loss_db(0.1) == pytest.approx(90.5, abs=0.01)


def test_path_loss_rejects_nonpositive():
    with pytest.raises(ValueError):
        path_loss_db(0.0)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def test_snapshot_reference_snr():
    # 24 dBm - 116.78 dB + 114 dBm noise floor = 21.22 dB -> ~132.4 linear
    snap = draw_snapshot(make_profiles([0.5]), STATIC, round_index=1)
    assert snap.uplink_snr[0] == pytest.approx(132.4, rel=0.01)


def test_snapshot_symmetric_devices():
    snap = draw_snapshot(make_profiles([0.3, 0.3]), STATIC, round_index=2)
    assert snap.uplink_snr[0] == snap.uplink_snr[1]


def test_downlink_is_fleet_minimum():
    profiles = make_profiles([0.1, 0.5, 0.3])
    snap = draw_snapshot(profiles, STATIC, round_index=0)
    per_device = [
        10 ** ((STATIC.server_tx_power_dbm - path_loss_db(p.distance_km) - STATIC.noise_power_dbm) / 10)
        for p in profiles
    ]
    assert snap.downlink_snr == pytest.approx(min(per_device), rel=1e-12)
    assert snap.downlink_snr <= min(per_device) * (1 + 1e-12)


def test_static_channel_is_round_invariant():
    profiles = make_profiles([0.2, 0.4])
    a = draw_snapshot(profiles, STATIC, round_index=1)
    b = draw_snapshot(profiles, STATIC, round_index=77)
    np.testing.assert_array_equal(a.uplink_snr, b.uplink_snr)
    assert a.downlink_snr == b.downlink_snr


def test_fading_snapshots_reproducible_and_round_varying():
    cfg = ChannelConfig(bandwidth_hz=1e6, fading="rayleigh_block", seed=5)
    profiles = make_profiles([0.2, 0.4])
    a1 = draw_snapshot(profiles, cfg, round_index=3)
    a2 = draw_snapshot(profiles, cfg, round_index=3)
    b = draw_snapshot(profiles, cfg, round_index=4)
    np.testing.assert_array_equal(a1.uplink_snr, a2.uplink_snr)
    assert not np.array_equal(a1.uplink_snr, b.uplink_snr)


def test_rayleigh_power_gain_unit_mean():
    cfg = ChannelConfig(bandwidth_hz=1e6, fading="rayleigh_block", seed=9)
    profiles = make_profiles([0.5] * 100)
    base = draw_snapshot(profiles, ChannelConfig(bandwidth_hz=1e6, fading="none"), 0)
    gains = []
    for t in range(1000):  # 100 devices x 1000 rounds = 1e5 draws
        snap = draw_snapshot(profiles, cfg, t)
        gains.append(snap.uplink_snr / base.uplink_snr)
    mean_gain = float(np.mean(gains))
    assert mean_gain == pytest.approx(1.0, rel=0.01)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def test_uplink_rate_known_points():
    assert uplink_rate(1e6, 1.0) == pytest.approx(1e6)
    assert uplink_rate(1e6, 3.0) == pytest.approx(2e6)
    assert uplink_rate(1e6, 132.4) == pytest.approx(7.06e6, rel=0.005)


def test_uplink_rate_zero_bandwidth():
    assert uplink_rate(0.0, 5.0) == 0.0


def test_uplink_rate_rejects_negative():
    with pytest.raises(ValueError):
        uplink_rate(-1.0, 1.0)
    with pytest.raises(ValueError):
        uplink_rate(1e6, 0.0)


def test_uplink_rate_monotone_in_snr(rng):
    snrs = np.sort(rng.uniform(0.1, 100, size=20))
    rates = [uplink_rate(1e6, s) for s in snrs]
    assert all(b > a for a, b in zip(rates, rates[1:]))


def test_downlink_rate_known_points():
    profiles = make_profiles([0.5])
    snap = draw_snapshot(profiles, STATIC, 0)
    snap.downlink_snr = 1.0
    assert downlink_rate(STATIC, snap) == pytest.approx(1e6)
    snap.downlink_snr = 15.0
    cfg20 = ChannelConfig(bandwidth_hz=20e6, fading="none")
    assert downlink_rate(cfg20, snap) == pytest.approx(80e6)


# ---------------------------------------------------------------------------
# placement and snr modes
# ---------------------------------------------------------------------------

def test_placement_respects_bounds():
    cfg = ChannelConfig(cell_radius_km=0.5, min_distance_km=0.01)
    distances = place_devices(500, cfg, seed=3)
    assert np.all(distances >= 0.01)
    assert np.all(distances <= 0.5)
    assert place_devices(500, cfg, seed=3).tobytes() == distances.tobytes()


def test_effective_snr_modes():
    assert effective_snr(100.0, 1e6, 0.25e6, "fixed") == 100.0
    assert effective_snr(100.0, 1e6, 0.25e6, "bandwidth_scaled") == pytest.approx(400.0)
    with pytest.raises(ValueError):
        effective_snr(100.0, 1e6, 1e6, "bogus")
