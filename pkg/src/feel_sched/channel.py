"""Device placement, path loss, block fading, per-round SNRs, and rates.

SNR snapshots are stated at the reference system bandwidth B. Two modes
control what happens when a device is later granted a different bandwidth:

* "fixed" (default): the SNR is treated as bandwidth-independent, so the
  achievable rate is simply B_k * log2(1 + snr).
* "bandwidth_scaled": noise power scales with the allocated bandwidth
  (N = N0 * B_k), so the effective SNR becomes snr * (B / B_k).

Snapshots are pure functions of (profiles, config, round_index): the fading
stream is re-rooted per round from the config seed, so any round can be
reproduced without replaying the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

__all__ = [
    "DeviceProfile",
    "ChannelSnapshot",
    "ChannelConfig",
    "path_loss_db",
    "place_devices",
    "draw_snapshot",
    "uplink_rate",
    "downlink_rate",
    "effective_snr",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class DeviceProfile:
    """Static per-device facts used by the simulator."""

    device_id: int
    n_k: int                 # local sample count
    f_k: float               # compute speed, FLOP/s
    distance_km: float
    tx_power_dbm: float

    def __post_init__(self):
        if self.n_k < 1:
            raise ValueError("device sample count must be >= 1")
        if self.distance_km <= 0:
            raise ValueError("device distance must be positive")


@dataclass
class ChannelSnapshot:
    """Linear SNRs for one communication round: per-device uplink plus the
    fleet-minimum downlink."""

    uplink_snr: np.ndarray
    downlink_snr: float
    round_index: int

    def __post_init__(self):
        self.uplink_snr = np.asarray(self.uplink_snr, dtype=np.float64)
        if np.any(~np.isfinite(self.uplink_snr)) or np.any(self.uplink_snr <= 0):
            raise ValueError("uplink SNRs must be finite and positive")
        if not (math.isfinite(self.downlink_snr) and self.downlink_snr > 0):
            raise ValueError("downlink SNR must be finite and positive")


@dataclass
class ChannelConfig:
    bandwidth_hz: float = 1e6
    noise_dbm_per_hz: float = -174.0
    server_tx_power_dbm: float = 46.0
    # "none": static; "rayleigh_block": per-round unit-mean exponential power
    # gains on both links; "rayleigh_uplink": faded uplink, static downlink
    # (downlink treated as a fixed system parameter).
    fading: str = "rayleigh_block"
    pathloss_intercept_db: float = 128.1
    pathloss_slope_db_per_decade: float = 37.6
    cell_radius_km: float = 0.5
    min_distance_km: float = 0.01
    snr_mode: str = "fixed"                 # "fixed" | "bandwidth_scaled"
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("system bandwidth must be positive")
        if self.fading not in ("none", "rayleigh_block", "rayleigh_uplink"):
            raise ValueError(f"unknown fading model: {self.fading!r}")
        if self.snr_mode not in ("fixed", "bandwidth_scaled"):
            raise ValueError(f"unknown snr mode: {self.snr_mode!r}")

    @property
    def noise_power_dbm(self) -> float:
        """Noise power over the full reference bandwidth."""
        return self.noise_dbm_per_hz + 10.0 * math.log10(self.bandwidth_hz)


# ---------------------------------------------------------------------------
# Placement and path loss
# ---------------------------------------------------------------------------

def place_devices(count: int, config: ChannelConfig, seed: int) -> np.ndarray:
    """Distances (km) of `count` devices placed uniformly over the cell disk,
    floored at the configured minimum distance."""
    if count < 1:
        raise ValueError("need at least one device")
    rng = np.random.default_rng(seed)
    radii = config.cell_radius_km * np.sqrt(rng.random(count))
    return np.maximum(radii, config.min_distance_km)


def path_loss_db(
    distance_km: float,
    *,
    intercept_db: float = 128.1,
    slope_db_per_decade: float = 37.6,
) -> float:
    """Log-distance path loss in dB."""
    if distance_km <= 0:
        raise ValueError("distance must be positive")
    return intercept_db + slope_db_per_decade * math.log10(distance_km)


def _fading_gains_db(config: ChannelConfig, count: int, round_index: int, stream: int) -> np.ndarray:
    static = config.fading == "none" or (config.fading == "rayleigh_uplink" and stream == 1)
    if static:
        return np.zeros(count)
    # Independent unit-mean exponential power gain per device per round.
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, round_index, stream]))
    gains = rng.exponential(1.0, size=count)
    gains = np.maximum(gains, 1e-12)  # keep SNRs strictly positive
    return 10.0 * np.log10(gains)


def draw_snapshot(
    profiles: Sequence[DeviceProfile],
    config: ChannelConfig,
    round_index: int,
) -> ChannelSnapshot:
    """SNRs for one round at the reference bandwidth.

    The downlink SNR is the minimum over the devices' own downlink SNRs,
    computed with the server transmit power and independent fading draws.
    """
    if not profiles:
        raise ValueError("need at least one device profile")
    count = len(profiles)
    losses = np.array([
        path_loss_db(
            p.distance_km,
            intercept_db=config.pathloss_intercept_db,
            slope_db_per_decade=config.pathloss_slope_db_per_decade,
        )
        for p in profiles
    ])
    tx = np.array([p.tx_power_dbm for p in profiles])
    noise = config.noise_power_dbm

    up_db = tx - losses + _fading_gains_db(config, count, round_index, stream=0) - noise
    down_db = (
        config.server_tx_power_dbm
        - losses
        + _fading_gains_db(config, count, round_index, stream=1)
        - noise
    )
    return ChannelSnapshot(
        uplink_snr=10.0 ** (up_db / 10.0),
        downlink_snr=float(np.min(10.0 ** (down_db / 10.0))),
        round_index=round_index,
    )


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

def uplink_rate(bandwidth_hz: float, snr_linear: float) -> float:
    """Shannon rate in bit/s; zero bandwidth gives zero rate."""
    if bandwidth_hz < 0:
        raise ValueError("bandwidth must be nonnegative")
    if snr_linear <= 0:
        raise ValueError("SNR must be positive")
    if bandwidth_hz == 0:
        return 0.0
    return bandwidth_hz * math.log2(1.0 + snr_linear)


def downlink_rate(config: ChannelConfig, snapshot: ChannelSnapshot) -> float:
    """Broadcast rate over the full band at the fleet-minimum SNR."""
    return config.bandwidth_hz * math.log2(1.0 + snapshot.downlink_snr)


def effective_snr(
    snr_at_reference: float,
    reference_bandwidth_hz: float,
    allocated_bandwidth_hz: float,
    mode: str,
) -> float:
    """SNR seen over an allocated sub-band under the configured noise model."""
    if mode == "fixed":
        return snr_at_reference
    if mode == "bandwidth_scaled":
        if allocated_bandwidth_hz <= 0:
            raise ValueError("allocated bandwidth must be positive")
        return snr_at_reference * (reference_bandwidth_hz / allocated_bandwidth_hz)
    raise ValueError(f"unknown snr mode: {mode!r}")
