"""Per-round latency accounting and optimal multi-device bandwidth split.

One round costs: broadcast time + the fleet-wide maximum local compute time
+ the gradient upload time of the scheduled set. The server-side scheduling
and aggregation time is taken as zero, as is the importance-report time.

An unreachable link (zero bandwidth) yields `math.inf`, which orders above
every finite latency; callers must not fold it into running sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .channel import ChannelConfig, ChannelSnapshot, DeviceProfile, downlink_rate, effective_snr

__all__ = [
    "PayloadSpec",
    "LatencyBreakdown",
    "broadcast_latency",
    "compute_latency",
    "upload_latency",
    "full_band_upload_latencies",
    "allocate_bandwidth",
    "round_latency",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PayloadSpec:
    """Size of one model/gradient transfer and the per-sample compute cost."""

    parameter_count: int        # S: learnable parameters (gradients match 1:1)
    bits_per_element: int = 16  # q
    flops_per_sample: float = 200.0  # C: backprop cost of one sample

    def __post_init__(self):
        if self.parameter_count < 1 or self.bits_per_element < 1:
            raise ValueError("payload dimensions must be positive")
        if self.flops_per_sample <= 0:
            raise ValueError("per-sample compute cost must be positive")

    @property
    def payload_bits(self) -> float:
        return float(self.bits_per_element * self.parameter_count)


@dataclass
class LatencyBreakdown:
    """Everything that went into one round's clock increment."""

    broadcast_s: float
    compute_s: np.ndarray            # per device, whole fleet
    upload_s: Dict[int, float]       # per scheduled device id
    round_total_s: float             # broadcast + compute term + upload term

    @property
    def max_compute_s(self) -> float:
        return float(np.max(self.compute_s))


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------

def broadcast_latency(payload: PayloadSpec, config: ChannelConfig, snapshot: ChannelSnapshot) -> float:
    """Time to push the full model to the fleet over the whole band."""
    return payload.payload_bits / downlink_rate(config, snapshot)


def compute_latency(profile: DeviceProfile, payload: PayloadSpec) -> float:
    """Local gradient computation time: n_k * C / f_k."""
    if profile.f_k <= 0:
        raise ValueError("device compute speed must be positive")
    return profile.n_k * payload.flops_per_sample / profile.f_k


def upload_latency(payload: PayloadSpec, bandwidth_hz: float, snr_linear: float) -> float:
    """Time to upload one gradient; infinite when no bandwidth is granted."""
    if bandwidth_hz < 0:
        raise ValueError("bandwidth must be nonnegative")
    if snr_linear <= 0:
        raise ValueError("SNR must be positive")
    if bandwidth_hz == 0:
        return math.inf
    return payload.payload_bits / (bandwidth_hz * math.log2(1.0 + snr_linear))


def full_band_upload_latencies(
    payload: PayloadSpec,
    config: ChannelConfig,
    snapshot: ChannelSnapshot,
) -> np.ndarray:
    """Per-device upload time if each device alone got the whole band.

    This is the latency the scheduler weighs device candidates with.
    """
    rates = config.bandwidth_hz * np.log2(1.0 + snapshot.uplink_snr)
    return payload.payload_bits / rates


# ---------------------------------------------------------------------------
# Bandwidth allocation
# ---------------------------------------------------------------------------

def allocate_bandwidth(snr_linear: Sequence[float], total_bandwidth_hz: float) -> np.ndarray:
    """Split the band across a scheduled set so all uploads finish together.

    The minimax-optimal split is inversely proportional to each device's
    unit-bandwidth rate R_m = log2(1 + snr_m):

        B_m = (B / R_m) / sum_j (1 / R_j)

    which equalizes payload_bits / (B_m * R_m) across the set.
    """
    snrs = np.asarray(snr_linear, dtype=np.float64)
    if snrs.size == 0:
        raise ValueError("scheduled set must be nonempty")
    if np.any(snrs <= 0):
        raise ValueError("SNRs must be positive")
    if total_bandwidth_hz <= 0:
        raise ValueError("total bandwidth must be positive")
    inv_rates = 1.0 / np.log2(1.0 + snrs)
    return total_bandwidth_hz * inv_rates / inv_rates.sum()


# ---------------------------------------------------------------------------
# Round assembly
# ---------------------------------------------------------------------------

def round_latency(
    scheduled_ids: Sequence[int],
    payload: PayloadSpec,
    config: ChannelConfig,
    snapshot: ChannelSnapshot,
    profiles: Sequence[DeviceProfile],
    compute_max_over: str = "fleet",
    bandwidths_hz: Optional[Sequence[float]] = None,
) -> LatencyBreakdown:
    """Assemble the full latency of one round for a scheduled set.

    The compute term is the maximum over the whole fleet by default (the
    server waits for every importance report); "scheduled" restricts the
    max to the scheduled set. Single-device rounds get the entire band;
    multi-device rounds use `bandwidths_hz` or the equalizing split.
    """
    scheduled = list(scheduled_ids)
    if not scheduled:
        raise ValueError("scheduled set must be nonempty")
    if compute_max_over not in ("fleet", "scheduled"):
        raise ValueError(f"unknown compute_max_over mode: {compute_max_over!r}")

    compute = np.array([compute_latency(p, payload) for p in profiles])
    if compute_max_over == "fleet":
        compute_term = float(np.max(compute))
    else:
        compute_term = float(np.max(compute[[i - 1 for i in scheduled]]))

    snrs_ref = snapshot.uplink_snr[[i - 1 for i in scheduled]]
    if bandwidths_hz is None:
        if len(scheduled) == 1:
            bandwidths = np.array([config.bandwidth_hz])
        else:
            bandwidths = allocate_bandwidth(snrs_ref, config.bandwidth_hz)
    else:
        bandwidths = np.asarray(bandwidths_hz, dtype=np.float64)
        if bandwidths.shape != (len(scheduled),):
            raise ValueError("need one bandwidth per scheduled device")

    uploads = {}
    for device_id, band, snr_ref in zip(scheduled, bandwidths, snrs_ref):
        snr = effective_snr(snr_ref, config.bandwidth_hz, band, config.snr_mode) if band > 0 else snr_ref
        uploads[device_id] = upload_latency(payload, band, snr)

    upload_term = max(uploads.values())
    broadcast = broadcast_latency(payload, config, snapshot)
    return LatencyBreakdown(
        broadcast_s=broadcast,
        compute_s=compute,
        upload_s=uploads,
        round_total_s=broadcast + compute_term + upload_term,
    )
