"""V2X link model: path loss, Shannon-rate transmission time, latency budget."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RadioLink",
    "LatencyBreakdown",
    "LinkDefaults",
    "path_loss_db",
    "snr_db",
    "achievable_rate_bps",
    "transmission_time_s",
    "payload_bits",
    "total_latency_s",
    "draw_latency",
]

BITS_PER_VALUE = 32


@dataclass(frozen=True)
class RadioLink:
    bandwidth_hz: float
    tx_power_dbm: float
    noise_power_dbm: float
    distance_m: float
    carrier_ghz: float = 5.9

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_hz}")
        if not self.distance_m > 0:
            raise ValueError(f"distance must be positive, got {self.distance_m}")
        if not self.carrier_ghz > 0:
            raise ValueError(f"carrier frequency must be positive, got {self.carrier_ghz}")


@dataclass(frozen=True)
class LatencyBreakdown:
    compute_s: float
    transmit_s: float
    sensor_offset_s: float
    total_s: float

    @classmethod
    def forced(cls, total_s: float) -> "LatencyBreakdown":
        """A breakdown that carries an externally imposed delay as sensor offset."""
        return total_latency_s(0.0, 0.0, total_s)


@dataclass(frozen=True)
class LinkDefaults:
    """Per-link draw ranges for carrier, power, noise, compute and sensor offset."""

    carrier_ghz: float = 5.9
    bandwidth_hz: float = 10e6
    tx_power_dbm: float = 23.0
    noise_dbm: tuple[float, float] = (-110.0, -95.0)
    compute_s: tuple[float, float] = (0.020, 0.040)
    sensor_offset_s: tuple[float, float] = (0.0, 0.100)


def path_loss_db(distance_m: float, carrier_ghz: float) -> float:
    if not distance_m > 0 or not carrier_ghz > 0:
        raise ValueError(f"path loss needs positive distance and frequency, got {distance_m}, {carrier_ghz}")
    return 28.0 + 22.0 * math.log10(distance_m) + 20.0 * math.log10(carrier_ghz)


def snr_db(link: RadioLink) -> float:
    return link.tx_power_dbm - path_loss_db(link.distance_m, link.carrier_ghz) - link.noise_power_dbm


def achievable_rate_bps(link: RadioLink) -> float:
    return link.bandwidth_hz * math.log2(1.0 + 10.0 ** (0.1 * snr_db(link)))


def transmission_time_s(payload: float, link: RadioLink) -> float:
    if payload < 0:
        raise ValueError(f"payload must be non-negative, got {payload}")
    if payload == 0:
        return 0.0
    return payload / achievable_rate_bps(link)


def payload_bits(grid_shape: tuple[int, int, int]) -> int:
    c, h, w = grid_shape
    if min(c, h, w) < 1:
        raise ValueError(f"grid dimensions must be positive, got {grid_shape}")
    return c * h * w * BITS_PER_VALUE


def total_latency_s(compute_s: float, transmit_s: float, sensor_offset_s: float) -> LatencyBreakdown:
    for name, v in (("compute", compute_s), ("transmit", transmit_s), ("sensor offset", sensor_offset_s)):
        if v < 0:
            raise ValueError(f"{name} latency must be non-negative, got {v}")
    return LatencyBreakdown(compute_s, transmit_s, sensor_offset_s, compute_s + transmit_s + sensor_offset_s)


def draw_latency(
    rng: np.random.Generator,
    distance_m: float,
    grid_shape: tuple[int, int, int],
    defaults: LinkDefaults = LinkDefaults(),
) -> tuple[LatencyBreakdown, RadioLink]:
    """Sample one link's noise, compute time and sensor offset; derive its latency."""
    noise = float(rng.uniform(*defaults.noise_dbm))
    compute = float(rng.uniform(*defaults.compute_s))
    offset = float(rng.uniform(*defaults.sensor_offset_s))
    link = RadioLink(
        bandwidth_hz=defaults.bandwidth_hz,
        tx_power_dbm=defaults.tx_power_dbm,
        noise_power_dbm=noise,
        distance_m=max(distance_m, 1.0),
        carrier_ghz=defaults.carrier_ghz,
    )
    transmit = transmission_time_s(payload_bits(grid_shape), link)
    return total_latency_s(compute, transmit, offset), link
