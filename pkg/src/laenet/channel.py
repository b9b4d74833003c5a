"""Air-to-ground channel: geometry, LoS probability, LoS-averaged gain, fading, SNR and rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scenario import ChannelConfig, RngStream


class ChannelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class LinkGeometry:
    dist_m: float
    elev_deg: float
    horiz_dist_m: float


@dataclass(frozen=True)
class ChannelSample:
    mean_gain: float
    fading_power: float

    @property
    def gain(self) -> float:
        return self.mean_gain * self.fading_power


def geometry(uav_pos, user_pos) -> LinkGeometry:
    dx = float(uav_pos[0]) - float(user_pos[0])
    dy = float(uav_pos[1]) - float(user_pos[1])
    dz = float(uav_pos[2]) - float(user_pos[2])
    horiz = math.sqrt(dx * dx + dy * dy)
    dist = math.sqrt(horiz * horiz + dz * dz)
    # atan2 covers the overhead case (horiz == 0 -> 90 deg) without a branch.
    elev = math.degrees(math.atan2(dz, horiz))
    return LinkGeometry(dist, elev, horiz)


def los_probability(elev_deg: float, a: float, b: float) -> float:
    return 1.0 / (1.0 + a * math.exp(-b * (elev_deg - a)))


def mean_gain(geom: LinkGeometry, chan: ChannelConfig) -> float:
    d = geom.dist_m
    if d <= 0.0:
        raise ChannelDomainError("co-located link: distance is zero")
    p = los_probability(geom.elev_deg, chan.a_los, chan.b_los)
    beta0 = chan.beta0_lin
    return p * beta0 / d ** chan.gamma_los + (1.0 - p) * beta0 / d ** chan.gamma_nlos


def sample_fading(mode: str, rng: RngStream | None = None, size=None):
    """|h_hat|^2: exactly 1 for unit-modulus, Exp(1) for Rayleigh."""
    if mode == "unit-modulus":
        return 1.0 if size is None else np.ones(size)
    if mode == "rayleigh":
        if rng is None:
            raise ValueError("rayleigh fading needs an RngStream")
        return float(rng.exponential()) if size is None else rng.exponential(size)
    raise ValueError(f"unknown fading mode {mode!r}")


def sample_channel(uav_pos, user_pos, chan: ChannelConfig, rng: RngStream | None = None) -> ChannelSample:
    g = mean_gain(geometry(uav_pos, user_pos), chan)
    return ChannelSample(g, sample_fading(chan.fading_mode, rng))


def snr(p_w: float, gain: float, noise_w: float) -> float:
    return p_w * gain / noise_w


def rate_bps(bandwidth_hz: float, snr_value: float) -> float:
    return bandwidth_hz * math.log2(1.0 + snr_value)


def link_state(uav_pos, user_positions: np.ndarray, chan: ChannelConfig, power, bandwidth,
               fading=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized gains and rates for all users at one pose (kernel-backed)."""
    n = len(user_positions)
    if fading is None:
        fading = np.ones(n)
    return kernels.link_state(
        np.asarray(uav_pos, dtype=float), np.asarray(user_positions, dtype=float),
        chan.a_los, chan.b_los, chan.gamma_los, chan.gamma_nlos, chan.beta0_lin,
        np.asarray(fading, dtype=float), np.asarray(power, dtype=float),
        np.asarray(bandwidth, dtype=float), chan.noise_w)
