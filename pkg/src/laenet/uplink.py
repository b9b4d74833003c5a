"""Uplink transmission time: slot-varying rates and the quasi-static closed form."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import kernels
from .channel import rate_bps, snr
from .scenario import Scenario, UserTask
from .vlm_profile import payload_bits, proc_time_s


class InfiniteLatency(ArithmeticError):
    """The link rate is zero, so the upload never finishes."""


@dataclass(frozen=True)
class UploadResult:
    completion_slot: int | None  # 1-based, None if the horizon ran out
    uplink_time_s: float
    bits_remaining: float

    @property
    def complete(self) -> bool:
        return self.completion_slot is not None


def simulate_upload(payload_bits: float, rate_per_slot: Sequence[float], slot_len_s: float) -> UploadResult:
    if payload_bits < 0:
        raise ValueError("payload_bits must be >= 0")
    slot, t_up, left = kernels.upload(float(payload_bits), list(map(float, rate_per_slot)), float(slot_len_s))
    return UploadResult(slot if slot > 0 else None, t_up, left)


def static_uplink_time(payload: float, bandwidth_hz: float, p_w: float, gain: float, noise_w: float) -> float:
    if payload == 0:
        return 0.0
    r = rate_bps(bandwidth_hz, snr(p_w, gain, noise_w))
    if r <= 0.0:
        raise InfiniteLatency("zero uplink rate")
    return payload / r


def processing_floor(scenario: Scenario, res: int) -> float:
    """Power-independent latency part: inference time plus downlink time."""
    return proc_time_s(scenario.profile, res, scenario.expected_out_tokens) + scenario.t_down_s


def total_latency(scenario: Scenario, user: UserTask, res: int, p_w: float, gain: float) -> float:
    d = payload_bits(scenario.profile, res, user.n_queries)
    if math.isinf(p_w):
        return processing_floor(scenario, res)
    up = static_uplink_time(d, user.bandwidth_hz, p_w, gain, scenario.chan.noise_w)
    return up + proc_time_s(scenario.profile, res, scenario.expected_out_tokens) + scenario.t_down_s
