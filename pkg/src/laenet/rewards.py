"""Per-slot reward functions and the context they are evaluated against.

Arithmetic helpers here (``vsum``, ``dist3``, ``argmax``) are shared with the
reward DSL evaluator so that a DSL program and its native counterpart round
identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

Vec3 = tuple[float, float, float]


def vsum(values: Sequence[float]) -> float:
    """Left-to-right float sum (no compensation), the one both evaluators use."""
    acc = 0.0
    for v in values:
        acc = acc + v
    return acc


def dist3(a: Sequence[float], b: Sequence[float]) -> float:
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    dz = a[2] - b[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def argmax(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the lowest index."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def argmin(values: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def var_q(values: Sequence[float], q: float) -> float:
    """Empirical q-quantile: inf{tau : (1/N) #{v <= tau} >= q}."""
    if len(values) == 0:
        raise ValueError("var_q of an empty list")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    s = sorted(values)
    n = len(s)
    for i, v in enumerate(s):
        if (i + 1) / n >= q:
            return v
    return s[-1]


@dataclass(frozen=True)
class RewardContext:
    backlog: tuple[float, ...]          # d_n[t], before this slot's transmission
    next_backlog: tuple[float, ...]     # d_n[t+1]
    transmitted: tuple[float, ...]      # min(d_n[t], alpha R_n[t])
    rate: tuple[float, ...]             # R_n[t], bit/s
    slot_len: float
    pose: Vec3                          # UAV at t
    next_pose: Vec3                     # UAV at t+1
    user_pos: tuple[Vec3, ...]
    init_backlog: tuple[float, ...]
    slot: int = 0

    @property
    def num_users(self) -> int:
        return len(self.backlog)

    @property
    def bottleneck(self) -> int:
        return argmax(self.backlog)

    def delta_dist(self, n: int) -> float:
        """Distance closed toward user n during the slot (positive = approaching)."""
        return dist3(self.pose, self.user_pos[n]) - dist3(self.next_pose, self.user_pos[n])

    def dist_to(self, n: int) -> float:
        return dist3(self.next_pose, self.user_pos[n])


@dataclass(frozen=True)
class RiskRewardParams:
    q: float = 0.9
    mu: float = 0.0
    gamma_d: float = 0.0
    backlog_scale: float = 1.0  # 1.0 = raw bits

    def __post_init__(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if self.mu < 0 or self.gamma_d < 0:
            raise ValueError("mu and gamma_d must be >= 0")
        if self.backlog_scale <= 0:
            raise ValueError("backlog_scale must be > 0")

    def as_dict(self) -> dict:
        return {"q": self.q, "mu": self.mu, "gamma_d": self.gamma_d, "backlog_scale": self.backlog_scale}


def default_risk_params(init_backlog: Sequence[float], area_diagonal_m: float, q: float = 0.9) -> RiskRewardParams:
    """Weights that put each term at O(1) per episode."""
    total = vsum(init_backlog)
    peak = max(init_backlog)
    return RiskRewardParams(
        q=q,
        mu=1.0 / total if total > 0 else 0.0,
        gamma_d=1.0 / area_diagonal_m,
        backlog_scale=peak if peak > 0 else 1.0,
    )


def risk_reward(ctx: RewardContext, params: RiskRewardParams) -> float:
    var = var_q(ctx.backlog, params.q)
    moved = vsum([min(d, r * ctx.slot_len) for d, r in zip(ctx.backlog, ctx.rate)])
    closer = ctx.delta_dist(ctx.bottleneck)
    return -var / params.backlog_scale + params.mu * moved + params.gamma_d * closer


def manual_bottleneck_reward(ctx: RewardContext) -> float:
    peak = max(ctx.init_backlog)
    if peak <= 0:
        return 0.0
    return -max(ctx.next_backlog) / peak


def zero_reward(ctx: RewardContext) -> float:
    return 0.0
