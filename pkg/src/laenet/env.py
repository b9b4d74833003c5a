"""Slotted UAV environment: trajectory actions, time-varying uplink, episode latency.

One slot of length alpha proceeds as: clamp the action, move, evaluate the
channel at the post-move pose, and transmit min(d_n, alpha R_n) bits for every
user with the ARPO powers held fixed. A user whose backlog empties mid-slot
completes at the fractional time t*alpha + d_n / R_n.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .arpo import ArpoSolution, solve_scenario
from .channel import link_state, sample_fading
from .rewards import RewardContext
from .scenario import PhysConfig, RngStream, Scenario
from .uplink import processing_floor
from .vlm_profile import payload_bits

Vec3 = tuple[float, float, float]
WAYPOINT_TOL_M = 1e-9


class EnvUsageError(RuntimeError):
    """Raised when the environment is driven out of protocol (e.g. stepping a finished episode)."""


@dataclass(frozen=True)
class EnvState:
    rel_pos: np.ndarray          # (N, 3): UAV minus user, meters
    res_per_user: np.ndarray     # pixels
    power_per_user: np.ndarray   # W
    gain_per_user: np.ndarray    # |h_n[t]|^2
    backlog_bits: np.ndarray     # d_n[t]
    slot: int
    uav_pos: Vec3
    init_backlog: np.ndarray
    p_max: np.ndarray
    horizon: int

    @property
    def num_users(self) -> int:
        return len(self.backlog_bits)

    def as_vector(self) -> np.ndarray:
        """Raw 7N state in physical units."""
        return np.concatenate([self.rel_pos.reshape(-1), self.res_per_user, self.power_per_user,
                               self.gain_per_user, self.backlog_bits]).astype(float)

    def user_positions(self) -> np.ndarray:
        return np.asarray(self.uav_pos, dtype=float)[None, :] - self.rel_pos


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    transmitted_bits: np.ndarray
    rate_bps: np.ndarray
    reward: float
    done: bool
    elapsed_s: float
    completion_s: np.ndarray     # NaN until a user finishes
    context: RewardContext


# --------------------------------------------------------------------------
# Observation normalization for learning
# --------------------------------------------------------------------------

POS_SCALE_M = 1000.0
LOG_GAIN_CENTER = -10.0
LOG_GAIN_SCALE = 2.0
RES_SCALE_PX = 1536 * 1536


def observe(state: EnvState) -> np.ndarray:
    """Normalized 7N observation: positions/1000, pixels/1536^2, P/Pmax, log-gain, backlog fraction."""
    init = state.init_backlog
    frac = np.divide(state.backlog_bits, init, out=np.zeros_like(state.backlog_bits, dtype=float), where=init > 0)
    log_gain = (np.log10(np.maximum(state.gain_per_user, 1e-30)) - LOG_GAIN_CENTER) / LOG_GAIN_SCALE
    return np.concatenate([
        state.rel_pos.reshape(-1) / POS_SCALE_M,
        state.res_per_user / RES_SCALE_PX,
        state.power_per_user / state.p_max,
        log_gain,
        frac,
    ]).astype(float)


def obs_dim(num_users: int) -> int:
    return 7 * num_users


# --------------------------------------------------------------------------
# Action clamping
# --------------------------------------------------------------------------

def clamp_action(raw: Sequence[float], phys: PhysConfig, z: float | None = None) -> np.ndarray:
    """Rescale the horizontal move to the speed limit, clip climb rate, keep altitude in range."""
    dx, dy, dz = (float(v) for v in raw)
    if not all(math.isfinite(v) for v in (dx, dy, dz)):
        raise ValueError("action must be finite")
    lim = phys.max_xy_step
    norm = math.hypot(dx, dy)
    if norm > lim:
        s = lim / norm
        dx, dy = dx * s, dy * s
    dz = min(max(dz, -phys.max_z_step), phys.max_z_step)
    if z is not None:
        znew = min(max(z + dz, phys.h_min_m), phys.h_max_m)
        # the subtraction can round one ulp past the climb limit
        dz = min(max(znew - z, -phys.max_z_step), phys.max_z_step)
    return np.array([dx, dy, dz])


# --------------------------------------------------------------------------
# Episode log
# --------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    num_users: int
    slot_len_s: float
    waypoints: list = field(default_factory=list)     # (x, y, z, t_s)
    rates: list = field(default_factory=list)         # per slot, N rates
    backlogs: list = field(default_factory=list)      # per slot, N backlogs after the slot
    rewards: list = field(default_factory=list)
    completion_s: np.ndarray | None = None            # fractional uplink completion, NaN if unfinished
    latency_s: np.ndarray | None = None               # total per-user latency
    unfinished: tuple = ()
    time_offset_s: float = 0.0
    elapsed_s: float = 0.0

    @property
    def max_latency(self) -> float:
        return float(np.max(self.latency_s))

    @property
    def start_pose(self) -> Vec3:
        return tuple(self.waypoints[0][:3])

    @property
    def end_pose(self) -> Vec3:
        return tuple(self.waypoints[-1][:3])

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def to_csv(self) -> str:
        n = self.num_users
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "time_s", "x", "y", "z"] + [f"rate_{i}" for i in range(n)]
                   + [f"backlog_{i}" for i in range(n)] + ["reward"])
        for k, (x, y, z, ts) in enumerate(self.waypoints):
            if k == 0:
                rates = [""] * n
                back = [""] * n
                rew = ""
            else:
                rates = [repr(float(v)) for v in self.rates[k - 1]]
                back = [repr(float(v)) for v in self.backlogs[k - 1]]
                rew = repr(float(self.rewards[k - 1]))
            w.writerow([k, repr(float(ts + self.time_offset_s)), repr(float(x)), repr(float(y)), repr(float(z))]
                       + rates + back + [rew])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "slots": len(self.rewards),
            "elapsed_s": float(self.elapsed_s),
            "time_offset_s": float(self.time_offset_s),
            "latency_per_user_s": [float(v) for v in self.latency_s],
            "max_latency_s": self.max_latency,
            "completion_per_user_s": [None if math.isnan(v) else float(v) for v in self.completion_s],
            "unfinished": list(self.unfinished),
            "total_reward": self.total_reward,
            "start_pose": list(self.start_pose),
            "end_pose": list(self.end_pose),
        }


def check_waypoints(waypoints: Sequence[Sequence[float]], phys: PhysConfig, tol: float = WAYPOINT_TOL_M) -> None:
    """Raise ValueError if any consecutive waypoint pair breaks the speed or altitude limits."""
    for k, (a, b) in enumerate(zip(waypoints[:-1], waypoints[1:])):
        if math.hypot(b[0] - a[0], b[1] - a[1]) > phys.max_xy_step + tol:
            raise ValueError(f"horizontal speed limit broken at slot {k}")
        if abs(b[2] - a[2]) > phys.max_z_step + tol:
            raise ValueError(f"vertical speed limit broken at slot {k}")
    for k, w in enumerate(waypoints):
        if not phys.h_min_m - tol <= w[2] <= phys.h_max_m + tol:
            raise ValueError(f"altitude out of range at waypoint {k}")


# --------------------------------------------------------------------------
# Environment
# --------------------------------------------------------------------------

RewardFn = Callable[[RewardContext], float]


class UavEnv:
    """Single-owner stateful environment for one service session."""

    def __init__(self, scenario: Scenario, solution: ArpoSolution, reward_fn: RewardFn | None = None,
                 incomplete_penalty_s: float = 0.0):
        if len(solution.res_per_user) != scenario.n_users or len(solution.power_per_user) != scenario.n_users:
            raise ValueError(f"solution covers {len(solution.res_per_user)} users, scenario has {scenario.n_users}")
        self.scenario = scenario
        self.solution = solution
        self.reward_fn = reward_fn
        self.incomplete_penalty_s = float(incomplete_penalty_s)
        self.user_pos = scenario.user_positions()
        self._user_tuples = tuple(tuple(float(c) for c in p) for p in self.user_pos)
        self.res = np.array(solution.res_per_user, dtype=float)
        self.power = np.asarray(solution.power_per_user, dtype=float).copy()
        self.bandwidth = np.array([u.bandwidth_hz for u in scenario.users])
        self.p_max = np.array([u.p_max_w for u in scenario.users])
        self.init_backlog = np.array([payload_bits(scenario.profile, r, u.n_queries)
                                      for r, u in zip(solution.res_per_user, scenario.users)])
        self.floors = np.array([processing_floor(scenario, r) for r in solution.res_per_user])
        self._state: EnvState | None = None
        self._done = True

    # -- helpers ---------------------------------------------------------------
    def _fading(self) -> np.ndarray:
        return np.asarray(sample_fading(self.scenario.chan.fading_mode, self._rng, self.scenario.n_users), float)

    def _link(self, pose) -> tuple[np.ndarray, np.ndarray]:
        return link_state(pose, self.user_pos, self.scenario.chan, self.power, self.bandwidth, self._fading())

    def _make_state(self, pose, gains, backlog, slot) -> EnvState:
        return EnvState(
            rel_pos=np.asarray(pose, dtype=float)[None, :] - self.user_pos,
            res_per_user=self.res.copy(),
            power_per_user=self.power.copy(),
            gain_per_user=np.asarray(gains, dtype=float).copy(),
            backlog_bits=np.asarray(backlog, dtype=float).copy(),
            slot=int(slot),
            uav_pos=tuple(float(v) for v in pose),
            init_backlog=self.init_backlog,
            p_max=self.p_max,
            horizon=self.scenario.phys.horizon_slots,
        )

    # -- protocol --------------------------------------------------------------
    def reset(self, seed: int = 0, start_pose: Sequence[float] | None = None) -> EnvState:
        pose = tuple(float(v) for v in (self.scenario.uav_start if start_pose is None else start_pose))
        self._rng = RngStream(seed, "fading")
        self.pose = pose
        self.backlog = self.init_backlog.copy()
        self.completion = np.full(self.scenario.n_users, np.nan)
        self.completion[self.init_backlog == 0] = 0.0
        self.t = 0
        gains, _ = self._link(pose)
        self._state = self._make_state(pose, gains, self.backlog, 0)
        self._done = bool(np.all(self.backlog == 0))
        self.log = EpisodeLog(self.scenario.n_users, self.scenario.phys.slot_len_s, waypoints=[pose + (0.0,)])
        return self._state

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise EnvUsageError("reset() must be called first")
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    def step(self, action: Sequence[float]) -> StepOutcome:
        if self._state is None:
            raise EnvUsageError("reset() must be called first")
        if self._done:
            raise EnvUsageError("episode is finished; call reset()")
        phys = self.scenario.phys
        alpha = phys.slot_len_s
        a = clamp_action(action, phys, self.pose[2])
        prev_pose = self.pose
        pose = (prev_pose[0] + a[0], prev_pose[1] + a[1], prev_pose[2] + a[2])
        gains, rates = self._link(pose)
        d = self.backlog
        cap = alpha * rates
        tx = np.minimum(d, cap)
        nxt = d - tx
        nxt[tx == d] = 0.0
        for n in range(len(d)):
            if d[n] > 0 and nxt[n] == 0.0:
                self.completion[n] = self.t * alpha + d[n] / rates[n]
        ctx = RewardContext(
            backlog=tuple(float(v) for v in d),
            next_backlog=tuple(float(v) for v in nxt),
            transmitted=tuple(float(v) for v in tx),
            rate=tuple(float(v) for v in rates),
            slot_len=alpha,
            pose=prev_pose,
            next_pose=pose,
            user_pos=self._user_tuples,
            init_backlog=tuple(float(v) for v in self.init_backlog),
            slot=self.t,
        )
        reward = float(self.reward_fn(ctx)) if self.reward_fn is not None else 0.0
        self.t += 1
        self.pose = pose
        self.backlog = nxt
        all_clear = bool(np.all(nxt == 0))
        self._done = all_clear or self.t >= phys.horizon_slots
        elapsed = float(np.max(self.completion)) if all_clear else self.t * alpha
        self._state = self._make_state(pose, gains, nxt, self.t)
        # the session ends at the last upload, which may fall inside the final slot
        self.log.waypoints.append(pose + (elapsed if self._done else self.t * alpha,))
        self.log.rates.append(rates.copy())
        self.log.backlogs.append(nxt.copy())
        self.log.rewards.append(reward)
        if self._done:
            self._finish(elapsed)
        return StepOutcome(self._state, tx, rates, reward, self._done, elapsed, self.completion.copy(), ctx)

    def _finish(self, elapsed: float) -> None:
        lat, unfinished = episode_latency(self.completion, self.floors, self.scenario.phys,
                                          self.incomplete_penalty_s)
        self.log.completion_s = self.completion.copy()
        self.log.latency_s = lat
        self.log.unfinished = unfinished
        self.log.elapsed_s = elapsed


def episode_latency(completion_s: np.ndarray, floors_s: np.ndarray, phys: PhysConfig,
                    incomplete_penalty_s: float = 0.0) -> tuple[np.ndarray, tuple[bool, ...]]:
    """Per-user total latency: uplink completion plus the processing/downlink floor.

    Users that never finished are charged alpha*T of uplink time plus the penalty.
    """
    comp = np.asarray(completion_s, dtype=float)
    unfinished = tuple(bool(v) for v in np.isnan(comp))
    t_up = np.where(np.isnan(comp), phys.slot_len_s * phys.horizon_slots + incomplete_penalty_s, comp)
    return t_up + np.asarray(floors_s, dtype=float), unfinished


# --------------------------------------------------------------------------
# Rollouts
# --------------------------------------------------------------------------

class Policy(Protocol):
    def act(self, state: EnvState) -> np.ndarray: ...


def run_episode(env: UavEnv, policy: Policy, seed: int = 0, start_pose=None) -> EpisodeLog:
    state = env.reset(seed, start_pose)
    while not env.done:
        state = env.step(policy.act(state)).state
    if env.log.latency_s is None:  # empty payloads: done at reset
        env._finish(0.0)
    return env.log


def run_batches(scenarios: Sequence[Scenario], policy: Policy, seed: int = 0,
                reward_fn: RewardFn | None = None, clamp_rule: str = "project") -> list[EpisodeLog]:
    """Serve batches back to back; each starts where the previous one ended.

    ARPO is re-solved for every batch at its actual start pose. The first
    batch starts at its own ``uav_start``.
    """
    if not scenarios:
        raise ValueError("need at least one batch")
    ref = scenarios[0]
    for sc in scenarios[1:]:
        if sc.phys != ref.phys or sc.chan != ref.chan:
            raise ValueError("batches must share phys and chan configuration")
    logs = []
    pose = tuple(float(v) for v in ref.uav_start)
    offset = 0.0
    for k, sc in enumerate(scenarios):
        sol = solve_scenario(sc, pose, clamp_rule=clamp_rule)
        env = UavEnv(sc, sol, reward_fn)
        if hasattr(policy, "bind"):
            policy.bind(sc)
        log = run_episode(env, policy, seed=seed + k, start_pose=pose)
        log.time_offset_s = offset
        offset += log.elapsed_s
        pose = log.end_pose
        logs.append(log)
    return logs


def concat_waypoints(logs: Sequence[EpisodeLog]) -> list[tuple[float, float, float, float]]:
    """Global trajectory: each batch's waypoints shifted by its time offset, shared poses not repeated."""
    out: list = []
    for log in logs:
        pts = [(x, y, z, t + log.time_offset_s) for (x, y, z, t) in log.waypoints]
        out.extend(pts if not out else pts[1:])
    return out
