"""Resolution and power allocation for one uplink session.

Resolutions come from a branch-and-bound search over the discrete candidate
set; powers come from the KKT conditions of the convex power subproblem,
with the latency bound tau located by bisection.

The power subproblem is

    min_{P, tau}  tau + zeta * sum(P)   s.t.  T_n(P_n) <= tau,  P_n <= P_n^max.

For tau above every user's floor Gamma_n the cheapest feasible power is the
closed form P_n(tau); the objective tau + zeta*sum P_n(tau) is convex in tau
and stationary where sum zeta / g_n(P_n(tau)) = 1. When that stationary
point asks some user for more than P_n^max, the optimum sits on the boundary
tau = max_n T_n(P_n^max) (``clamp_rule="project"``, the default). The
``"min"`` rule instead keeps the stationary tau and clips each power to its
cap, which is feasible but can overspend power.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .channel import geometry, mean_gain
from .scenario import Scenario, UserTask
from .uplink import processing_floor, static_uplink_time
from .vlm_profile import ResolutionProfile, min_feasible_resolution, payload_bits

TOL_TAU = 1e-9
EPS_LO = 1e-9


class BracketError(ValueError):
    """tau is not above the user's latency floor."""


@dataclass(frozen=True)
class ArpoInstance:
    scenario: Scenario
    gains: np.ndarray  # |h_n|^2 at the session-start pose, |h_hat| = 1
    pose: tuple[float, float, float]

    @property
    def users(self) -> tuple[UserTask, ...]:
        return self.scenario.users

    @property
    def zeta(self) -> float:
        return self.scenario.zeta

    @property
    def profile(self) -> ResolutionProfile:
        return self.scenario.profile

    @property
    def noise_w(self) -> float:
        return self.scenario.chan.noise_w

    def payloads(self, res: Sequence[int]) -> np.ndarray:
        return np.array([payload_bits(self.profile, r, u.n_queries) for u, r in zip(self.users, res)])

    def floors(self, res: Sequence[int]) -> np.ndarray:
        return np.array([processing_floor(self.scenario, r) for r in res])

    def bandwidths(self) -> np.ndarray:
        return np.array([u.bandwidth_hz for u in self.users])

    def p_max(self) -> np.ndarray:
        return np.array([u.p_max_w for u in self.users])

    def latency(self, n: int, res: int, p_w: float) -> float:
        u = self.users[n]
        d = payload_bits(self.profile, res, u.n_queries)
        return static_uplink_time(d, u.bandwidth_hz, p_w, self.gains[n], self.noise_w) + processing_floor(self.scenario, res)


def build_instance(scenario: Scenario, pose=None) -> ArpoInstance:
    pose = tuple(float(v) for v in (scenario.uav_start if pose is None else pose))
    gains = np.array([mean_gain(geometry(pose, u.pos_m), scenario.chan) for u in scenario.users])
    return ArpoInstance(scenario, gains, pose)


@dataclass
class ArpoSolution:
    res_per_user: tuple[int, ...]
    power_per_user: np.ndarray
    tau_star: float
    achieved_latency_per_user: np.ndarray
    objective_value: float
    clamp_flags: tuple[bool, ...]
    tau_stationary: float | None = None
    bisection_iterations: int = 0
    bnb_nodes: int = 0
    duals: dict = field(default_factory=dict)

    @property
    def max_latency(self) -> float:
        return float(np.max(self.achieved_latency_per_user))

    @property
    def total_power(self) -> float:
        return float(np.sum(self.power_per_user))

    def to_dict(self) -> dict:
        return {
            "res_per_user": list(self.res_per_user),
            "power_per_user_w": [float(p) for p in self.power_per_user],
            "tau_star_s": float(self.tau_star),
            "tau_stationary_s": None if self.tau_stationary is None else float(self.tau_stationary),
            "achieved_latency_per_user_s": [float(t) for t in self.achieved_latency_per_user],
            "max_latency_s": self.max_latency,
            "total_power_w": self.total_power,
            "objective_value": float(self.objective_value),
            "clamp_flags": list(self.clamp_flags),
            "bisection_iterations": self.bisection_iterations,
            "bnb_nodes": self.bnb_nodes,
        }


# --------------------------------------------------------------------------
# Closed forms
# --------------------------------------------------------------------------

def g_n(p_w: float, payload: float, bandwidth: float, gain: float, noise_w: float) -> float:
    """-dT_up/dP at P = p_w (s/W); positive and decreasing in P."""
    if p_w <= 0:
        raise ValueError("g_n needs p_w > 0")
    x = gain * p_w / noise_w
    l2 = math.log2(1.0 + x)
    return payload * gain / (bandwidth * noise_w * (1.0 + x) * math.log(2.0) * l2 * l2)


def power_for_tau(tau_s: float, payload: float, bandwidth: float, gain: float, floor_s: float,
                  noise_w: float) -> float:
    """Least power meeting latency tau: noise/gain * (2^(D / (B (tau - Gamma))) - 1)."""
    if tau_s <= floor_s:
        raise BracketError(f"tau={tau_s} must exceed the latency floor {floor_s}")
    expo = payload / (bandwidth * (tau_s - floor_s))
    if expo > 1023.0:
        return math.inf
    return noise_w / gain * (2.0 ** expo - 1.0)


# --------------------------------------------------------------------------
# Power subproblem
# --------------------------------------------------------------------------

@dataclass
class _PowerResult:
    power: np.ndarray
    tau: float
    tau_stationary: float | None
    latency: np.ndarray
    clamp: tuple[bool, ...]
    iterations: int
    objective: float
    duals: dict


def solve_tau(inst: ArpoInstance, res: Sequence[int], tol: float = TOL_TAU) -> tuple[float, int]:
    """Bisection root of sum_n zeta / g_n(P_n(tau)) = 1. Returns (tau, iterations)."""
    if inst.zeta <= 0:
        raise ValueError("solve_tau needs zeta > 0")
    tau, _lo, _hi, it = kernels.tau_bisect(
        float(inst.zeta), inst.payloads(res), inst.bandwidths(), np.asarray(inst.gains, float),
        inst.floors(res), float(inst.noise_w), EPS_LO, tol)
    return float(tau), int(it)


def kkt_sum(inst: ArpoInstance, res: Sequence[int], tau: float) -> float:
    """sum_n zeta / g_n(P_n(tau)); equals 1 at the stationary tau."""
    return float(kernels.kkt_residual(float(tau), float(inst.zeta), inst.payloads(res), inst.bandwidths(),
                                      np.asarray(inst.gains, float), inst.floors(res), float(inst.noise_w))) + 1.0


def solve_power(inst: ArpoInstance, res: Sequence[int], clamp_rule: str = "project") -> _PowerResult:
    if clamp_rule not in ("project", "min"):
        raise ValueError(f"unknown clamp_rule {clamp_rule!r}")
    n = len(inst.users)
    d = inst.payloads(res)
    bw = inst.bandwidths()
    pmax = inst.p_max()
    floors = inst.floors(res)
    lat_at_max = np.array([inst.latency(i, res[i], pmax[i]) for i in range(n)])
    tau_min = float(np.max(lat_at_max))  # smallest tau reachable within the power caps
    duals: dict = {}
    it = 0
    tau_stat = None
    if inst.zeta == 0:
        power = pmax.copy()
        tau = tau_min
    else:
        tau_stat, it = solve_tau(inst, res)
        tau = max(tau_stat, tau_min) if clamp_rule == "project" else tau_stat
        power = np.empty(n)
        for i in range(n):
            p = 0.0 if d[i] == 0 else power_for_tau(tau, d[i], bw[i], inst.gains[i], floors[i], inst.noise_w)
            power[i] = min(p, pmax[i])
        # Projected boundary: whoever defines tau_min runs at full power.
        if clamp_rule == "project" and tau == tau_min:
            power[lat_at_max >= tau_min] = pmax[lat_at_max >= tau_min]
        omega = np.array([0.0 if d[i] == 0 or power[i] <= 0 else
                          inst.zeta / g_n(power[i], d[i], bw[i], inst.gains[i], inst.noise_w)
                          for i in range(n)])
        duals = {"omega": omega.tolist()}
    latency = np.array([inst.latency(i, res[i], power[i]) for i in range(n)])
    clamp = tuple(bool(p >= pm * (1 - 1e-12)) for p, pm in zip(power, pmax))
    obj = float(np.max(latency) + inst.zeta * np.sum(power))
    return _PowerResult(power, float(tau), tau_stat, latency, clamp, it, obj, duals)


# --------------------------------------------------------------------------
# Resolution selection
# --------------------------------------------------------------------------

def scan_resolutions(inst: ArpoInstance) -> tuple[int, ...]:
    """Per-user smallest resolution satisfying the accuracy floor."""
    return tuple(min_feasible_resolution(inst.profile, u.acc_min, u.id) for u in inst.users)


def _session_value(inst: ArpoInstance, res: Sequence[int]) -> float:
    return solve_power(inst, res).objective


def select_resolutions(inst: ArpoInstance, return_nodes: bool = False):
    """Depth-first branch and bound over the resolution product space.

    A node fixes the resolutions of the first k users. Its bound evaluates
    the session objective with the unfixed users at the smallest candidate
    resolution, which is valid because the objective is non-decreasing in
    every r_n. Children are explored in increasing pixel order; nodes whose
    bound is not strictly below the incumbent are pruned.
    """
    scan_resolutions(inst)  # raises InfeasibleAccuracy naming the user
    cands = inst.profile.resolutions
    smallest = cands[0]
    n = len(inst.users)
    best_val = math.inf
    best: tuple[int, ...] | None = None
    nodes = 0

    def visit(prefix: tuple[int, ...]) -> None:
        nonlocal best_val, best, nodes
        nodes += 1
        k = len(prefix)
        bound = _session_value(inst, prefix + (smallest,) * (n - k))
        if bound >= best_val:
            return
        if k == n:
            best_val, best = bound, prefix
            return
        acc_min = inst.users[k].acc_min
        for r in cands:
            if inst.profile.accuracy(r) >= acc_min:
                visit(prefix + (r,))

    visit(())
    assert best is not None
    return (best, nodes) if return_nodes else best


# --------------------------------------------------------------------------
# Full solve
# --------------------------------------------------------------------------

def arpo_solve(inst: ArpoInstance, clamp_rule: str = "project") -> ArpoSolution:
    res, nodes = select_resolutions(inst, return_nodes=True)
    pr = solve_power(inst, res, clamp_rule=clamp_rule)
    return ArpoSolution(
        res_per_user=tuple(res),
        power_per_user=pr.power,
        tau_star=pr.tau,
        achieved_latency_per_user=pr.latency,
        objective_value=pr.objective,
        clamp_flags=pr.clamp,
        tau_stationary=pr.tau_stationary,
        bisection_iterations=pr.iterations,
        bnb_nodes=nodes,
        duals=pr.duals,
    )


def solve_scenario(scenario: Scenario, pose=None, clamp_rule: str = "project") -> ArpoSolution:
    return arpo_solve(build_instance(scenario, pose), clamp_rule=clamp_rule)


def zeta_sweep(scenario: Scenario, zetas: Sequence[float], pose=None) -> list[tuple[float, float, float]]:
    """(zeta, total power, achieved max latency) per zeta."""
    rows = []
    for z in zetas:
        sol = solve_scenario(scenario.replace(zeta=float(z)), pose)
        rows.append((float(z), sol.total_power, sol.max_latency))
    return rows
