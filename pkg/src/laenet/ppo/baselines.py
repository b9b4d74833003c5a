"""Non-learned trajectory policies used as baselines."""
from __future__ import annotations

import math

import numpy as np

from ..env import EnvState
from ..scenario import PhysConfig, RngStream

ARRIVAL_RADIUS_M = 1.0


class RandomPolicy:
    """Uniform move inside the speed limits: horizontal uniform over the disk, vertical uniform."""

    def __init__(self, phys: PhysConfig, seed: int = 0):
        self.phys = phys
        self.rng = RngStream(seed, "baseline")

    def act(self, state: EnvState) -> np.ndarray:
        lim = self.phys.max_xy_step
        r = lim * math.sqrt(float(self.rng.uniform()))
        phi = float(self.rng.uniform(0.0, 2.0 * math.pi))
        dz = float(self.rng.uniform(-self.phys.max_z_step, self.phys.max_z_step))
        return np.array([r * math.cos(phi), r * math.sin(phi), dz])


class GeometricHeuristic:
    """Fly at full speed toward the users' centroid at a fixed service altitude, then hover."""

    def __init__(self, phys: PhysConfig, service_alt_m: float):
        if not phys.h_min_m <= service_alt_m <= phys.h_max_m:
            raise ValueError("service altitude outside the allowed range")
        self.phys = phys
        self.service_alt_m = float(service_alt_m)

    def target(self, state: EnvState) -> np.ndarray:
        users = state.user_positions()
        cx, cy = users[:, 0].mean(), users[:, 1].mean()
        return np.array([cx, cy, self.service_alt_m])

    def act(self, state: EnvState) -> np.ndarray:
        delta = self.target(state) - np.asarray(state.uav_pos, dtype=float)
        if float(np.linalg.norm(delta)) <= ARRIVAL_RADIUS_M:
            return np.zeros(3)
        lim = self.phys.max_xy_step
        h = math.hypot(delta[0], delta[1])
        dx, dy = (delta[0], delta[1]) if h <= lim else (delta[0] * lim / h, delta[1] * lim / h)
        dz = min(max(delta[2], -self.phys.max_z_step), self.phys.max_z_step)
        return np.array([dx, dy, dz])


class FixedPolicy:
    """Always the same move; zero by default (hover)."""

    def __init__(self, action=(0.0, 0.0, 0.0)):
        self.action = np.asarray(action, dtype=float)

    def act(self, state: EnvState) -> np.ndarray:
        return self.action.copy()
