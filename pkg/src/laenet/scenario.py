"""World description: physics and channel constants, users, lookup table, RNG streams.

Scenarios are immutable. They serialize to a small YAML document (see
``docs/config_schema.md``); ``dump_scenario`` output is stable so that
save -> load -> save is byte-identical.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .vlm_profile import ResolutionProfile, default_profile

SEED_ENV_VAR = "LAENET_SEED"
DEFAULT_SEED = 0

FADING_MODES = ("unit-modulus", "rayleigh")


class ConfigError(ValueError):
    """Invalid or malformed scenario configuration."""


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_w: float) -> float:
    return 10.0 * math.log10(x_w) + 30.0


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class PhysConfig:
    slot_len_s: float = 1.0
    horizon_slots: int = 50
    h_min_m: float = 50.0
    h_max_m: float = 300.0
    v_xy_max_mps: float = 100.0
    v_z_max_mps: float = 20.0
    area_half_m: float = 500.0

    def __post_init__(self) -> None:
        _require(self.slot_len_s > 0, "phys.slot_len_s > 0 violated")
        _require(int(self.horizon_slots) == self.horizon_slots and self.horizon_slots >= 1,
                 "phys.horizon_slots >= 1 violated")
        _require(self.h_min_m > 0, "phys.h_min_m > 0 violated")
        _require(self.h_min_m < self.h_max_m, "h_min < h_max violated")
        _require(self.v_xy_max_mps > 0, "phys.v_xy_max_mps > 0 violated")
        _require(self.v_z_max_mps > 0, "phys.v_z_max_mps > 0 violated")
        _require(self.area_half_m > 0, "phys.area_half_m > 0 violated")

    @property
    def max_xy_step(self) -> float:
        return self.slot_len_s * self.v_xy_max_mps

    @property
    def max_z_step(self) -> float:
        return self.slot_len_s * self.v_z_max_mps

    @property
    def area_diagonal_m(self) -> float:
        return 2.0 * math.sqrt(2.0) * self.area_half_m


@dataclass(frozen=True)
class ChannelConfig:
    a_los: float = 4.88
    b_los: float = 0.43
    gamma_los: float = 2.0
    gamma_nlos: float = 2.0
    beta0_db: float = -50.0
    noise_dbm: float = -100.0
    fading_mode: str = "unit-modulus"

    def __post_init__(self) -> None:
        _require(self.a_los > 0, "chan.a_los > 0 violated")
        _require(self.b_los > 0, "chan.b_los > 0 violated")
        _require(self.gamma_los > 0, "chan.gamma_los > 0 violated")
        _require(self.gamma_nlos > 0, "chan.gamma_nlos > 0 violated")
        _require(self.fading_mode in FADING_MODES,
                 f"chan.fading_mode must be one of {FADING_MODES}, got {self.fading_mode!r}")
        _require(math.isfinite(self.beta0_db) and math.isfinite(self.noise_dbm),
                 "chan.beta0_db / chan.noise_dbm must be finite")

    @property
    def beta0_lin(self) -> float:
        return db_to_linear(self.beta0_db)

    @property
    def noise_w(self) -> float:
        return dbm_to_watts(self.noise_dbm)


@dataclass(frozen=True)
class UserTask:
    id: int
    pos_m: tuple[float, float, float]
    n_queries: int = 1
    acc_min: float = 0.60
    bandwidth_hz: float = 1e6
    p_max_w: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "pos_m", tuple(float(v) for v in self.pos_m))
        _require(len(self.pos_m) == 3, f"user {self.id}: pos_m needs 3 coordinates")
        _require(int(self.n_queries) == self.n_queries and self.n_queries >= 1,
                 f"user {self.id}: n_queries >= 1 violated")
        _require(0.0 <= self.acc_min <= 1.0, f"user {self.id}: 0 <= acc_min <= 1 violated")
        _require(self.bandwidth_hz > 0, f"user {self.id}: bandwidth_hz > 0 violated")
        _require(self.p_max_w > 0, f"user {self.id}: p_max_w > 0 violated")


@dataclass(frozen=True)
class Scenario:
    phys: PhysConfig
    chan: ChannelConfig
    users: tuple[UserTask, ...]
    uav_start: tuple[float, float, float] = (-500.0, -500.0, 150.0)
    zeta: float = 0.0
    t_down_s: float = 0.1
    expected_out_tokens: float = 20.0
    profile: ResolutionProfile = field(default_factory=default_profile)

    def __post_init__(self) -> None:
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "uav_start", tuple(float(v) for v in self.uav_start))
        _require(len(self.users) >= 1, "users: at least one user required")
        _require(len({u.id for u in self.users}) == len(self.users), "users: ids must be unique")
        _require(len(self.uav_start) == 3, "uav_start needs 3 coordinates")
        z0 = self.uav_start[2]
        _require(self.phys.h_min_m <= z0 <= self.phys.h_max_m,
                 "uav_start altitude within [h_min, h_max] violated")
        _require(self.zeta >= 0, "zeta >= 0 violated")
        _require(self.t_down_s >= 0, "t_down_s >= 0 violated")
        _require(self.expected_out_tokens >= 0, "expected_out_tokens >= 0 violated")
        half = self.phys.area_half_m
        for u in self.users:
            x, y, _ = u.pos_m
            _require(abs(x) <= half and abs(y) <= half,
                     f"user {u.id}: position outside the service area")

    @property
    def n_users(self) -> int:
        return len(self.users)

    def user_positions(self) -> np.ndarray:
        return np.array([u.pos_m for u in self.users], dtype=float)

    def replace(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_users(self, **changes: Any) -> "Scenario":
        """Copy with the same field overrides applied to every user."""
        return self.replace(users=tuple(dataclasses.replace(u, **changes) for u in self.users))


def default_users() -> tuple[UserTask, ...]:
    # Two high-demand users in the far (north-west) corner, two low-demand
    # users near the UAV start point.
    high = dict(n_queries=2, acc_min=0.67)
    low = dict(n_queries=1, acc_min=0.60)
    return (
        UserTask(0, (-400.0, 450.0, 0.0), **high),
        UserTask(1, (-250.0, 350.0, 0.0), **high),
        UserTask(2, (-350.0, -400.0, 0.0), **low),
        UserTask(3, (-450.0, -250.0, 0.0), **low),
    )


def default_scenario() -> Scenario:
    return Scenario(phys=PhysConfig(), chan=ChannelConfig(), users=default_users())


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

_PHYS_KEYS = {f.name for f in dataclasses.fields(PhysConfig)}
_CHAN_KEYS = {f.name for f in dataclasses.fields(ChannelConfig)}
_USER_KEYS = {f.name for f in dataclasses.fields(UserTask)}
_TOP_KEYS = {"phys", "chan", "users", "uav_start", "zeta", "t_down_s",
             "expected_out_tokens", "vlm_profile"}


def scenario_to_dict(sc: Scenario) -> dict:
    users = []
    for u in sc.users:
        d = dataclasses.asdict(u)
        d["pos_m"] = list(u.pos_m)
        users.append(d)
    prof: Any = "default" if sc.profile == default_profile() else sc.profile.to_dict()
    return {
        "phys": dataclasses.asdict(sc.phys),
        "chan": dataclasses.asdict(sc.chan),
        "users": users,
        "uav_start": list(sc.uav_start),
        "zeta": sc.zeta,
        "t_down_s": sc.t_down_s,
        "expected_out_tokens": sc.expected_out_tokens,
        "vlm_profile": prof,
    }


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=True, default_flow_style=None, width=100)


def _check_keys(got: Mapping, allowed: set, where: str) -> None:
    if not isinstance(got, Mapping):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def _floatify(d: Mapping, ints: Sequence[str] = ()) -> dict:
    out = {}
    for k, v in d.items():
        if k in ints or isinstance(v, str) or isinstance(v, (list, tuple)):
            out[k] = v
        else:
            out[k] = float(v)
    return out


def scenario_from_dict(doc: Mapping, base_dir: str | None = None) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "scenario")
    for req in ("phys", "chan", "users"):
        if req not in doc:
            raise ConfigError(f"scenario: missing key {req!r}")
    _check_keys(doc["phys"], _PHYS_KEYS, "phys")
    _check_keys(doc["chan"], _CHAN_KEYS, "chan")
    try:
        phys = PhysConfig(**_floatify(doc["phys"], ints=("horizon_slots",)))
        chan = ChannelConfig(**_floatify(doc["chan"]))
        users = []
        for i, ud in enumerate(doc["users"]):
            _check_keys(ud, _USER_KEYS, f"users[{i}]")
            users.append(UserTask(**_floatify(ud, ints=("id", "n_queries"))))
        prof_doc = doc.get("vlm_profile", "default")
        if prof_doc == "default":
            profile = default_profile()
        elif isinstance(prof_doc, str):
            path = prof_doc if base_dir is None else os.path.join(base_dir, prof_doc)
            profile = ResolutionProfile.load(path)
        else:
            profile = ResolutionProfile.from_dict(prof_doc)
        kw = {k: doc[k] for k in ("zeta", "t_down_s", "expected_out_tokens") if k in doc}
        if "uav_start" in doc:
            kw["uav_start"] = tuple(doc["uav_start"])
        return Scenario(phys=phys, chan=chan, users=tuple(users), profile=profile,
                        **{k: (float(v) if not isinstance(v, tuple) else v) for k, v in kw.items()})
    except TypeError as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def load_scenario(text: str, base_dir: str | None = None) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {exc.problem}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigError("parse error: top level must be a mapping")
    return scenario_from_dict(doc, base_dir=base_dir)


def load_scenario_file(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def save_scenario_file(sc: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_scenario(sc))


def scenario_hash(sc: Scenario) -> str:
    return hashlib.sha256(dump_scenario(sc).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------

STREAM_IDS = {"fading": 1, "policy": 2, "init": 3, "eval": 4, "baseline": 5, "sampling": 6}


def resolve_seed(seed: int | None = None) -> int:
    """Explicit seed wins; otherwise ``LAENET_SEED``; otherwise 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env not in (None, "") else DEFAULT_SEED


class RngStream:
    """A purpose-tagged PCG64 generator.

    Identical (seed, stream, draw index) gives identical values on every
    platform numpy supports. Not thread-safe; give each worker its own stream.
    """

    def __init__(self, seed: int, stream: str | int, sub: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = stream
        sid = STREAM_IDS[stream] if isinstance(stream, str) else int(stream)
        self.gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, sid, int(sub)])))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream!r})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def exponential(self, size=None):
        return self.gen.standard_exponential(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)
