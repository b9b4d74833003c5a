"""Episodic PPO training loop, deterministic evaluation and policy checkpoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..arpo import ArpoSolution
from ..env import EpisodeLog, EnvState, RewardFn, UavEnv, obs_dim, observe, run_episode
from ..scenario import RngStream, Scenario
from .nets import GaussianPolicy, Mlp
from .update import RolloutBuffer, Sgd, UpdateConfig, ppo_update

CHECKPOINT_VERSION = "laenet-policy v1"


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    momentum: float = 0.0
    epochs: int = 10
    minibatch: int = 256
    steps_per_update: int = 2048
    episodes: int = 300
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    max_grad_norm: float | None = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.episodes < 1 or self.steps_per_update < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("episodes, steps_per_update, epochs and minibatch must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    def update_config(self) -> UpdateConfig:
        return UpdateConfig(self.gamma, self.lam, self.clip_eps, self.actor_lr, self.critic_lr, self.momentum,
                            self.epochs, self.minibatch, self.max_grad_norm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def desk_config(seed: int = 0, episodes: int = 300) -> TrainConfig:
    """Small-budget settings: short rollouts and momentum SGD so a few hundred episodes suffice."""
    return TrainConfig(steps_per_update=64, minibatch=32, actor_lr=3e-3, critic_lr=1e-2, momentum=0.9,
                       epochs=10, episodes=episodes, seed=seed)


@dataclass
class PpoAgent:
    """Acts with the policy mean (deterministic) or by sampling."""

    policy: GaussianPolicy
    deterministic: bool = True
    rng: np.random.Generator | None = None

    def act(self, state: EnvState) -> np.ndarray:
        obs = observe(state)
        if self.deterministic:
            return self.policy.mean_action(obs)
        return self.policy.sample(obs, self.rng)[0]


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: Mlp
    curve: list = field(default_factory=list)          # max latency of each training episode
    returns: list = field(default_factory=list)        # undiscounted return of each training episode
    updates: list = field(default_factory=list)        # ppo_update metrics

    def agent(self) -> PpoAgent:
        return PpoAgent(self.policy, deterministic=True)


def action_scale(scenario: Scenario) -> np.ndarray:
    p = scenario.phys
    return np.array([p.max_xy_step, p.max_xy_step, p.max_z_step])


def train(scenario: Scenario, solution: ArpoSolution, reward_fn: RewardFn, cfg: TrainConfig,
          on_episode: Callable[[int, EpisodeLog], None] | None = None) -> TrainResult:
    """Train a fresh policy; one curve point per episode.

    Updates happen at episode boundaries once at least ``steps_per_update``
    transitions are buffered, and once more after the last episode.
    """
    env = UavEnv(scenario, solution, reward_fn)
    dim = obs_dim(scenario.n_users)
    init_rng = RngStream(cfg.seed, "init").gen
    policy = GaussianPolicy.init(dim, action_scale(scenario), init_rng, cfg.hidden, cfg.init_log_std)
    value_net = Mlp.init((dim, *cfg.hidden, 1), init_rng, out_scale=1.0)
    act_rng = RngStream(cfg.seed, "policy").gen
    shuffle_rng = RngStream(cfg.seed, "sampling").gen
    ucfg = cfg.update_config()
    actor_opt = Sgd(cfg.actor_lr, cfg.momentum)
    critic_opt = Sgd(cfg.critic_lr, cfg.momentum)
    result = TrainResult(policy, value_net)
    buf = RolloutBuffer()
    for ep in range(cfg.episodes):
        state = env.reset(seed=cfg.seed * 100003 + ep)
        ep_return = 0.0
        while not env.done:
            obs = observe(state)
            action, u, logp = policy.sample(obs, act_rng)
            value = float(value_net(obs)[0])
            out = env.step(action)
            buf.add(obs, u, logp, out.reward, value, out.done)
            ep_return += out.reward
            state = out.state
        result.curve.append(env.log.max_latency)
        result.returns.append(ep_return)
        if on_episode is not None:
            on_episode(ep, env.log)
        if len(buf) >= cfg.steps_per_update or (ep == cfg.episodes - 1 and len(buf) > 0):
            result.updates.append(ppo_update(policy, value_net, buf, ucfg, shuffle_rng, actor_opt, critic_opt))
            buf = RolloutBuffer()
    return result


def evaluate_policy(scenario: Scenario, solution: ArpoSolution, policy, seeds=(0,),
                    reward_fn: RewardFn | None = None) -> list[EpisodeLog]:
    """Roll the policy out once per evaluation seed."""
    env = UavEnv(scenario, solution, reward_fn)
    logs = []
    for s in seeds:
        logs.append(run_episode(env, policy, seed=int(s)))
        env = UavEnv(scenario, solution, reward_fn)
    return logs


def mean_max_latency(logs) -> float:
    return float(np.mean([log.max_latency for log in logs]))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(policy: GaussianPolicy, path: str, meta: dict | None = None) -> None:
    """Text checkpoint: version line, JSON header line, then one repr float per line."""
    header = {
        "sizes": list(policy.mean_net.sizes),
        "n_params": int(len(policy.mean_net.params)),
        "n_log_std": int(len(policy.log_std)),
        "action_scale": [float(v) for v in policy.action_scale],
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_VERSION + "\n")
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for v in policy.flat:
            fh.write(repr(float(v)) + "\n")


def load_checkpoint(path: str) -> GaussianPolicy:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a policy checkpoint (expected {CHECKPOINT_VERSION!r})")
    header = json.loads(lines[1])
    values = np.array([float(x) for x in lines[2:]])
    if len(values) != header["n_params"] + header["n_log_std"]:
        raise ValueError(f"{path}: expected {header['n_params'] + header['n_log_std']} values, got {len(values)}")
    net = Mlp(tuple(header["sizes"]), values[:header["n_params"]])
    return GaussianPolicy(net, values[header["n_params"]:], np.asarray(header["action_scale"], float))
