"""GAE, rollout storage and the clipped-surrogate update."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .nets import GaussianPolicy, Mlp


class NonFiniteLoss(FloatingPointError):
    """The update produced a NaN/inf loss or gradient; parameters were left untouched."""


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns (advantages + values).

    ``last_value`` bootstraps the step after the final one when it is not terminal.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not (len(r) == len(v) == len(d)):
        raise ValueError(f"length mismatch: rewards {len(r)}, values {len(v)}, dones {len(d)}")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    if len(r) == 0:
        return np.zeros(0), np.zeros(0)
    adv, ret = kernels.gae(r, v, d, float(gamma), float(lam), float(last_value))
    return np.asarray(adv), np.asarray(ret)


def normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return x - x.mean() if len(x) else x
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    u: list = field(default_factory=list)          # pre-squash actions
    logp: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)      # 1 where the episode ended with this step
    last_value: float = 0.0                        # bootstrap if the final step is mid-episode

    def add(self, obs, u, logp, reward, value, done) -> None:
        self.obs.append(np.asarray(obs, float))
        self.u.append(np.asarray(u, float))
        self.logp.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(1.0 if done else 0.0)

    def __len__(self) -> int:
        return len(self.rewards)

    def advantages(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        # Episode boundaries are carried by the done flags, so advantages never cross them.
        return gae(self.rewards, self.values, self.dones, gamma, lam, self.last_value)


@dataclass
class Sgd:
    """Plain gradient descent with optional heavy-ball momentum."""

    lr: float
    momentum: float = 0.0
    velocity: np.ndarray | None = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.momentum > 0:
            if self.velocity is None:
                self.velocity = np.zeros_like(params)
            self.velocity = self.momentum * self.velocity + grad
            grad = self.velocity
        return params - self.lr * grad


def clip_grad(g: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return g
    n = float(np.linalg.norm(g))
    return g * (max_norm / n) if n > max_norm else g


def value_loss_and_grad(net: Mlp, obs: np.ndarray, returns: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error to returns and its parameter gradient."""
    v, acts = net.forward(obs, keep=True)
    err = v[:, 0] - returns
    loss = float(np.mean(err * err))
    g_out = (2.0 / len(err)) * err[:, None]
    return loss, net.backward(acts, g_out)


def surrogate_loss_and_grad(policy: GaussianPolicy, obs: np.ndarray, u: np.ndarray, logp_old: np.ndarray,
                            adv: np.ndarray, clip_eps: float) -> tuple[float, np.ndarray, dict]:
    """-mean(min(ratio A, clip(ratio) A)) and its gradient w.r.t. the policy's flat parameters."""
    logp = policy.log_prob(obs, u)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    s1 = ratio * adv
    s2 = clipped * adv
    loss = -float(np.mean(np.minimum(s1, s2)))
    # The unclipped branch carries gradient where it is the active minimum.
    active = s1 <= s2
    weight = -(active * ratio * adv) / len(adv)
    _, grad = policy.log_prob_and_grad(obs, u, weight)
    info = {
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
    }
    return loss, grad, info


@dataclass
class UpdateConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    momentum: float = 0.0
    epochs: int = 10
    minibatch: int = 256
    max_grad_norm: float | None = 0.5


def ppo_update(policy: GaussianPolicy, value_net: Mlp, buf: RolloutBuffer, cfg: UpdateConfig,
               rng: np.random.Generator, actor_opt: Sgd | None = None, critic_opt: Sgd | None = None) -> dict:
    """Clipped-surrogate actor step and MSE critic step over shuffled minibatches."""
    if len(buf) == 0:
        raise ValueError("empty rollout buffer")
    actor_opt = actor_opt or Sgd(cfg.actor_lr, cfg.momentum)
    critic_opt = critic_opt or Sgd(cfg.critic_lr, cfg.momentum)
    obs = np.stack(buf.obs)
    u = np.stack(buf.u)
    logp_old = np.asarray(buf.logp)
    adv_raw, returns = buf.advantages(cfg.gamma, cfg.lam)
    adv = normalize(adv_raw)
    n = len(adv)
    mb = max(1, min(cfg.minibatch, n))
    a_losses, c_losses, kls, clips = [], [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            a_loss, a_grad, info = surrogate_loss_and_grad(policy, obs[idx], u[idx], logp_old[idx], adv[idx],
                                                           cfg.clip_eps)
            c_loss, c_grad = value_loss_and_grad(value_net, obs[idx], returns[idx])
            if not (math.isfinite(a_loss) and math.isfinite(c_loss)
                    and np.all(np.isfinite(a_grad)) and np.all(np.isfinite(c_grad))):
                raise NonFiniteLoss(f"non-finite loss (actor={a_loss}, critic={c_loss})")
            policy.set_flat(actor_opt.step(policy.flat, clip_grad(a_grad, cfg.max_grad_norm)))
            value_net.params = critic_opt.step(value_net.params, clip_grad(c_grad, cfg.max_grad_norm))
            a_losses.append(a_loss)
            c_losses.append(c_loss)
            kls.append(info["approx_kl"])
            clips.append(info["clip_frac"])
    return {
        "actor_loss": float(np.mean(a_losses)),
        "critic_loss": float(np.mean(c_losses)),
        "approx_kl": float(np.mean(kls)),
        "clip_frac": float(np.mean(clips)),
        "adv_mean": float(adv.mean()),
        "adv_std": float(adv.std()),
        "samples": n,
    }
