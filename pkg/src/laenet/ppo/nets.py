"""Fully connected tanh networks over a flat parameter vector, with analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_LOG_2PI = math.log(2.0 * math.pi)


def param_count(sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    params: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        n = param_count(self.sizes)
        if self.params is None:
            self.params = np.zeros(n)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, out_scale: float = 1.0) -> "Mlp":
        """Scaled-normal weights (1/sqrt(fan_in)), zero biases; last layer scaled by out_scale."""
        net = cls(tuple(sizes))
        layers = net._views(net.params)
        for k, (w, b) in enumerate(layers):
            scale = 1.0 / math.sqrt(w.shape[0])
            if k == len(layers) - 1:
                scale *= out_scale
            w[...] = rng.standard_normal(w.shape) * scale
        return net

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.params.copy())

    def _views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[off:off + a * b].reshape(a, b)
            off += a * b
            bias = flat[off:off + b]
            off += b
            out.append((w, bias))
        return out

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        x2 = x[None, :] if squeeze else x
        if x2.shape[-1] != self.sizes[0]:
            raise ValueError(f"input dimension {x2.shape[-1]} != {self.sizes[0]}")
        return x2

    def forward(self, x: np.ndarray, keep: bool = False):
        """Outputs for a batch (or single row); with keep=True also returns activations for backward."""
        squeeze = np.asarray(x).ndim == 1
        h = self._check(x)
        acts = [h]
        layers = self._views(self.params)
        for k, (w, b) in enumerate(layers):
            h = h @ w + b
            if k < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        out = h[0] if squeeze else h
        return (out, acts) if keep else out

    __call__ = forward

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """Parameter gradient of sum(grad_out * output) given activations from forward(keep=True)."""
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        layers = self._views(self.params)
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            gw, gb = gviews[k]
            inp = acts[k]
            gw[...] = inp.T @ g
            gb[...] = g.sum(axis=0)
            if k > 0:
                g = (g @ w.T) * (1.0 - acts[k] ** 2)
        return grad


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian in pre-squash space; actions are tanh(u) * scale."""

    mean_net: Mlp
    log_std: np.ndarray
    action_scale: np.ndarray

    @classmethod
    def init(cls, obs_dim: int, action_scale: Sequence[float], rng: np.random.Generator,
             hidden: Sequence[int] = (64, 64), init_log_std: float = -0.5) -> "GaussianPolicy":
        scale = np.asarray(action_scale, dtype=float)
        net = Mlp.init((obs_dim, *hidden, len(scale)), rng, out_scale=0.01)
        return cls(net, np.full(len(scale), float(init_log_std)), scale)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy(), self.action_scale.copy())

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.mean_net.params, self.log_std])

    def set_flat(self, flat: np.ndarray) -> None:
        n = len(self.mean_net.params)
        self.mean_net.params = np.asarray(flat[:n], dtype=float).copy()
        self.log_std = np.clip(np.asarray(flat[n:], dtype=float), LOG_STD_MIN, LOG_STD_MAX)

    def clamped_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
        """(action, pre-squash u, log-prob of the action)."""
        mu = self.mean_net(obs)
        std = np.exp(self.clamped_log_std())
        u = mu + std * rng.standard_normal(mu.shape)
        return self.squash(u), u, float(self.log_prob(obs, u))

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.squash(self.mean_net(obs))

    def squash(self, u: np.ndarray) -> np.ndarray:
        return np.tanh(u) * self.action_scale

    def log_prob(self, obs: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Log density of the squashed, scaled action whose pre-image is u."""
        mu = self.mean_net(obs)
        return _log_prob(mu, self.clamped_log_std(), np.asarray(u, float), self.action_scale)

    def log_prob_and_grad(self, obs: np.ndarray, u: np.ndarray, weight: np.ndarray):
        """Log-probs and the gradient of sum(weight * logp) w.r.t. (net params, log_std)."""
        mu, acts = self.mean_net.forward(obs, keep=True)
        mu = np.atleast_2d(mu)
        u = np.atleast_2d(np.asarray(u, float))
        ls = self.clamped_log_std()
        logp = _log_prob(mu, ls, u, self.action_scale)
        z = (u - mu) / np.exp(ls)
        w = np.asarray(weight, float).reshape(-1, 1)
        g_mu = w * z / np.exp(ls)
        g_net = self.mean_net.backward(acts, g_mu)
        free = (self.log_std >= LOG_STD_MIN) & (self.log_std <= LOG_STD_MAX)
        g_ls = (w * (z * z - 1.0)).sum(axis=0) * free
        return logp, np.concatenate([g_net, g_ls])


def _log_prob(mu: np.ndarray, log_std: np.ndarray, u: np.ndarray, scale: np.ndarray) -> np.ndarray:
    z = (u - mu) / np.exp(log_std)
    gauss = -0.5 * z * z - log_std - 0.5 * _LOG_2PI
    # log |d(scale * tanh u)/du| = log scale + log(1 - tanh^2 u), stable form
    log_det = np.log(scale) + 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return np.sum(gauss - log_det, axis=-1)
