"""Clipped-surrogate policy optimization on the hand-rolled networks.

The loss is the usual PPO objective: clipped policy term, entropy bonus, and
a squared-error value term. Because the networks expose gradients only
through backward(dmu, dsigma, dvalue), this module derives those three
gradients analytically from the loss; `ppo_loss_and_grads` is the single
source of that math for both training and the finite-difference tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    rollout_steps: int = 2048
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reward_scale: float = 1.0       # applied before advantage estimation
    target_kl: Optional[float] = None   # stop an update's epochs beyond this


# -- gaussian policy ----------------------------------------------------------


def gaussian_logp(actions: np.ndarray, mu: np.ndarray,
                  sigma: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over action dimensions."""
    z = (actions - mu) / sigma
    return np.sum(-0.5 * z * z - np.log(sigma) - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(sigma: np.ndarray) -> np.ndarray:
    """Differential entropy per sample, summed over action dimensions."""
    return np.sum(np.log(sigma) + 0.5 * (1.0 + LOG_2PI), axis=-1)


def sample_action(mu: np.ndarray, sigma: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    return mu + sigma * rng.standard_normal(mu.shape)


# -- advantage estimation --------------------------------------------------------


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_value: float, gamma: float,
                lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    `dones[t]` marks a terminal transition at step t; bootstrapping stops
    there. `last_value` bootstraps the step after the rollout.
    """
    T = len(rewards)
    adv = np.zeros(T)
    next_value = last_value
    acc = 0.0
    for t in range(T - 1, -1, -1):
        cont = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * next_value * cont - values[t]
        acc = delta + gamma * lam * cont * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


# -- rollout storage ---------------------------------------------------------------


class RolloutBuffer:
    """Fixed-length on-policy storage; observations are tuples of arrays."""

    def __init__(self, steps: int, obs_shapes: Sequence[Tuple[int, ...]],
                 action_dim: int, obs_dtypes: Optional[Sequence] = None):
        self.steps = steps
        dtypes = obs_dtypes or [np.float32] * len(obs_shapes)
        self.obs = [np.zeros((steps, *shape), dtype=dt)
                    for shape, dt in zip(obs_shapes, dtypes)]
        self.actions = np.zeros((steps, action_dim), dtype=np.float32)
        self.logps = np.zeros(steps)
        self.rewards = np.zeros(steps)
        self.dones = np.zeros(steps, dtype=bool)
        self.values = np.zeros(steps)
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos >= self.steps

    def add(self, obs_parts: Sequence[np.ndarray], action: np.ndarray,
            logp: float, reward: float, done: bool, value: float) -> None:
        if self.full:
            raise RuntimeError("rollout buffer full")
        for store, part in zip(self.obs, obs_parts):
            store[self.pos] = part
        self.actions[self.pos] = action
        self.logps[self.pos] = logp
        self.rewards[self.pos] = reward
        self.dones[self.pos] = done
        self.values[self.pos] = value
        self.pos += 1

    def reset(self) -> None:
        self.pos = 0


# -- optimizer ------------------------------------------------------------------------


class Adam:
    def __init__(self, params: Dict[str, "np.ndarray"], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self, params: Dict[str, "np.ndarray"]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.value.dtype)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        for k in self.m:
            self.m[k] = arrays[f"m.{k}"].astype(self.m[k].dtype, copy=True)
            self.v[k] = arrays[f"v.{k}"].astype(self.v[k].dtype, copy=True)


def clip_grad_norm(params: Dict[str, "np.ndarray"], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            p.grad *= scale
    return norm


# -- loss -------------------------------------------------------------------------------


@dataclass
class PpoStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float = 0.0


def ppo_loss_and_grads(mu: np.ndarray, sigma: np.ndarray, value: np.ndarray,
                       actions: np.ndarray, logp_old: np.ndarray,
                       advantages: np.ndarray, returns: np.ndarray,
                       config: PpoConfig
                       ) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray, PpoStats]:
    """Scalar loss plus gradients with respect to the network outputs."""
    B = mu.shape[0]
    eps = config.clip
    logp = gaussian_logp(actions, mu, sigma)
    ratio = np.exp(logp - logp_old)
    s_plain = ratio * advantages
    s_clip = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    policy_loss = -float(np.mean(np.minimum(s_plain, s_clip)))
    value_err = value - returns
    value_loss = float(np.mean(value_err ** 2))
    entropy = float(np.mean(gaussian_entropy(sigma)))
    loss = (policy_loss + config.value_coef * value_loss
            - config.entropy_coef * entropy)

    # policy gradient flows only where the unclipped branch is active
    active = (s_plain <= s_clip).astype(mu.dtype)
    dlogp = -(ratio * advantages * active) / B
    z = (actions - mu) / sigma
    dmu = dlogp[:, None] * (z / sigma)
    dsigma = dlogp[:, None] * ((z * z - 1.0) / sigma)
    dsigma -= config.entropy_coef / (sigma * B)
    dvalue = config.value_coef * 2.0 * value_err / B

    stats = PpoStats(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        approx_kl=float(np.mean(logp_old - logp)),
    )
    return loss, dmu, dsigma, dvalue, stats


# -- trainer -----------------------------------------------------------------------------


class PpoTrainer:
    def __init__(self, net, config: PpoConfig, rng: np.random.Generator):
        self.net = net
        self.config = config
        self.rng = rng
        self.adam = Adam(net.params(), lr=config.learning_rate,
                         beta1=config.adam_beta1, beta2=config.adam_beta2,
                         eps=config.adam_eps)

    def update(self, obs_parts: Sequence[np.ndarray], actions: np.ndarray,
               logp_old: np.ndarray, advantages: np.ndarray,
               returns: np.ndarray) -> PpoStats:
        cfg = self.config
        n = len(actions)
        adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
        agg: List[PpoStats] = []
        for _ in range(cfg.epochs):
            if (cfg.target_kl is not None and agg
                    and agg[-1].approx_kl > 1.5 * cfg.target_kl):
                break
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start:start + cfg.minibatch_size]
                mu, sigma, value = self.net.forward(
                    *[part[idx] for part in obs_parts])
                _, dmu, dsigma, dvalue, stats = ppo_loss_and_grads(
                    mu, sigma, value, actions[idx], logp_old[idx], adv[idx],
                    returns[idx], cfg)
                self.net.zero_grads()
                self.net.backward(dmu.astype(mu.dtype),
                                  dsigma.astype(mu.dtype),
                                  dvalue.astype(mu.dtype))
                stats.grad_norm = clip_grad_norm(self.net.params(),
                                                 cfg.max_grad_norm)
                self.adam.step(self.net.params())
                agg.append(stats)
        return PpoStats(
            policy_loss=float(np.mean([s.policy_loss for s in agg])),
            value_loss=float(np.mean([s.value_loss for s in agg])),
            entropy=float(np.mean([s.entropy for s in agg])),
            clip_fraction=float(np.mean([s.clip_fraction for s in agg])),
            approx_kl=float(np.mean([s.approx_kl for s in agg])),
            grad_norm=float(np.mean([s.grad_norm for s in agg])),
        )
