"""PPO with a clipped surrogate, GAE and an entropy bonus, in plain numpy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .network import (PolicyParameters, backward, forward_batch, init_params, log_softmax,
                      zeros_like)

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """A loss or parameter became non-finite; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.995
    learning_rate: float = 3e-4
    total_steps: int = 500_000
    episode_len: int = 2000
    minibatch_size: int = 4000
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs_per_update: int = 10
    rollout_episodes_per_update: int = 4
    max_grad_norm: float = 0.5
    hidden: tuple = (64, 64)
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        from ..sim import ConfigError

        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("clip_ratio must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.episode_len < 1 or self.total_steps < 0:
            raise ConfigError("episode_len must be >= 1 and total_steps >= 0")
        if self.epochs_per_update < 1 or self.rollout_episodes_per_update < 1:
            raise ConfigError("epochs and rollout episodes per update must be >= 1")
        return self


@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def add(self, obs, action, log_prob, reward, value, done) -> None:
        self.obs.append(obs)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)

    def __len__(self) -> int:
        return len(self.rewards)

    def finish(self, gamma: float, lam: float, last_value: float = 0.0) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones, gamma, lam,
                                            last_value)

    def arrays(self) -> dict:
        if self.advantages is None:
            raise RuntimeError("advantages missing; call finish() first")
        return {
            "obs": np.asarray(self.obs, dtype=float),
            "actions": np.asarray(self.actions, dtype=np.int64),
            "log_probs": np.asarray(self.log_probs, dtype=float),
            "advantages": np.asarray(self.advantages, dtype=float),
            "returns": np.asarray(self.returns, dtype=float),
        }


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks that the episode ended after step ``t``; no value is
    bootstrapped across that boundary. ``last_value`` is the critic's value for
    the observation following the final step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    n = len(r)
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * next_value * nonterminal - v[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    centered = adv - adv.mean()
    std = centered.std()
    if std < 1e-12:
        return centered
    out = centered / std
    return out - out.mean()


def ppo_loss_and_grad(params: PolicyParameters, batch: dict, cfg: TrainConfig, need_grad: bool = True):
    """Clipped PPO loss (to be minimized) and its gradient.

    ``loss = -mean(min(rho*A, clip(rho)*A)) + value_coef*mean((G - V)^2) - entropy_coef*mean(H)``
    """
    obs = batch["obs"]
    acts = batch["actions"]
    adv = batch["advantages"]
    n = len(acts)
    logp, values, caches = forward_batch(params, obs)
    probs = np.exp(logp)
    rows = np.arange(n)
    logp_a = logp[rows, acts]
    ratio = np.exp(logp_a - batch["log_probs"])
    eps = cfg.clip_ratio
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    policy_loss = -np.minimum(unclipped, clipped).mean()
    entropy_each = -(probs * logp).sum(axis=1)
    entropy = entropy_each.mean()
    err = values - batch["returns"]
    value_loss = (err * err).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_fraction": float((np.abs(ratio - 1.0) > eps).mean()),
        "approx_kl": float(((ratio - 1.0) - np.log(ratio)).mean()),
    }
    if not need_grad:
        return loss, None, stats

    # the clipped branch has zero slope wherever it is the one selected
    active = unclipped <= clipped
    g_logp_a = np.where(active, -adv * ratio, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[rows, acts] = 1.0
    d_logits = g_logp_a[:, None] * (onehot - probs)
    d_logits += (cfg.entropy_coef / n) * probs * (logp + entropy_each[:, None])
    d_values = (2.0 * cfg.value_coef / n) * err
    grads = backward(params, caches, d_logits, d_values)
    return loss, grads, stats


class Adam:
    def __init__(self, params: PolicyParameters, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = zeros_like(params).arrays
        self.v = zeros_like(params).arrays
        self.t = 0

    def step(self, params: PolicyParameters, grads: PolicyParameters) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.arrays.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params.arrays[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: PolicyParameters, max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.arrays.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads.arrays.values():
            g *= scale
    return total


def ppo_update(params: PolicyParameters, optimizer: Adam, buffer: RolloutBuffer, cfg: TrainConfig,
               rng: np.random.Generator) -> dict:
    """Run ``epochs_per_update`` passes of minibatch Adam steps over one rollout.

    ``params`` is updated in place. Returns losses averaged over all minibatches.
    Raises :class:`TrainingDivergence` without touching ``params`` further if a
    loss or gradient turns non-finite.
    """
    data = buffer.arrays()
    data["advantages"] = normalize_advantages(data["advantages"])
    n = len(data["actions"])
    size = min(cfg.minibatch_size, n)
    totals: dict = {}
    count = 0
    for epoch in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, size):
            idx = order[start:start + size]
            batch = {k: v[idx] for k, v in data.items()}
            loss, grads, stats = ppo_loss_and_grad(params, batch, cfg)
            if not np.isfinite(loss) or not grads.is_finite():
                raise TrainingDivergence("non-finite PPO loss", {"epoch": epoch, **stats})
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(params, grads)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    if not params.is_finite():
        raise TrainingDivergence("non-finite parameters after update", totals)
    return {k: v / count for k, v in totals.items()}


def act_single(params: PolicyParameters, x: np.ndarray):
    """Probabilities and value for one observation vector (fast path, no checks)."""
    p = params.arrays
    h = np.tanh(x @ p["pi.w1"] + p["pi.b1"])
    h = np.tanh(h @ p["pi.w2"] + p["pi.b2"])
    logits = h @ p["pi.w_out"] + p["pi.b_out"]
    g = np.tanh(x @ p["vf.w1"] + p["vf.b1"])
    g = np.tanh(g @ p["vf.w2"] + p["vf.b2"])
    value = float(g @ p["vf.w_out"][:, 0] + p["vf.b_out"][0])
    logp = log_softmax(logits)
    return logp, value


def greedy_action(params: PolicyParameters, x: np.ndarray) -> int:
    p = params.arrays
    h = np.tanh(x @ p["pi.w1"] + p["pi.b1"])
    h = np.tanh(h @ p["pi.w2"] + p["pi.b2"])
    logits = h @ p["pi.w_out"] + p["pi.b_out"]
    return int(logits[1] > logits[0])


@dataclass
class CurvePoint:
    update_index: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float = 0.0


def train(env, cfg: TrainConfig, seed: int, params: Optional[PolicyParameters] = None,
          checkpoint_dir: Optional[Path] = None, checkpoint_hash: str = ""):
    """Collect whole episodes and run a PPO update every ``rollout_episodes_per_update`` of them.

    ``env`` needs ``reset_vector(seed=None)`` and ``step_vector(action)``.
    Returns ``(params, curve)`` where ``curve`` holds one point per update.
    Leftover episodes that do not fill a window are collected but not trained on.
    """
    cfg.validate()
    env_len = getattr(getattr(env, "cfg", None), "episode_len", cfg.episode_len)
    if env_len != cfg.episode_len:
        from ..sim import ConfigError

        raise ConfigError(f"env episode_len {env_len} != train episode_len {cfg.episode_len}")
    ss = np.random.SeedSequence(seed)
    init_ss, act_ss, batch_ss, env_ss = ss.spawn(4)
    x = env.reset_vector(seed=int(env_ss.generate_state(1)[0]))
    if params is None:
        params = init_params(np.random.default_rng(init_ss), len(x), *cfg.hidden)
    act_rng = np.random.default_rng(act_ss)
    batch_rng = np.random.default_rng(batch_ss)
    optimizer = Adam(params, cfg.learning_rate)
    n_episodes = cfg.total_steps // cfg.episode_len
    curve = []
    buffer = RolloutBuffer()
    window_returns = []
    for episode in range(n_episodes):
        if episode:
            x = env.reset_vector()
        ep_return = 0.0
        done = False
        while not done:
            logp, value = act_single(params, x)
            a = 1 if act_rng.random() < math.exp(logp[1]) else 0
            x_next, reward, done, _ = env.step_vector(a)
            buffer.add(x, a, logp[a], reward, value, done)
            ep_return += reward
            x = x_next
        window_returns.append(ep_return)
        if len(window_returns) == cfg.rollout_episodes_per_update:
            buffer.finish(cfg.gamma, cfg.gae_lambda)
            stats = ppo_update(params, optimizer, buffer, cfg, batch_rng)
            point = CurvePoint(len(curve), float(np.mean(window_returns)), stats["policy_loss"],
                               stats["value_loss"], stats["entropy"], stats["clip_fraction"])
            curve.append(point)
            log.debug("update %d: return %.3f entropy %.3f", point.update_index,
                      point.mean_return, point.entropy)
            buffer = RolloutBuffer()
            window_returns = []
            if checkpoint_dir is not None and cfg.checkpoint_every and len(curve) % cfg.checkpoint_every == 0:
                from .checkpoint import save_checkpoint

                save_checkpoint(params, Path(checkpoint_dir) / f"update_{len(curve):04d}.ckpt",
                                checkpoint_hash)
    return params, curve
