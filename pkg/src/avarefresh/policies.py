"""Update policies evaluated by the harness: learned PPO actors and simple heuristics."""
from __future__ import annotations

from typing import Optional

from .env import OBS_DIM, EnvConfig, Observation, observe_normalized
from .metrics import MetricConfig, ava
from .rl.checkpoint import load_checkpoint
from .rl.network import PolicyParameters
from .rl.ppo import greedy_action
from .sim import ConfigError


class Policy:
    name = "policy"

    def reset(self) -> None:
        pass

    def act(self, obs: Observation) -> int:
        raise NotImplementedError


class AlwaysUpdate(Policy):
    name = "always"

    def act(self, obs):
        return 1


class NeverUpdate(Policy):
    name = "never"

    def act(self, obs):
        return 0


class Periodic(Policy):
    """Requests an update on every ``period``-th slot, starting at slot 0."""

    def __init__(self, period: int):
        if period < 1:
            raise ConfigError("period must be >= 1")
        self.period = int(period)
        self.slot = 0

    @property
    def name(self):
        return f"periodic-{self.period}"

    def reset(self):
        self.slot = 0

    def act(self, obs):
        a = int(self.slot % self.period == 0)
        self.slot += 1
        return a


class GreedyThreshold(Policy):
    """Myopic rule: update whenever the current AVA score falls below ``theta``."""

    def __init__(self, theta: float, metric: MetricConfig = MetricConfig()):
        if not -1.0 <= theta <= 1.0:
            raise ConfigError("theta must lie in [-1, 1]")
        self.theta = theta
        self.metric = metric

    @property
    def name(self):
        return f"threshold-{self.theta:g}"

    def act(self, obs):
        return int(ava(obs.c, obs.c_hat, obs.upsilon, self.metric) < self.theta)


class Learned(Policy):
    """Greedy (argmax) action of a trained actor."""

    name = "learned"

    def __init__(self, params: PolicyParameters, env_cfg: EnvConfig):
        if params.obs_dim != OBS_DIM:
            raise ConfigError(f"policy takes {params.obs_dim} inputs, environment emits {OBS_DIM}")
        self.params = params
        self.env_cfg = env_cfg

    @classmethod
    def from_checkpoint(cls, path, env_cfg: EnvConfig, cfg_hash: Optional[str] = None) -> "Learned":
        return cls(load_checkpoint(path, obs_dim=OBS_DIM, cfg_hash=cfg_hash), env_cfg)

    def act(self, obs):
        return greedy_action(self.params, observe_normalized(obs, self.env_cfg))


def act(policy: Policy, obs: Observation) -> int:
    return policy.act(obs)


def make_policy(spec: str, env_cfg: Optional[EnvConfig] = None) -> Policy:
    """Build a policy from ``always``, ``never``, ``periodic:<slots>``, ``threshold:<theta>``
    or ``learned:<checkpoint path>``."""
    kind, _, arg = spec.partition(":")
    env_cfg = env_cfg or EnvConfig()
    if kind == "always":
        return AlwaysUpdate()
    if kind == "never":
        return NeverUpdate()
    if kind == "periodic":
        return Periodic(int(arg))
    if kind == "threshold":
        return GreedyThreshold(float(arg), env_cfg.metric)
    if kind == "learned":
        return Learned.from_checkpoint(arg, env_cfg)
    raise ConfigError(f"unknown policy {spec!r}")
