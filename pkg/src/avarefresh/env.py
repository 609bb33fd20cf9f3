"""Episodic MDP wrapper around the simulator.

The agent sees ``(c, c_hat, upsilon, tau, iota)`` and chooses whether to
dispatch a status update. Rewards come in four flavours: the AVA score and
three age-minimizing baselines (AoI, AoP, QAoI). Baseline ages are divided by
``age_norm`` and clipped at 1 so every per-slot reward stays within
``[-1 - update_cost, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .metrics import AoITracker, MetricConfig, aop, ava
from .sim import ConfigError, DeterministicDelay, SimConfig, SlotReport, Simulator, WorldState

OBS_DIM = 5
AGE_SQUASH_SLOTS = 100.0


class RewardKind(str, Enum):
    AVA = "AVA"
    AOI = "AoI"
    AOP = "AoP"
    QAOI = "QAoI"


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    reward_kind: RewardKind = RewardKind.AVA
    update_cost: float = 0.5
    episode_len: int = 2000
    age_norm: float = 100.0
    obs_mask: tuple = (True, True, True, True, True)

    def validate(self) -> "EnvConfig":
        self.sim.validate()
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if self.update_cost < 0:
            raise ConfigError("update_cost must be non-negative")
        if not self.age_norm > 0:
            raise ConfigError("age_norm must be positive")
        if len(self.obs_mask) != OBS_DIM:
            raise ConfigError(f"obs_mask needs {OBS_DIM} entries")
        RewardKind(self.reward_kind)
        return self


@dataclass(frozen=True)
class Observation:
    c: int
    c_hat: int
    upsilon: int
    tau: int
    iota: int


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: SlotReport


def observation_of(world: WorldState, sim_cfg: SimConfig) -> Observation:
    upd = world.update_in_flight
    if upd is None:
        tau = 0
    elif isinstance(sim_cfg.delay_model, DeterministicDelay):
        tau = upd.slots_remaining
    else:
        # true remaining delay is hidden; report time since dispatch instead
        tau = world.slot - upd.dispatch_slot
    return Observation(world.c, world.c_hat, world.last_qaoi, tau, world.slots_since_last_arrival)


def _squash(x: float) -> float:
    return 1.0 - math.exp(-x / AGE_SQUASH_SLOTS)


def observe_normalized(obs: Observation, cfg: EnvConfig) -> np.ndarray:
    c_max = cfg.sim.c_max
    vec = np.array([obs.c / c_max, obs.c_hat / c_max, _squash(obs.upsilon),
                    _squash(obs.tau), _squash(obs.iota)])
    if not all(cfg.obs_mask):
        vec = vec * np.asarray(cfg.obs_mask, dtype=float)
    return vec


def reward_of(kind: RewardKind, world: WorldState, report: SlotReport, dispatched: bool,
              cfg: EnvConfig) -> float:
    cost = cfg.update_cost if dispatched else 0.0
    if kind == RewardKind.AVA:
        return ava(world.c, world.c_hat, world.last_qaoi, cfg.metric) - cost
    if kind == RewardKind.AOI:
        return -min(report.aoi / cfg.age_norm, 1.0) - cost
    if kind == RewardKind.QAOI:
        if not report.arrivals_at_ap:
            return -cost
        return -min(world.last_qaoi / cfg.age_norm, 1.0) - cost
    if kind == RewardKind.AOP:
        age = aop(AoITracker(world.last_update_reception_slot), report.slot,
                  cfg.sim.mean_service_slots)
        return -min(age / cfg.age_norm, 1.0) - cost
    raise ValueError(f"unknown reward kind {kind!r}")


class CFNEnv:
    """Single-instance environment with a ``reset``/``step`` contract.

    ``reset(seed)`` re-seeds the episode stream; ``reset()`` without a seed
    starts the next episode from the same stream, so consecutive training
    episodes differ but the whole run stays reproducible.
    """

    def __init__(self, cfg: EnvConfig, seed: Optional[int] = None):
        self.cfg = cfg.validate()
        self.kind = RewardKind(cfg.reward_kind)
        self._episodes = np.random.default_rng(cfg.sim.rng_seed if seed is None else seed)
        self.sim: Optional[Simulator] = None
        self.t = 0
        self.done = True

    def reset(self, seed: Optional[int] = None) -> Observation:
        if seed is not None:
            self._episodes = np.random.default_rng(seed)
        episode_seed = int(self._episodes.integers(2**63))
        self.sim = Simulator(self.cfg.sim, seed=episode_seed, qaoi_hold=self.cfg.metric.qaoi_hold)
        self.t = 0
        self.done = False
        return self.observation()

    def observation(self) -> Observation:
        if self.sim is None:
            raise UsageError("call reset() first")
        return observation_of(self.sim.state, self.cfg.sim)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise UsageError("episode finished; call reset()")
        if action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {action!r}")
        report = self.sim.step(action)
        reward = reward_of(self.kind, self.sim.state, report, report.update_dispatched, self.cfg)
        self.t += 1
        self.done = self.t >= self.cfg.episode_len
        return StepResult(self.observation(), reward, self.done, report)

    def normalize(self, obs: Observation) -> np.ndarray:
        return observe_normalized(obs, self.cfg)

    # Vector form of the contract, used by the trainer and the stdio server.

    def reset_vector(self, seed: Optional[int] = None) -> np.ndarray:
        return self.normalize(self.reset(seed))

    def step_vector(self, action: int) -> tuple:
        res = self.step(action)
        return self.normalize(res.observation), res.reward, res.done, res.info

    @property
    def metrics(self):
        return self.sim.metrics
