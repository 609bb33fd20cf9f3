import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avarefresh.env import (CFNEnv, EnvConfig, Observation, RewardKind, UsageError,
                            observe_normalized, reward_of)
from avarefresh.metrics import MetricConfig
from avarefresh.sim import (ConfigError, DeterministicArrivals, DeterministicDelay,
                            ScriptedArrivals, SimConfig, SlotReport, WorldState)


def make_env(kind=RewardKind.AVA, arrivals=(), delay=3, c_max=4, episode_len=50, **kw):
    sim = SimConfig(c_max=c_max, arrival_model=ScriptedArrivals(tuple(arrivals)),
                    delay_model=DeterministicDelay(delay))
    return CFNEnv(EnvConfig(sim=sim, reward_kind=kind, episode_len=episode_len, **kw), seed=0)


def test_reset_observation():
    env = make_env()
    assert env.reset() == Observation(4, 4, 0, 0, 0)


def test_same_seed_same_trajectory():
    cfg = EnvConfig(sim=SimConfig(c_max=2), episode_len=300)
    actions = np.random.default_rng(5).integers(0, 2, 300)
    runs = []
    for _ in range(2):
        env = CFNEnv(cfg)
        env.reset(seed=11)
        runs.append([(env.step(int(a)).observation, env.sim.state.c) for a in actions])
    assert runs[0] == runs[1]


def test_reset_clears_counters():
    env = make_env(arrivals=(1, 2))
    env.reset()
    for _ in range(10):
        env.step(1)
    env.reset()
    assert env.t == 0 and env.metrics.total_updates == 0 and env.metrics.total_slots == 0


def test_dispatch_cost():
    env = make_env()
    env.reset()
    assert env.step(1).reward == pytest.approx(-0.5)


def test_busy_channel_request_is_free():
    env = make_env(delay=3)
    env.reset()
    env.step(1)
    res = env.step(1)
    assert res.reward == 0.0 and not res.info.update_dispatched
    assert res.observation.tau == 2


def test_ava_reward_on_arrival():
    # (c=0, c_hat=0), Upsilon=50 gives +phi(50)
    world = WorldState(slot=51, c=0, c_hat=0, last_qaoi=50)
    r = reward_of(RewardKind.AVA, world, SlotReport(slot=50, arrivals_at_ap=1), False, EnvConfig())
    assert r == pytest.approx(0.632121, abs=1e-6)


def test_quiet_slot_rewards():
    cfg = EnvConfig()
    world = WorldState(slot=10, c=4, c_hat=4)
    assert reward_of(RewardKind.AVA, world, SlotReport(slot=9), False, cfg) == 0.0
    assert reward_of(RewardKind.QAOI, world, SlotReport(slot=9), False, cfg) == 0.0
    assert reward_of(RewardKind.AOI, world, SlotReport(slot=9, aoi=100), False, cfg) == -1.0


def test_normalization_examples():
    cfg = EnvConfig()
    assert np.allclose(observe_normalized(Observation(4, 4, 0, 0, 0), cfg), [1, 1, 0, 0, 0])
    v = observe_normalized(Observation(0, 0, 100, 0, 0), cfg)
    assert v[2] == pytest.approx(1 - math.exp(-1), abs=1e-4)


@given(st.integers(0, 3000), st.integers(0, 3000))
def test_normalization_monotone(a, b):
    cfg = EnvConfig()
    va = observe_normalized(Observation(0, 0, a, 0, 0), cfg)[2]
    vb = observe_normalized(Observation(0, 0, b, 0, 0), cfg)[2]
    assert 0 <= va < 1
    if a < b:
        assert va <= vb


def test_episode_length():
    env = make_env(episode_len=7)
    env.reset()
    dones = [env.step(0).done for _ in range(7)]
    assert dones == [False] * 6 + [True]
    with pytest.raises(UsageError):
        env.step(0)


def test_step_before_reset():
    with pytest.raises(UsageError):
        make_env().step(0)


def test_bad_action():
    env = make_env()
    env.reset()
    with pytest.raises(ValueError):
        env.step(2)


def test_invalid_env_config():
    with pytest.raises(ConfigError):
        EnvConfig(episode_len=0).validate()
    with pytest.raises(ConfigError):
        EnvConfig(age_norm=0).validate()
    with pytest.raises(ValueError):
        EnvConfig(reward_kind="nope").validate()


def test_never_update_without_arrivals_scores_zero():
    env = make_env(episode_len=200)
    env.reset()
    assert sum(env.step(0).reward for _ in range(200)) == 0.0


def test_tau_observation_deterministic_delay():
    env = make_env(delay=5, episode_len=30)
    env.reset()
    taus = [env.step(a).observation.tau for a in [1] + [0] * 7]
    assert taus == [5, 4, 3, 2, 1, 0, 0, 0]


def test_tau_observation_stochastic_counts_up():
    cfg = EnvConfig(sim=SimConfig(), episode_len=20)
    env = CFNEnv(cfg, seed=1)
    env.reset()
    taus = [env.step(1 if i == 0 else 0).observation.tau for i in range(4)]
    # delays are at least 5 slots, so the update is still in flight
    assert taus == [1, 2, 3, 4]


def test_qaoi_hold_mode_keeps_last_sample():
    sim = SimConfig(arrival_model=ScriptedArrivals((10,)), delay_model=DeterministicDelay(3))
    env = CFNEnv(EnvConfig(sim=sim, metric=MetricConfig(qaoi_hold=True), episode_len=20))
    env.reset()
    ups = [env.step(0).observation.upsilon for _ in range(15)]
    assert ups[10:] == [10] * 5


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(list(RewardKind)), st.integers(1, 4), st.integers(5, 40),
       st.integers(0, 2**31), st.booleans())
def test_reward_bounded(kind, c_max, interval, seed, hold):
    sim = SimConfig(c_max=c_max, arrival_model=DeterministicArrivals(interval / 1000))
    cfg = EnvConfig(sim=sim, reward_kind=kind, metric=MetricConfig(qaoi_hold=hold), episode_len=400)
    env = CFNEnv(cfg, seed=seed)
    env.reset()
    rng = np.random.default_rng(seed)
    for _ in range(400):
        r = env.step(int(rng.random() < 0.2)).reward
        assert abs(r) <= 1 + cfg.update_cost


def test_vector_interface():
    env = make_env(arrivals=(3,))
    x = env.reset_vector()
    assert x.shape == (5,)
    x, r, done, info = env.step_vector(1)
    assert x.shape == (5,) and r == pytest.approx(-0.5) and not done
