import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avarefresh.rl import (Adam, CheckpointError, ConfigHashWarning, RolloutBuffer, ShapeError,
                           TrainConfig, TrainingDivergence, forward, gae, init_params,
                           load_checkpoint, normalize_advantages, ppo_loss_and_grad, ppo_update,
                           save_checkpoint, train)
from avarefresh.rl.network import forward_batch, zeros_like
from avarefresh.sim import ConfigError

from oracles import TwoStateBandit, discounted_sums, fd_relative_error


def random_batch(rng, params, n=32, obs_dim=5, perturb=0.3):
    obs = rng.normal(size=(n, obs_dim))
    logp, _, _ = forward_batch(params, obs)
    actions = rng.integers(0, 2, n)
    old = logp[np.arange(n), actions] + rng.normal(scale=perturb, size=n)
    return {"obs": obs, "actions": actions, "log_probs": old,
            "advantages": rng.normal(size=n), "returns": rng.normal(size=n)}


# -- advantages ---------------------------------------------------------------------

def test_gae_lambda_zero_is_td():
    r = np.array([1.0, -0.5, 2.0, 0.3])
    v = np.array([0.2, 0.1, -0.4, 0.9])
    d = np.array([0, 0, 1, 0])
    adv, _ = gae(r, v, d, gamma=0.9, lam=0.0, last_value=0.7)
    v_next = np.array([0.1, -0.4, 0.0, 0.7])
    assert np.allclose(adv, r + 0.9 * v_next * (1 - d) - v)


def test_gae_gamma_zero():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.5, 0.5, 0.5])
    adv, _ = gae(r, v, [0, 0, 0], gamma=0.0, lam=0.95)
    assert np.allclose(adv, r - v)


def test_gae_matches_discounted_sums():
    rewards = [0.5] * 12
    adv, ret = gae(rewards, np.zeros(12), [0] * 11 + [1], gamma=0.97, lam=1.0)
    assert np.allclose(adv, discounted_sums(rewards, 0.97))
    assert np.allclose(ret, adv)


def test_gae_does_not_cross_episode_boundary():
    rewards = [1.0, 1.0, 5.0, 5.0]
    adv, _ = gae(rewards, np.zeros(4), [0, 1, 0, 1], gamma=0.9, lam=1.0)
    assert np.allclose(adv, discounted_sums(rewards[:2], 0.9) + discounted_sums(rewards[2:], 0.9))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
def test_advantage_normalization(xs):
    a = np.array(xs)
    out = normalize_advantages(a)
    assert abs(out.mean()) < 1e-9
    if a.std() > 1e-6 * max(1.0, np.abs(a).max()):
        assert abs(out.std() - 1.0) < 1e-6


# -- network -------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_probabilities(seed, x):
    params = init_params(np.random.default_rng(seed), 5, 8, 8)
    for arr in params.arrays.values():
        arr += np.random.default_rng(seed + 1).normal(scale=0.5, size=arr.shape)
    probs, _ = forward(params, np.array(x))
    logp, _, _ = forward_batch(params, np.array([x]))
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.allclose(np.exp(logp[0]), probs, atol=1e-9)


def test_zero_params_are_uniform():
    params = zeros_like(init_params(np.random.default_rng(0)))
    probs, value = forward(params, np.ones(5))
    assert np.allclose(probs, [0.5, 0.5]) and value == 0.0


def test_forward_deterministic_and_checked():
    params = init_params(np.random.default_rng(3))
    x = np.linspace(0, 1, 5)
    a, b = forward(params, x), forward(params, x)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    with pytest.raises(ValueError):
        forward(params, np.ones(4))
    with pytest.raises(ValueError):
        forward(params, np.array([0, 0, np.nan, 0, 0]))


# -- loss ------------------------------------------------------------------------------

def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(5):
        params = init_params(rng, 5, 8, 8)
        for arr in params.arrays.values():
            arr += rng.normal(scale=0.3, size=arr.shape)
        batch = random_batch(rng, params)
        cfg = TrainConfig(clip_ratio=0.2, entropy_coef=0.05)
        err = fd_relative_error(lambda p: ppo_loss_and_grad(p, batch, cfg)[:2], params)
        assert err < 1e-4, trial


def test_fresh_ratio_is_one():
    rng = np.random.default_rng(0)
    params = init_params(rng)
    batch = random_batch(rng, params, perturb=0.0)
    _, _, stats = ppo_loss_and_grad(params, batch, TrainConfig())
    assert stats["clip_fraction"] == 0.0
    assert stats["approx_kl"] == pytest.approx(0.0, abs=1e-12)


def test_zero_advantage_moves_only_value_and_entropy():
    rng = np.random.default_rng(1)
    params = init_params(rng)
    batch = random_batch(rng, params)
    batch["advantages"] = np.zeros_like(batch["advantages"])
    _, grads, stats = ppo_loss_and_grad(params, batch, TrainConfig(entropy_coef=0.0))
    assert stats["policy_loss"] == 0.0
    assert all(not grads.arrays[k].any() for k in grads.arrays if k.startswith("pi."))
    assert any(grads.arrays[k].any() for k in grads.arrays if k.startswith("vf."))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.5))
def test_clipped_objective_never_exceeds_either_branch(seed, eps):
    rng = np.random.default_rng(seed)
    params = init_params(rng, 5, 8, 8)
    batch = random_batch(rng, params, perturb=1.0)
    cfg = TrainConfig(clip_ratio=eps, entropy_coef=0.0, value_coef=0.0)
    loss, _, stats = ppo_loss_and_grad(params, batch, cfg, need_grad=False)
    logp, _, _ = forward_batch(params, batch["obs"])
    n = len(batch["actions"])
    ratio = np.exp(logp[np.arange(n), batch["actions"]] - batch["log_probs"])
    adv = batch["advantages"]
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    per_sample = np.minimum(ratio * adv, clipped)
    assert np.all(per_sample <= clipped + 1e-12)
    assert np.all(per_sample <= ratio * adv + 1e-12)
    assert stats["policy_loss"] == pytest.approx(-per_sample.mean(), abs=1e-12)


def test_adam_first_step_is_sign_times_lr():
    params = zeros_like(init_params(np.random.default_rng(0), 2, 4, 4))
    grads = zeros_like(params)
    grads.arrays["pi.b1"][:] = [3.0, -2.0, 0.5, 0.0]
    Adam(params, lr=0.1).step(params, grads)
    assert np.allclose(params.arrays["pi.b1"], [-0.1, 0.1, -0.1, 0.0], atol=1e-6)


def test_divergence_is_reported():
    rng = np.random.default_rng(0)
    params = init_params(rng, 2, 4, 4)
    buf = RolloutBuffer()
    for t in range(8):
        buf.add(np.ones(2), t % 2, np.log(0.5), float("nan"), 0.0, t == 7)
    buf.finish(0.99, 0.95)
    with pytest.raises(TrainingDivergence):
        ppo_update(params, Adam(params, 1e-3), buf, TrainConfig(minibatch_size=4), rng)


# -- training loop -------------------------------------------------------------------------

def bandit_cfg(**kw):
    base = dict(total_steps=2000, episode_len=10, minibatch_size=40)
    base.update(kw)
    return TrainConfig(**base)


def test_schedule_arithmetic():
    _, curve = train(TwoStateBandit(10), bandit_cfg(total_steps=20), seed=0)
    assert curve == []
    _, curve = train(TwoStateBandit(10), bandit_cfg(total_steps=20, rollout_episodes_per_update=2), seed=0)
    assert len(curve) == 1
    _, curve = train(TwoStateBandit(10), bandit_cfg(total_steps=95), seed=0)
    assert len(curve) == 2


def test_training_is_deterministic():
    a, ca = train(TwoStateBandit(10), bandit_cfg(), seed=4)
    b, cb = train(TwoStateBandit(10), bandit_cfg(), seed=4)
    assert a == b and ca == cb
    c, _ = train(TwoStateBandit(10), bandit_cfg(), seed=5)
    assert not a == c


def test_returns_improve_on_rewarding_env():
    gains = []
    for seed in range(5):
        _, curve = train(TwoStateBandit(10), bandit_cfg(total_steps=4000), seed=seed)
        rets = [p.mean_return for p in curve]
        gains.append(np.mean(rets[-10:]) - np.mean(rets[:10]))
    assert all(g > 0 for g in gains)


def test_bandit_converges():
    params, _ = train(TwoStateBandit(10), bandit_cfg(total_steps=20_000), seed=0)
    for x in ([1.0, 0.0], [0.0, 1.0]):
        assert forward(params, np.array(x))[0][1] > 0.95


def test_episode_length_mismatch():
    class Env(TwoStateBandit):
        class cfg:
            episode_len = 7
    with pytest.raises(ConfigError):
        train(Env(7), bandit_cfg(), seed=0)


def test_invalid_train_config():
    for bad in (dict(gamma=1.0), dict(clip_ratio=0.0), dict(minibatch_size=0), dict(gae_lambda=1.5)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_periodic_checkpoints(tmp_path):
    train(TwoStateBandit(10), bandit_cfg(total_steps=400, checkpoint_every=5), seed=0,
          checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["update_0005.ckpt", "update_0010.ckpt"]


# -- checkpoints --------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    params = init_params(np.random.default_rng(9))
    path = save_checkpoint(params, tmp_path / "p.ckpt", "abc")
    loaded = load_checkpoint(path, obs_dim=5, cfg_hash="abc")
    assert loaded == params
    assert all(np.array_equal(loaded.arrays[k], params.arrays[k]) for k in params.arrays)


def test_checkpoint_wrong_width(tmp_path):
    path = save_checkpoint(init_params(np.random.default_rng(0), 3), tmp_path / "p.ckpt")
    with pytest.raises(ShapeError):
        load_checkpoint(path, obs_dim=5)


def test_checkpoint_hash_mismatch_warns(tmp_path):
    path = save_checkpoint(init_params(np.random.default_rng(0)), tmp_path / "p.ckpt", "one")
    with pytest.warns(ConfigHashWarning):
        load_checkpoint(path, cfg_hash="two")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_checkpoint(path, cfg_hash="one")


def test_checkpoint_corrupt(tmp_path):
    path = save_checkpoint(init_params(np.random.default_rng(0)), tmp_path / "p.ckpt")
    raw = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(raw[:-8])
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a checkpoint")
    for name in ("trunc.ckpt", "junk.ckpt"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
