"""Actor-critic MLP with analytic gradients.

Two tanh towers read the same observation: the actor ends in two action logits,
the critic in a scalar value. Parameters live in an ordered dict so that they
serialize in a fixed layer order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ACTIONS = 2

LAYER_ORDER = (
    "pi.w1", "pi.b1", "pi.w2", "pi.b2", "pi.w_out", "pi.b_out",
    "vf.w1", "vf.b1", "vf.w2", "vf.b2", "vf.w_out", "vf.b_out",
)


@dataclass
class PolicyParameters:
    arrays: dict

    @property
    def obs_dim(self) -> int:
        return self.arrays["pi.w1"].shape[0]

    @property
    def hidden(self) -> tuple:
        return self.arrays["pi.w1"].shape[1], self.arrays["pi.w2"].shape[1]

    def copy(self) -> "PolicyParameters":
        return PolicyParameters({k: v.copy() for k, v in self.arrays.items()})

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.arrays.items()}

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in LAYER_ORDER])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParameters) or self.shapes() != other.shapes():
            return False
        return all(np.array_equal(self.arrays[k], other.arrays[k]) for k in LAYER_ORDER)


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(rng: np.random.Generator, obs_dim: int = 5, h1: int = 64, h2: int = 64) -> PolicyParameters:
    g = np.sqrt(2.0)
    arrays = {}
    for tower, out_dim, out_gain in (("pi", N_ACTIONS, 0.01), ("vf", 1, 1.0)):
        arrays[f"{tower}.w1"] = _orthogonal(rng, obs_dim, h1, g)
        arrays[f"{tower}.b1"] = np.zeros(h1)
        arrays[f"{tower}.w2"] = _orthogonal(rng, h1, h2, g)
        arrays[f"{tower}.b2"] = np.zeros(h2)
        arrays[f"{tower}.w_out"] = _orthogonal(rng, h2, out_dim, out_gain)
        arrays[f"{tower}.b_out"] = np.zeros(out_dim)
    return PolicyParameters({k: arrays[k] for k in LAYER_ORDER})


def zeros_like(params: PolicyParameters) -> PolicyParameters:
    return PolicyParameters({k: np.zeros_like(v) for k, v in params.arrays.items()})


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _tower(p: dict, name: str, x: np.ndarray):
    h1 = np.tanh(x @ p[f"{name}.w1"] + p[f"{name}.b1"])
    h2 = np.tanh(h1 @ p[f"{name}.w2"] + p[f"{name}.b2"])
    out = h2 @ p[f"{name}.w_out"] + p[f"{name}.b_out"]
    return out, (x, h1, h2)


def _tower_backward(p: dict, name: str, cache, d_out: np.ndarray, grads: dict) -> None:
    x, h1, h2 = cache
    grads[f"{name}.w_out"] = h2.T @ d_out
    grads[f"{name}.b_out"] = d_out.sum(axis=0)
    dz2 = (d_out @ p[f"{name}.w_out"].T) * (1.0 - h2 * h2)
    grads[f"{name}.w2"] = h1.T @ dz2
    grads[f"{name}.b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ p[f"{name}.w2"].T) * (1.0 - h1 * h1)
    grads[f"{name}.w1"] = x.T @ dz1
    grads[f"{name}.b1"] = dz1.sum(axis=0)


def forward_batch(params: PolicyParameters, obs: np.ndarray):
    """Return ``(log_probs [N, 2], values [N], caches)`` for a batch of observations."""
    p = params.arrays
    logits, pi_cache = _tower(p, "pi", obs)
    values, vf_cache = _tower(p, "vf", obs)
    return log_softmax(logits), values[:, 0], (pi_cache, vf_cache)


def forward(params: PolicyParameters, obs_vector) -> tuple:
    """Action probabilities and state value for a single observation."""
    x = np.asarray(obs_vector, dtype=float)
    if x.shape != (params.obs_dim,):
        raise ValueError(f"expected observation of length {params.obs_dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("observation contains non-finite values")
    logp, values, _ = forward_batch(params, x[None, :])
    return np.exp(logp[0]), float(values[0])


def backward(params: PolicyParameters, caches, d_logits: np.ndarray, d_values: np.ndarray) -> PolicyParameters:
    """Backpropagate loss gradients w.r.t. logits [N, 2] and values [N] to every parameter."""
    p = params.arrays
    grads = {}
    _tower_backward(p, "pi", caches[0], d_logits, grads)
    _tower_backward(p, "vf", caches[1], d_values[:, None], grads)
    return PolicyParameters({k: grads[k] for k in LAYER_ORDER})
