"""Dense ReLU networks with hand-rolled reverse-mode gradients and Adam.

Everything is plain numpy (float64). Parameters live in flat lists of arrays
(weights interleaved with biases, input to output) so the optimizer, the
checkpoint format, and the gradient checker all share one layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Mlp:
    """Fully connected net: ReLU hidden layers, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(layer_dims: list[int], rng: np.random.Generator) -> Mlp:
    """Uniform Kaiming-style init, W ~ U(+-sqrt(6/fan_in)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on a single input (in,) or a batch (N, in)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} != net input dim {net.weights[0].shape[0]}")
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def _forward_cached(net: Mlp, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop; batch input only."""
    acts = [x]
    pre = []
    h = x
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = h @ w + b
        pre.append(a)
        h = np.maximum(a, 0.0) if i < n_layers - 1 else a
        acts.append(h)
    return h, acts, pre


def grad(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of sum(upstream * output) w.r.t. every parameter.

    x may be (in,) or (N, in); upstream must match the output shape. Returns
    arrays in the same layout as Mlp.params().
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    ub = upstream[None, :] if single else upstream
    _, acts, pre = _forward_cached(net, xb)
    if ub.shape != (xb.shape[0], net.weights[-1].shape[1]):
        raise ValueError(f"upstream shape {upstream.shape} does not match output")

    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    delta = ub
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list[np.ndarray]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """Standard Adam update, mutating params and state in place."""
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(
                f"non-finite gradient in parameter {i}: "
                f"{np.count_nonzero(~np.isfinite(g))} bad entries of shape {g.shape}"
            )
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)


@dataclass
class GaussianPolicy:
    """State-dependent mean from an MLP; one global log-sigma per action dim."""

    mean_net: Mlp
    log_sigma: np.ndarray

    def params(self) -> list[np.ndarray]:
        return self.mean_net.params() + [self.log_sigma]


def init_policy(obs_dim: int, act_dim: int, hidden: int, rng: np.random.Generator,
                sigma_init: float = 0.5) -> GaussianPolicy:
    net = init_mlp([obs_dim, hidden, hidden, act_dim], rng)
    return GaussianPolicy(net, np.full(act_dim, math.log(sigma_init)))


def gaussian_logp(action: np.ndarray, mu: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over the action dimensions."""
    sigma = np.exp(log_sigma)
    z = (action - mu) / sigma
    return np.sum(-0.5 * z * z - log_sigma - 0.5 * LOG_2PI, axis=-1)


def policy_sample(policy: GaussianPolicy, obs: np.ndarray, rng: np.random.Generator):
    """Draw a ~ N(mu(obs), diag sigma^2); returns (raw_action, logp)."""
    mu = forward(policy.mean_net, obs)
    sigma = np.exp(policy.log_sigma)
    action = mu + sigma * rng.standard_normal(mu.shape)
    return action, float(gaussian_logp(action, mu, policy.log_sigma))


def policy_mean(policy: GaussianPolicy, obs: np.ndarray) -> np.ndarray:
    """Deterministic action (the sigma -> 0 limit used for evaluation)."""
    return forward(policy.mean_net, obs)
