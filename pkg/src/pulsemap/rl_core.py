"""Episode environments, the PPO trainer, and the fidelity-biased target sampler.

An episode prepares one randomly drawn target (theta, phi): the policy emits
one normalized action per control step, the environment integrates the
corresponding physics, and the only nonzero reward is the terminal fidelity
minus the accumulated out-of-bounds penalty. Training is plain clipped PPO on
an on-policy buffer of complete episodes.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import neuralnet as nn
from .dynamics import IntegrationError, fidelity, fidelity_density
from .nv_model import ControlStep, NvParams, Protocol, initial_state, nv_target_state, system
from .spin_toy import ToyAction, toy_apply, toy_target

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
DEFAULT_PENALTY_FACTOR = 0.2


class PpoNanError(RuntimeError):
    """A PPO update produced a non-finite loss or gradient."""


# ---------------------------------------------------------------------------
# Action decoding and observation encoding


def decode_action(
    raw_action: np.ndarray,
    lows: np.ndarray,
    highs: np.ndarray,
    penalty_factor: float = DEFAULT_PENALTY_FACTOR,
) -> tuple[np.ndarray, float]:
    """Map a normalized action to physical units with an out-of-bounds penalty.

    In-bounds raw components live in [-0.5, 0.5]; each component is clamped
    there and mapped affinely onto [low, high]. The penalty is
    penalty_factor * sum_i max(0, |raw_i| - 0.5), later subtracted from the
    episode reward.
    """
    raw = np.asarray(raw_action, dtype=float)
    excess = np.maximum(0.0, np.abs(raw) - 0.5)
    penalty = penalty_factor * float(excess.sum())
    clamped = np.clip(raw, -0.5, 0.5)
    phys = lows + (clamped + 0.5) * (highs - lows)
    return phys, penalty


def encode_target(theta: float, phi: float, encoding: str) -> np.ndarray:
    if encoding == "raw":
        return np.array([theta, phi])
    if encoding == "periodic":
        return np.array([theta, math.cos(phi), math.sin(phi)])
    raise ValueError(f"unknown target encoding {encoding!r}")


def encode_observation(psi: np.ndarray, target_enc: np.ndarray) -> np.ndarray:
    return np.concatenate([psi.real, psi.imag, target_enc])


# ---------------------------------------------------------------------------
# Environments


class ToyEnv:
    """Two-rotation environment; a single step emits both rotation angles."""

    def __init__(self, shifted: bool = False, encoding: str = "raw",
                 full_sphere: bool = False,
                 penalty_factor: float = DEFAULT_PENALTY_FACTOR):
        self.shifted = shifted
        self.encoding = encoding
        self.full_sphere = full_sphere
        self.penalty_factor = penalty_factor
        self.n_steps = 1
        self.act_dim = 2
        self.action_lows = np.array([0.0, 0.0])
        self.action_highs = np.array([1.0, 1.0])
        self.obs_dim = 4 + len(encode_target(0.0, 0.0, encoding))
        self._target = None
        self._target_enc = None
        self._done = True
        self._last_action = None

    def theta_range(self) -> tuple[float, float]:
        return (0.0, math.pi) if self.full_sphere else (math.pi / 2, math.pi / 2)

    def reset(self, theta: float, phi: float) -> np.ndarray:
        self._target = toy_target(theta, phi, shifted=self.shifted)
        self._target_enc = encode_target(theta, phi, self.encoding)
        self._done = False
        self._last_action = None
        psi0 = np.array([1.0, 0.0], dtype=complex)
        return encode_observation(psi0, self._target_enc)

    def step(self, raw_action: np.ndarray):
        if self._done:
            raise RuntimeError("episode is done; call reset()")
        phys, penalty = decode_action(
            raw_action, self.action_lows, self.action_highs, self.penalty_factor
        )
        psi = toy_apply(ToyAction(phys[0], phys[1]))
        self._done = True
        self._last_action = phys
        f = fidelity(psi, self._target)
        reward = f - penalty
        info = {"fidelity": f, "fault": False, "total_time": 0.0, "protocol": phys.copy()}
        return encode_observation(psi, self._target_enc), reward, True, info

    def protocol_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.action_lows.copy(), self.action_highs.copy()


class NvEnv:
    """NV-center environment; each step holds (Omega1, Omega2) for dt ns.

    Absolute time is threaded across steps so the drive phases cos(delta*t)
    stay continuous. In open mode the reward comes from the Lindblad-evolved
    density matrix while the observation tracks the dissipation-free
    wavefunction of the same drive (the spec observation is a wavefunction;
    dissipation over <1 ns is a weak perturbation of it).
    """

    def __init__(self, params: NvParams, encoding: str = "raw",
                 penalty_factor: float = DEFAULT_PENALTY_FACTOR,
                 use_fast: bool = True):
        self.params = params
        self.encoding = encoding
        self.penalty_factor = penalty_factor
        self.use_fast = use_fast
        self.system = system(params)
        self.n_steps = params.n_steps
        self.act_dim = 3
        dt_lo, dt_hi = params.dt_bounds
        om_lo, om_hi = params.omega_bounds
        self.action_lows = np.array([om_lo, om_lo, dt_lo])
        self.action_highs = np.array([om_hi, om_hi, dt_hi])
        self.obs_dim = 2 * params.dim + len(encode_target(0.0, 0.0, encoding))
        self._reset_internals()

    def theta_range(self) -> tuple[float, float]:
        return (0.0, math.pi)

    def _reset_internals(self):
        self._state = None
        self._shadow = None
        self._target = None
        self._target_enc = None
        self._t = 0.0
        self._k = 0
        self._penalty = 0.0
        self._steps: list[ControlStep] = []
        self._done = True

    def reset(self, theta: float, phi: float) -> np.ndarray:
        self._reset_internals()
        self._target = nv_target_state(theta, phi, self.params.dim)
        self._target_enc = encode_target(theta, phi, self.encoding)
        self._state = initial_state(self.params)
        self._shadow = self._state if self.params.mode == "closed" else None
        if self.params.mode == "open":
            psi = np.zeros(self.params.dim, dtype=complex)
            psi[0] = 1.0
            self._shadow = psi
        self._done = False
        return encode_observation(self._shadow, self._target_enc)

    def step(self, raw_action: np.ndarray):
        if self._done:
            raise RuntimeError("episode is done; call reset()")
        phys, penalty = decode_action(
            raw_action, self.action_lows, self.action_highs, self.penalty_factor
        )
        step = ControlStep(phys[0], phys[1], phys[2])
        self._penalty += penalty
        try:
            self._state = self.system.propagate_step(
                self._state, step, self._t, use_fast=self.use_fast
            )
            if self.params.mode == "open":
                self._shadow = self._propagate_shadow(step)
            else:
                self._shadow = self._state
        except IntegrationError as err:
            log.warning("episode aborted by integrator fault: %s", err)
            self._done = True
            info = {
                "fidelity": 0.0,
                "fault": True,
                "total_time": self._t,
                "protocol": Protocol(tuple(self._steps)),
            }
            return encode_observation(self._shadow, self._target_enc), 0.0, True, info
        self._t += step.dt
        self._k += 1
        self._steps.append(step)
        done = self._k >= self.n_steps
        reward = 0.0
        info = {"fault": False}
        if done:
            self._done = True
            if self.params.mode == "open":
                f = fidelity_density(self._state, self._target)
            else:
                f = fidelity(self._state, self._target)
            reward = f - self._penalty
            info = {
                "fidelity": f,
                "fault": False,
                "total_time": self._t,
                "protocol": Protocol(tuple(self._steps)),
            }
        return encode_observation(self._shadow, self._target_enc), reward, done, info

    def _propagate_shadow(self, step: ControlStep) -> np.ndarray:
        from . import fastpath

        p = self.params
        n = self.system.substeps_for(step)
        out = fastpath.drive_rk4_psi(
            self.system.h0, self.system.w, step.omega1, step.omega2,
            p.delta1, p.delta2, self._shadow, self._t, step.dt, n,
            use_numba=self.use_fast,
        )
        norm = np.linalg.norm(out)
        return out / norm if norm > 0 else out

    def protocol_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step (lows, highs) tiled over the N_T steps, step-major."""
        return (
            np.tile(self.action_lows, self.n_steps),
            np.tile(self.action_highs, self.n_steps),
        )


# ---------------------------------------------------------------------------
# Episodes and rollout storage


@dataclass
class Episode:
    obs: np.ndarray
    actions: np.ndarray
    logps: np.ndarray
    rewards: np.ndarray
    theta: float
    phi: float
    fidelity: float
    total_time: float
    fault: bool = False
    protocol: object = None


def run_episode(env, policy: nn.GaussianPolicy, rng: np.random.Generator,
                theta: float, phi: float, deterministic: bool = False) -> Episode:
    obs = env.reset(theta, phi)
    obs_list, act_list, logp_list, rew_list = [], [], [], []
    info = {}
    for _ in range(env.n_steps):
        if deterministic:
            action = nn.policy_mean(policy, obs)
            logp = 0.0
        else:
            action, logp = nn.policy_sample(policy, obs, rng)
        obs_list.append(obs)
        act_list.append(action)
        logp_list.append(logp)
        obs, reward, done, info = env.step(action)
        rew_list.append(reward)
        if done:
            break
    return Episode(
        obs=np.array(obs_list),
        actions=np.array(act_list),
        logps=np.array(logp_list),
        rewards=np.array(rew_list),
        theta=theta,
        phi=phi,
        fidelity=info.get("fidelity", 0.0),
        total_time=info.get("total_time", 0.0),
        fault=info.get("fault", False),
        protocol=info.get("protocol"),
    )


def compute_returns(episodes: Sequence[Episode], values_fn, gamma: float):
    """Fill per-step discounted returns-to-go and advantages.

    values_fn maps a stacked observation batch to value estimates; the
    terminal bootstrap is zero. Returns (obs, actions, logps, returns,
    advantages) stacked across episodes.
    """
    for ep in episodes:
        if len(ep.rewards) != len(ep.obs):
            raise ValueError("incomplete episode in buffer")
    obs = np.concatenate([ep.obs for ep in episodes])
    acts = np.concatenate([ep.actions for ep in episodes])
    logps = np.concatenate([ep.logps for ep in episodes])
    rets = []
    for ep in episodes:
        rtg = np.zeros(len(ep.rewards))
        acc = 0.0
        for i in range(len(ep.rewards) - 1, -1, -1):
            acc = ep.rewards[i] + gamma * acc
            rtg[i] = acc
        rets.append(rtg)
    returns = np.concatenate(rets)
    values = np.asarray(values_fn(obs), dtype=float).reshape(-1)
    advantages = returns - values
    return obs, acts, logps, returns, advantages


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Return-to-go of a single reward sequence (exposed for tests)."""
    rtg = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        rtg[i] = acc
    return rtg


# ---------------------------------------------------------------------------
# PPO update


def clipped_surrogate(ratio: np.ndarray, advantage: np.ndarray, clip_eps: float) -> np.ndarray:
    """Per-sample PPO objective min(b*A, clip(b, 1-eps, 1+eps)*A)."""
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return np.minimum(ratio * advantage, clipped * advantage)


def policy_loss_and_grads(policy: nn.GaussianPolicy, obs, actions, logp_old,
                          advantages, clip_eps: float):
    """Clipped-surrogate loss with exact gradients for the mean net and log-sigma.

    Gradient flows through the unclipped ratio only where the clip is not
    binding (the standard PPO masking).
    """
    mu = nn.forward(policy.mean_net, obs)
    sigma = np.exp(policy.log_sigma)
    z = (actions - mu) / sigma
    logp_new = np.sum(-0.5 * z * z - policy.log_sigma - 0.5 * nn.LOG_2PI, axis=-1)
    ratio = np.exp(logp_new - logp_old)
    surr = clipped_surrogate(ratio, advantages, clip_eps)
    loss = -float(np.mean(surr))

    n = len(advantages)
    active = ~(((advantages >= 0) & (ratio > 1.0 + clip_eps))
               | ((advantages < 0) & (ratio < 1.0 - clip_eps)))
    # dL/dlogp_new per sample; L = -mean(surrogate).
    dlogp = np.where(active, -(ratio * advantages) / n, 0.0)
    upstream_mu = dlogp[:, None] * (z / sigma)
    net_grads = nn.grad(policy.mean_net, obs, upstream_mu)
    g_logsig = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    stats = {
        "loss": loss,
        "clip_frac": float(np.mean(~active)),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    return loss, net_grads + [g_logsig], stats


def value_loss_and_grads(value_net: nn.Mlp, obs, returns):
    v = nn.forward(value_net, obs).reshape(-1)
    err = v - returns
    loss = float(np.mean(err * err))
    upstream = (2.0 * err / len(err))[:, None]
    return loss, nn.grad(value_net, obs, upstream)


def ppo_update(policy: nn.GaussianPolicy, value_net: nn.Mlp,
               episodes: Sequence[Episode], clip_eps: float, lr: float,
               n_updates: int, policy_adam: nn.AdamState,
               value_adam: nn.AdamState, gamma: float = 1.0,
               advantage_norm: bool = True, target_kl: float = 0.0) -> dict:
    """Run up to n_updates clipped-PPO epochs over the buffered episodes.

    With target_kl > 0, policy epochs stop once the approximate KL to the
    collection-time policy exceeds 1.5 * target_kl (the usual guard against
    destructive updates once sigma is small); value epochs always run to
    n_updates.
    """
    if not episodes:
        raise ValueError("ppo_update needs a non-empty buffer")
    obs, acts, logp_old, returns, advantages = compute_returns(
        episodes, lambda o: nn.forward(value_net, o).reshape(-1), gamma
    )
    if advantage_norm:
        std = advantages.std()
        advantages = (advantages - advantages.mean()) / (std + 1e-8)
    stats = {"policy_epochs": 0}
    for i in range(n_updates):
        p_loss, p_grads, p_stats = policy_loss_and_grads(
            policy, obs, acts, logp_old, advantages, clip_eps
        )
        if not np.isfinite(p_loss):
            raise PpoNanError(f"non-finite policy loss: {p_loss}")
        if target_kl > 0 and p_stats["approx_kl"] > 1.5 * target_kl:
            stats.update(p_stats)
            break
        nn.adam_step(policy.params(), p_grads, policy_adam, lr)
        stats.update({"policy_loss": p_loss, **p_stats, "policy_epochs": i + 1})
    for _ in range(n_updates):
        v_loss, v_grads = value_loss_and_grads(value_net, obs, returns)
        if not np.isfinite(v_loss):
            raise PpoNanError(f"non-finite value loss: {v_loss}")
        nn.adam_step(value_net.params(), v_grads, value_adam, lr)
        stats["value_loss"] = v_loss
    stats["sigma"] = float(np.exp(policy.log_sigma).mean())
    return stats


# ---------------------------------------------------------------------------
# Fidelity-biased target sampler


class SamplerState:
    """Grid-binned sampler biased toward targets with low recent fidelity.

    Cell weights follow eta + (1 - eta) * (1 - <F>), with <F> the mean over
    that cell's entries among the last `window` recorded episodes; cells with
    no history count as <F> = 0 (maximum priority).
    """

    def __init__(self, n_theta: int = 20, n_phi: int = 20, eta: float = 0.5,
                 window: int = 10000,
                 theta_range: tuple[float, float] = (0.0, math.pi),
                 phi_range: tuple[float, float] = (0.0, TWO_PI)):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {eta}")
        self.n_theta = n_theta
        self.n_phi = n_phi
        self.eta = eta
        self.window = window
        self.theta_range = theta_range
        self.phi_range = phi_range
        self._recent: deque = deque()
        self._sum = np.zeros(n_theta * n_phi)
        self._count = np.zeros(n_theta * n_phi, dtype=np.int64)

    def _cell_of(self, theta: float, phi: float) -> int:
        t_lo, t_hi = self.theta_range
        p_lo, p_hi = self.phi_range
        it = 0
        if t_hi > t_lo:
            it = min(self.n_theta - 1, int((theta - t_lo) / (t_hi - t_lo) * self.n_theta))
        ip = 0
        if p_hi > p_lo:
            ip = min(self.n_phi - 1, int((phi - p_lo) / (p_hi - p_lo) * self.n_phi))
        return it * self.n_phi + ip

    def record(self, theta: float, phi: float, fidelity_value: float) -> None:
        cell = self._cell_of(theta, phi)
        self._recent.append((cell, fidelity_value))
        self._sum[cell] += fidelity_value
        self._count[cell] += 1
        while len(self._recent) > self.window:
            old_cell, old_f = self._recent.popleft()
            self._sum[old_cell] -= old_f
            self._count[old_cell] -= 1

    def probabilities(self) -> np.ndarray:
        mean_f = np.where(self._count > 0, self._sum / np.maximum(self._count, 1), 0.0)
        weights = self.eta + (1.0 - self.eta) * (1.0 - mean_f)
        return weights / weights.sum()

    def sample(self, rng: np.random.Generator) -> tuple[float, float]:
        p = self.probabilities()
        cell = int(rng.choice(len(p), p=p))
        it, ip = divmod(cell, self.n_phi)
        t_lo, t_hi = self.theta_range
        p_lo, p_hi = self.phi_range
        dt = (t_hi - t_lo) / self.n_theta
        dp = (p_hi - p_lo) / self.n_phi
        theta = t_lo + (it + rng.uniform()) * dt
        phi = p_lo + (ip + rng.uniform()) * dp
        return theta, phi

    def to_state(self) -> dict:
        return {
            "n_theta": self.n_theta,
            "n_phi": self.n_phi,
            "eta": self.eta,
            "window": self.window,
            "theta_range": list(self.theta_range),
            "phi_range": list(self.phi_range),
            "recent": [[int(c), float(f)] for c, f in self._recent],
        }

    @classmethod
    def from_state(cls, state: dict) -> "SamplerState":
        out = cls(
            n_theta=state["n_theta"],
            n_phi=state["n_phi"],
            eta=state["eta"],
            window=state["window"],
            theta_range=tuple(state["theta_range"]),
            phi_range=tuple(state["phi_range"]),
        )
        for cell, f in state["recent"]:
            out._recent.append((cell, f))
            out._sum[cell] += f
            out._count[cell] += 1
        return out


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainState:
    """Everything needed to continue a run bit-identically."""

    policy: nn.GaussianPolicy
    value_net: nn.Mlp
    policy_adam: nn.AdamState
    value_adam: nn.AdamState
    sampler: SamplerState
    rng: np.random.Generator
    episodes_done: int = 0
    curve: list = field(default_factory=list)
    bin_count: int = 0
    bin_sum: float = 0.0
    bin_min: float = math.inf
    bin_max: float = -math.inf


def init_train_state(cfg, env) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    policy = nn.init_policy(env.obs_dim, env.act_dim, cfg.neurons, rng, cfg.sigma_init)
    value_net = nn.init_mlp([env.obs_dim, cfg.neurons, cfg.neurons, 1], rng)
    t_lo, t_hi = env.theta_range()
    n_theta = 1 if t_hi <= t_lo else cfg.sampler_grid
    sampler = SamplerState(
        n_theta=n_theta,
        n_phi=cfg.sampler_grid,
        eta=cfg.eta,
        window=cfg.sampler_window,
        theta_range=(t_lo, t_hi),
    )
    return TrainState(
        policy=policy,
        value_net=value_net,
        policy_adam=nn.init_adam(policy.params()),
        value_adam=nn.init_adam(value_net.params()),
        sampler=sampler,
        rng=rng,
    )


def make_env(cfg):
    """Instantiate the environment selected by a RunConfig."""
    if cfg.env in ("toy", "toy_shifted"):
        return ToyEnv(
            shifted=cfg.env == "toy_shifted",
            encoding=cfg.target_encoding,
            full_sphere=cfg.toy_full_sphere,
            penalty_factor=cfg.penalty_factor,
        )
    if cfg.env in ("nv_closed", "nv_open"):
        return NvEnv(
            cfg.nv_params(),
            encoding=cfg.target_encoding,
            penalty_factor=cfg.penalty_factor,
        )
    raise ValueError(f"unknown env {cfg.env!r}")


def train(cfg, state: TrainState | None = None, env=None,
          on_bin: Callable[[tuple], None] | None = None,
          on_checkpoint: Callable[[TrainState, int], None] | None = None) -> TrainState:
    """Train until cfg.episodes total episodes have been played.

    `state` resumes a previous run (the episode counter continues from where
    it stopped). `on_bin` receives (bin_index, mean_F, min_F, max_F) as each
    100-episode bin completes; `on_checkpoint` fires on update boundaries
    every cfg.checkpoint_every episodes and once at the end. A NaN during an
    update triggers a final checkpoint callback, then raises PpoNanError.
    """
    env = env if env is not None else make_env(cfg)
    if state is None:
        state = init_train_state(cfg, env)
    buffer: list[Episode] = []
    faults = 0

    def close_bin():
        if state.bin_count == 0:
            return
        row = (
            len(state.curve),
            state.bin_sum / state.bin_count,
            state.bin_min,
            state.bin_max,
        )
        state.curve.append(row)
        if on_bin is not None:
            on_bin(row)
        state.bin_count = 0
        state.bin_sum = 0.0
        state.bin_min = math.inf
        state.bin_max = -math.inf

    ep = state.episodes_done
    while ep < cfg.episodes:
        theta, phi = state.sampler.sample(state.rng)
        episode = run_episode(env, state.policy, state.rng, theta, phi)
        state.sampler.record(theta, phi, episode.fidelity)
        state.bin_count += 1
        state.bin_sum += episode.fidelity
        state.bin_min = min(state.bin_min, episode.fidelity)
        state.bin_max = max(state.bin_max, episode.fidelity)
        if episode.fault:
            faults += 1
        else:
            buffer.append(episode)
        ep += 1
        state.episodes_done = ep
        if state.bin_count >= cfg.curve_bin:
            close_bin()
        if ep % cfg.batch_episodes == 0 and buffer:
            try:
                ppo_update(
                    state.policy, state.value_net, buffer, cfg.clip_eps, cfg.lr,
                    cfg.inner_updates, state.policy_adam, state.value_adam,
                    gamma=cfg.gamma, advantage_norm=cfg.advantage_norm,
                    target_kl=cfg.target_kl,
                )
            except PpoNanError:
                if on_checkpoint is not None:
                    on_checkpoint(state, ep)
                raise
            keep = (cfg.buffer_retain_batches - 1) * cfg.batch_episodes
            buffer = buffer[-keep:] if keep > 0 else []
            if on_checkpoint is not None and cfg.checkpoint_every > 0 and ep % cfg.checkpoint_every == 0:
                on_checkpoint(state, ep)
    close_bin()
    if faults:
        log.warning("training saw %d integrator faults (episodes scored 0)", faults)
    if on_checkpoint is not None:
        on_checkpoint(state, ep)
    return state


def evaluate_policy(env, policy: nn.GaussianPolicy, theta: float, phi: float) -> Episode:
    """One deterministic episode (action = mean), used for landscapes."""
    rng = np.random.default_rng(0)  # unused in deterministic mode
    return run_episode(env, policy, rng, theta, phi, deterministic=True)
