"""Multi-agent PPO with hand-written numpy networks.

Each agent owns a PolicyPair: an actor mapping its observation to nine
action logits and a critic scoring (observation, action) pairs. Training is
centralized (one update round per episode over replayed transitions);
execution is decentralized, since ``act`` only ever sees the agent's own
observation vector.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .plangen import N_ACTIONS

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    pass


class MLP:
    """Feed-forward net with tanh hidden layers and a linear output layer."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    def copy(self) -> "MLP":
        clone = object.__new__(MLP)
        clone.sizes = list(self.sizes)
        clone.params = [p.copy() for p in self.params]
        return clone

    def load(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.tanh(z) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(grad_out * output) with respect to every parameter."""
        n_layers = len(self.params) // 2
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        delta = grad_out
        for i in range(n_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (1.0 - acts[i] ** 2)
        return grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], ascend: bool = False) -> None:
        self.t += 1
        sign = 1.0 if ascend else -1.0
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(actions: np.ndarray | int, n: int = N_ACTIONS) -> np.ndarray:
    a = np.atleast_1d(np.asarray(actions, dtype=int))
    out = np.zeros((a.size, n))
    out[np.arange(a.size), a] = 1.0
    return out


@dataclass
class PPOConfig:
    episodes: int = 300
    batch_size: int = 64  # H
    gamma: float = 0.95
    clip: float = 0.2
    hidden: int = 64  # W
    layers: int = 3
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    updates_per_episode: int = 4
    buffer_capacity: int = 10_000
    seed: int = 0

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


class PolicyPair:
    def __init__(self, obs_dim: int, config: PPOConfig, rng: np.random.Generator, n_actions: int = N_ACTIONS):
        hidden = [config.hidden] * config.layers
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.actor = MLP([obs_dim, *hidden, n_actions], rng)
        self.critic = MLP([obs_dim + n_actions, *hidden, 1], rng)
        self.actor_old = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, config.actor_lr)
        self.critic_opt = Adam(self.critic.params, config.critic_lr)

    def probs(self, obs: np.ndarray) -> np.ndarray:
        return softmax(self.actor(np.atleast_2d(obs)))

    def q(self, obs: np.ndarray, actions: np.ndarray, net: MLP | None = None) -> np.ndarray:
        net = net or self.critic
        x = np.hstack([np.atleast_2d(obs), one_hot(actions, self.n_actions)])
        return net(x)[:, 0]

    def refresh(self) -> None:
        self.actor_old.load(self.actor)
        self.critic_target.load(self.critic)


def act(policy: PolicyPair, observation: np.ndarray, explore: bool, rng: np.random.Generator) -> int:
    obs = np.asarray(observation, dtype=float)
    if obs.shape != (policy.obs_dim,):
        raise ValueError(f"observation has shape {obs.shape}, expected ({policy.obs_dim},)")
    logits = policy.actor(obs[None, :])[0]
    if not explore:
        return int(np.argmax(logits))
    p = softmax(logits)
    return int(rng.choice(policy.n_actions, p=p))


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class TransitionBuffer:
    def __init__(self, capacity: int):
        self.entries: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        self.entries.append((np.asarray(obs, dtype=float), int(action), float(reward),
                             np.asarray(next_obs, dtype=float), bool(done)))

    def sample_indices(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self.entries), size=min(size, len(self.entries)), replace=False)

    def sample(self, size: int, rng: np.random.Generator) -> Batch:
        return self.batch(self.sample_indices(size, rng))

    def batch(self, idx: Sequence[int]) -> Batch:
        rows = [self.entries[i] for i in idx]
        return Batch(
            obs=np.stack([r[0] for r in rows]),
            actions=np.array([r[1] for r in rows]),
            rewards=np.array([r[2] for r in rows]),
            next_obs=np.stack([r[3] for r in rows]),
            done=np.array([r[4] for r in rows]),
        )


def advantages(policy: PolicyPair, batch: Batch, gamma: float, critic: MLP | None = None,
               bootstrap: MLP | None = None) -> np.ndarray:
    """One-step advantage r + gamma * Q'(o', a') - Q(o, a), a' the actor's greedy choice at o'.

    Terminal transitions drop the bootstrap term.
    """
    bootstrap = bootstrap or policy.critic_target
    next_a = np.argmax(policy.actor(batch.next_obs), axis=1)
    q_next = policy.q(batch.next_obs, next_a, bootstrap)
    q_now = policy.q(batch.obs, batch.actions, critic)
    return batch.rewards + gamma * np.where(batch.done, 0.0, q_next) - q_now


def advantage(policy: PolicyPair, obs, action: int, reward: float, next_obs, gamma: float,
              done: bool = False) -> float:
    b = Batch(np.atleast_2d(obs), np.array([action]), np.array([reward]), np.atleast_2d(next_obs), np.array([done]))
    return float(advantages(policy, b, gamma)[0])


def critic_loss_and_grads(policy: PolicyPair, batch: Batch, gamma: float) -> tuple[float, list[np.ndarray]]:
    """Mean squared advantage and its gradient; the bootstrap target is held fixed."""
    x = np.hstack([batch.obs, one_hot(batch.actions, policy.n_actions)])
    q_now, acts = policy.critic.forward(x)
    next_a = np.argmax(policy.actor(batch.next_obs), axis=1)
    q_next = policy.q(batch.next_obs, next_a, policy.critic_target)
    adv = batch.rewards + gamma * np.where(batch.done, 0.0, q_next) - q_now[:, 0]
    loss = float(np.mean(adv**2))
    grad_out = (-2.0 * adv / len(batch))[:, None]
    return loss, policy.critic.backward(acts, grad_out)


def critic_update(policy: PolicyPair, batch: Batch, gamma: float) -> float:
    loss, grads = critic_loss_and_grads(policy, batch, gamma)
    if not math.isfinite(loss):
        raise NumericalError(
            f"critic loss is {loss}; rewards range [{batch.rewards.min()}, {batch.rewards.max()}], "
            f"parameter norms {[float(np.linalg.norm(p)) for p in policy.critic.params]}"
        )
    policy.critic_opt.step(policy.critic.params, grads)
    return loss


@dataclass
class ClipStats:
    objective: float
    clip_fraction: float
    skipped: int


def clip_objective_and_grads(policy: PolicyPair, batch: Batch, adv: np.ndarray,
                             eps: float) -> tuple[ClipStats, list[np.ndarray]]:
    """Clipped surrogate objective (to maximize) and its gradient with respect to the actor."""
    logits, acts = policy.actor.forward(batch.obs)
    p = softmax(logits)
    p_old = softmax(policy.actor_old(batch.obs))
    idx = np.arange(len(batch))
    pa = p[idx, batch.actions]
    pa_old = p_old[idx, batch.actions]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = pa / pa_old
    valid = np.isfinite(ratio) & (pa_old > 0)
    skipped = int((~valid).sum())
    if skipped:
        log.warning("skipping %d samples with non-finite probability ratio", skipped)
    ratio = np.where(valid, ratio, 1.0)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    surrogate = np.minimum(unclipped_term, clipped_term)
    n = max(1, int(valid.sum()))
    objective = float(surrogate[valid].sum() / n)
    # gradient flows only where the unclipped branch attains the minimum
    active = valid & (unclipped_term <= clipped_term)
    coef = np.where(active, adv * ratio, 0.0) / n
    onehot = one_hot(batch.actions, policy.n_actions)
    grad_logits = coef[:, None] * (onehot - p)
    grads = policy.actor.backward(acts, grad_logits)
    frac = float(((ratio < 1.0 - eps) | (ratio > 1.0 + eps))[valid].mean()) if valid.any() else 0.0
    return ClipStats(objective, frac, skipped), grads


def actor_update(policy: PolicyPair, batch: Batch, adv: np.ndarray, eps: float) -> ClipStats:
    stats, grads = clip_objective_and_grads(policy, batch, adv, eps)
    policy.actor_opt.step(policy.actor.params, grads, ascend=True)
    return stats


class Env(Protocol):
    n_agents: int
    obs_dim: int

    def reset(self, episode: int) -> list[np.ndarray]: ...

    def step(self, actions: Sequence[int]) -> tuple[list[np.ndarray], list[float], bool]: ...


@dataclass
class EpisodeLog:
    rows: list[dict] = field(default_factory=list)

    HEADER = ("episode", "mean_reward", "critic_loss", "actor_objective", "clip_fraction")

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r["episode"]] + [repr(float(r[k])) for k in self.HEADER[1:]])


class Learner:
    """Per-agent policies, buffers and the once-per-episode update round."""

    def __init__(self, n_agents: int, obs_dim: int, config: PPOConfig, n_actions: int = N_ACTIONS):
        self.config = config
        seeds = np.random.SeedSequence([config.seed, 7])
        init_seq, sample_seq, act_seq = seeds.spawn(3)
        init_rng = np.random.default_rng(init_seq)
        self.policies = [PolicyPair(obs_dim, config, init_rng, n_actions) for _ in range(n_agents)]
        self.buffers = [TransitionBuffer(config.buffer_capacity) for _ in range(n_agents)]
        self.sample_rng = np.random.default_rng(sample_seq)
        self.act_rng = np.random.default_rng(act_seq)

    def act(self, observations: Sequence[np.ndarray], explore: bool = True) -> list[int]:
        return [act(pol, o, explore, self.act_rng) for pol, o in zip(self.policies, observations)]

    def store(self, obs, actions, rewards, next_obs, done: bool) -> None:
        for u, buf in enumerate(self.buffers):
            buf.add(obs[u], actions[u], rewards[u], next_obs[u], done)

    def update_round(self) -> tuple[float, float, float]:
        cfg = self.config
        losses, objectives, fracs = [], [], []
        for pol, buf in zip(self.policies, self.buffers):
            if not len(buf):
                continue
            for _ in range(cfg.updates_per_episode):
                batch = buf.sample(cfg.batch_size, self.sample_rng)
                losses.append(critic_update(pol, batch, cfg.gamma))
                adv = advantages(pol, batch, cfg.gamma)
                stats = actor_update(pol, batch, adv, cfg.clip)
                objectives.append(stats.objective)
                fracs.append(stats.clip_fraction)
            pol.refresh()
        mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
        return mean(losses), mean(objectives), mean(fracs)

    def save(self, path: str | Path, config_hash: str = "") -> None:
        arrays = {}
        for u, pol in enumerate(self.policies):
            for i, p in enumerate(pol.actor.params):
                arrays[f"agent{u}/actor/{i}"] = p
            for i, p in enumerate(pol.critic.params):
                arrays[f"agent{u}/critic/{i}"] = p
        meta = {"version": CHECKPOINT_VERSION, "config_hash": config_hash, "ppo": asdict(self.config)}
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load(self, path: str | Path) -> dict:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            for u, pol in enumerate(self.policies):
                for i, p in enumerate(pol.actor.params):
                    p[...] = data[f"agent{u}/actor/{i}"]
                for i, p in enumerate(pol.critic.params):
                    p[...] = data[f"agent{u}/critic/{i}"]
                pol.refresh()
        return meta


def train(env: Env, config: PPOConfig, learner: Learner | None = None,
          on_episode=None) -> tuple[Learner, EpisodeLog]:
    """Run ``config.episodes`` episodes, one update round after each."""
    if config.episodes < 1:
        raise ValueError("episodes must be >= 1")
    learner = learner or Learner(env.n_agents, env.obs_dim, config)
    history = EpisodeLog()
    for ep in range(config.episodes):
        obs = env.reset(ep)
        rewards_seen: list[float] = []
        done = False
        while not done:
            actions = learner.act(obs, explore=True)
            next_obs, rewards, done = env.step(actions)
            learner.store(obs, actions, rewards, next_obs, done)
            rewards_seen.extend(rewards)
            obs = next_obs
        loss, objective, frac = learner.update_round()
        history.append(episode=ep + 1, mean_reward=float(np.mean(rewards_seen)), critic_loss=loss,
                       actor_objective=objective, clip_fraction=frac)
        if on_episode is not None:
            on_episode(ep, env)
    return learner, history
