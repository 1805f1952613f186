"""TD3 / ATD3 / ATD3_RNN learner.

ATD3 adds an adversarial term to each critic's loss that pushes the two
critics apart, and trains the actor on the mean of both critics. With
``beta = 0`` and variant ``td3`` the update is plain TD3.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .nn import Actor, AdamState, Critic, adam_step, load_network_dict, network_to_dict, soft_update

log = logging.getLogger(__name__)

VARIANTS = ("td3", "atd3", "atd3_rnn")


@dataclass
class Hyperparams:
    variant: str = "atd3_rnn"
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    beta: float = 0.1
    sigma: float = 0.1
    target_sigma: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 100
    start_steps: int = 10_000
    lr: float = 1e-3
    seq_len: int | None = None
    buffer_capacity: int = 1_000_000
    hidden: int = 64

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.seq_len is None:
            self.seq_len = 2 if self.variant == "atd3_rnn" else 1
        if self.variant == "td3":
            self.beta = 0.0
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.beta < 0.5:
            raise ValueError("beta must lie in [0, 0.5)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1 or self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("policy_delay, batch_size and seq_len must be >= 1")
        if self.variant != "atd3_rnn" and self.seq_len != 1:
            raise ValueError("sequence length > 1 requires the atd3_rnn variant")

    @property
    def recurrent(self):
        return self.variant == "atd3_rnn"

    @property
    def mean_q_actor(self):
        return self.variant != "td3"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


class SequenceBuilder:
    """Sliding window of the last T observations; padded with the first one."""

    def __init__(self, seq_len):
        self.seq_len = seq_len
        self.window = None

    def reset(self, obs):
        self.window = np.repeat(np.asarray(obs, dtype=np.float64)[None, :], self.seq_len, axis=0)
        return self.window.copy()

    def push(self, obs):
        self.window = np.concatenate([self.window[1:], np.asarray(obs, dtype=np.float64)[None, :]], axis=0)
        return self.window.copy()


class ReplayBuffer:
    """Ring buffer with uniform sampling with replacement."""

    def __init__(self, capacity, seq_len, obs_dim, act_dim, seed=0):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, seq_len, obs_dim))
        self.a = np.zeros((self.capacity, act_dim))
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, seq_len, obs_dim))
        self.d = np.zeros(self.capacity)
        self.snapshots = [None] * self.capacity
        self.ptr = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, snapshot=None):
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
        self.snapshots[i] = snapshot
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self):
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity

    def sample_indices(self, n, rng=None):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return (rng or self.rng).integers(0, self.size, size=n)

    def sample(self, n, rng=None):
        idx = self.sample_indices(n, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    d: np.ndarray


def compute_target(r, done, q1_next, q2_next, gamma):
    """y = r + gamma * (1 - done) * min(Q1', Q2')."""
    return r + gamma * (1.0 - done) * np.minimum(q1_next, q2_next)


def critic_loss_grads(q1, q2, y, beta):
    """Losses L(theta_i) + beta * L_a and their gradients w.r.t. each critic's output.

    L_a = -mean((Q1 - Q2)^2). ``y`` is treated as a constant.
    """
    n = q1.shape[0]
    e1 = q1 - y
    e2 = q2 - y
    gap = q1 - q2
    adv = -float(np.mean(gap * gap))
    loss1 = float(np.mean(e1 * e1)) + beta * adv
    loss2 = float(np.mean(e2 * e2)) + beta * adv
    g1 = 2.0 * e1 / n - 2.0 * beta * gap / n
    g2 = 2.0 * e2 / n + 2.0 * beta * gap / n
    return loss1, loss2, g1, g2


def clipped_noise(rng, shape, sigma, clip):
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip) if sigma > 0 else np.zeros(shape)


class Learner:
    """Actor, twin critics, their targets and Adam states."""

    def __init__(self, obs_dim, act_dim, hp: Hyperparams, seed=0):
        self.obs_dim, self.act_dim, self.hp = obs_dim, act_dim, hp
        init_rng = np.random.default_rng(seed)
        rec = hp.recurrent
        self.actor = Actor(obs_dim, act_dim, hp.hidden, rec, init_rng)
        self.critic1 = Critic(obs_dim, act_dim, hp.hidden, rec, init_rng)
        self.critic2 = Critic(obs_dim, act_dim, hp.hidden, rec, init_rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, lr=hp.lr)
        self.critic1_opt = AdamState.for_params(self.critic1.params, lr=hp.lr)
        self.critic2_opt = AdamState.for_params(self.critic2.params, lr=hp.lr)
        # noise for target smoothing; separate from buffer sampling and exploration
        self.rng = np.random.default_rng([seed, 1])
        self.updates = 0
        self.actor_updates = 0
        self.last = {"critic1_loss": float("nan"), "critic2_loss": float("nan"), "actor_loss": float("nan")}

    # ------------------------------------------------------------- acting
    def act(self, seq):
        """Deterministic policy action for one (T, obs) sequence."""
        seq = np.asarray(seq, dtype=np.float64)
        if seq.shape != (self.hp.seq_len, self.obs_dim):
            raise ValueError(f"expected sequence of shape {(self.hp.seq_len, self.obs_dim)}, got {seq.shape}")
        return self.actor.forward(seq[None])[0]

    def select_action(self, seq, sigma, rng, global_step=None):
        if global_step is not None and global_step < self.hp.start_steps:
            return rng.uniform(-1.0, 1.0, size=self.act_dim)
        return select_action(self.actor, seq, sigma, rng)

    # ------------------------------------------------------------ updates
    def critic_update(self, batch: Batch):
        hp = self.hp
        noise = clipped_noise(self.rng, batch.a.shape, hp.target_sigma, hp.noise_clip)
        a2 = np.clip(self.actor_target.forward(batch.s2) + noise, -1.0, 1.0)
        q1n = self.critic1_target.forward(batch.s2, a2)
        q2n = self.critic2_target.forward(batch.s2, a2)
        y = compute_target(batch.r, batch.d, q1n, q2n, hp.gamma)

        q1 = self.critic1.forward(batch.s, batch.a)
        q2 = self.critic2.forward(batch.s, batch.a)
        loss1, loss2, g1, g2 = critic_loss_grads(q1, q2, y, hp.beta)
        self.critic1.backward(g1)
        self.critic2.backward(g2)
        adam_step(self.critic1_opt, self.critic1.params, self.critic1.grads)
        adam_step(self.critic2_opt, self.critic2.params, self.critic2.grads)
        self.last["critic1_loss"], self.last["critic2_loss"] = loss1, loss2
        return loss1, loss2

    def actor_update(self, batch: Batch):
        n = batch.s.shape[0]
        a = self.actor.forward(batch.s)
        q1 = self.critic1.forward(batch.s, a)
        if self.hp.mean_q_actor:
            q2 = self.critic2.forward(batch.s, a)
            loss = -float(np.mean(0.5 * (q1 + q2)))
            g = np.full(n, -0.5 / n)
            da = self.critic1.backward(g) + self.critic2.backward(g)
        else:
            loss = -float(np.mean(q1))
            da = self.critic1.backward(np.full(n, -1.0 / n))
        self.actor.backward(da)
        adam_step(self.actor_opt, self.actor.params, self.actor.grads)
        self.last["actor_loss"] = loss
        return loss

    def soft_update_targets(self):
        tau = self.hp.tau
        soft_update(self.critic1, self.critic1_target, tau)
        soft_update(self.critic2, self.critic2_target, tau)
        soft_update(self.actor, self.actor_target, tau)

    def train_step(self, batch: Batch):
        self.critic_update(batch)
        self.updates += 1
        if self.updates % self.hp.policy_delay == 0:
            self.actor_update(batch)
            self.soft_update_targets()
            self.actor_updates += 1

    def train_after_episode(self, buffer: ReplayBuffer, episode_length):
        """One update per step of the finished episode."""
        if episode_length <= 0:
            return 0
        if len(buffer) < self.hp.batch_size:
            log.warning("buffer has %d transitions (< batch %d); skipping training",
                        len(buffer), self.hp.batch_size)
            return 0
        for _ in range(episode_length):
            self.train_step(buffer.sample(self.hp.batch_size))
        return episode_length

    # -------------------------------------------------------- estimation
    def q_estimate(self, s, a):
        """Mean of both critics (critic 1 only for TD3)."""
        q1 = self.critic1.forward(s, a)
        if not self.hp.mean_q_actor:
            return q1
        return 0.5 * (q1 + self.critic2.forward(s, a))

    # ------------------------------------------------------- persistence
    def networks(self):
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_target": self.actor_target, "critic1_target": self.critic1_target,
                "critic2_target": self.critic2_target}

    def state_extra(self):
        return {
            "optimizers": {"actor": self.actor_opt.to_dict(), "critic1": self.critic1_opt.to_dict(),
                           "critic2": self.critic2_opt.to_dict()},
            "rng": self.rng.bit_generator.state,
            "updates": self.updates,
            "actor_updates": self.actor_updates,
        }

    def load_state(self, nets: dict, extra: dict):
        for name, net in self.networks().items():
            if name in nets:
                load_network_dict(net, network_to_dict(nets[name]))
        if "optimizers" in extra:
            opts = extra["optimizers"]
            self.actor_opt = AdamState.from_dict(opts["actor"])
            self.critic1_opt = AdamState.from_dict(opts["critic1"])
            self.critic2_opt = AdamState.from_dict(opts["critic2"])
        if "rng" in extra:
            self.rng.bit_generator.state = extra["rng"]
        self.updates = extra.get("updates", self.updates)
        self.actor_updates = extra.get("actor_updates", self.actor_updates)


def select_action(actor: Actor, seq, sigma, rng):
    """pi(s) + N(0, sigma), clipped to [-1, 1]; sigma = 0 is the bare policy."""
    a = actor.forward(np.asarray(seq, dtype=np.float64)[None])[0]
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def smoothed_target_action(target_actor: Actor, next_seq, sigma, clip, rng=None, noise=None):
    """Target-policy smoothing: pi'(s') + clip(eps, -c, c), clipped to [-1, 1].

    ``noise`` overrides the sampled N(0, sigma) draw (before clipping).
    """
    next_seq = np.asarray(next_seq, dtype=np.float64)
    single = next_seq.ndim == 2
    batch = next_seq[None] if single else next_seq
    a = target_actor.forward(batch)
    if noise is None:
        noise = clipped_noise(rng, a.shape, sigma, clip)
    else:
        noise = np.clip(np.broadcast_to(noise, a.shape), -clip, clip)
    out = np.clip(a + noise, -1.0, 1.0)
    return out[0] if single else out
