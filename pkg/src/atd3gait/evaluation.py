"""Evaluation protocols: noise-free returns, Q-value error, gait similarity."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources

import numpy as np

from .agent import ReplayBuffer, SequenceBuilder
from .gait import MIN_CYCLE, cosine, detect_heel_strikes, resample_curve

EVAL_SEED_BASE = 1_000_000
# normalisation ranges (degrees) mapped to [-1, 1]; knee runs from 150 down to 0
NORM_RANGES = {"hip": (-45.0, 115.0), "knee": (150.0, 0.0), "ankle": (-45.0, 45.0)}
CURVE_NAMES = ("right_hip", "right_knee", "right_ankle", "left_hip", "left_knee", "left_ankle")


@dataclass
class EvalResult:
    rewards: list
    displacements: list
    lengths: list

    @property
    def mean_reward(self):
        return float(np.mean(self.rewards))

    @property
    def mean_displacement(self):
        return float(np.mean(self.displacements))

    @property
    def mean_length(self):
        return float(np.mean(self.lengths))


def _default_reward(res):
    r = res.reward
    return float(r) if isinstance(r, (float, int, np.floating)) else float(r.total)


def evaluate_policy(policy, env, seq_len, episodes=10, seed_base=EVAL_SEED_BASE) -> EvalResult:
    """Mean episode sum of the default reward, no exploration noise.

    ``policy`` maps a (T, obs) sequence to an action.
    """
    rewards, disp, lengths = [], [], []
    seqs = SequenceBuilder(seq_len)
    for ep in range(episodes):
        seq = seqs.reset(env.reset(seed=seed_base + ep))
        total, n = 0.0, 0
        while True:
            res = env.step(policy(seq))
            total += _default_reward(res)
            n += 1
            seq = seqs.push(res.obs)
            if res.terminal:
                break
        rewards.append(total)
        disp.append(env.state.displacement)
        lengths.append(n)
    return EvalResult(rewards, disp, lengths)


def estimate_q(q_fn, buffer: ReplayBuffer, n=10_000, rng=None, chunk=2000):
    """Average estimated Q over ``n`` buffer samples (with replacement)."""
    if len(buffer) == 0:
        raise ValueError("cannot estimate Q from an empty buffer")
    idx = buffer.sample_indices(n, rng)
    total = 0.0
    for k in range(0, n, chunk):
        part = idx[k:k + chunk]
        total += float(np.sum(q_fn(buffer.s[part], buffer.a[part])))
    return total / n


def discounted_return(rewards, gamma):
    g = 0.0
    for r in reversed(list(rewards)):
        g = r + gamma * g
    return g


def estimate_true_q(actor_fn, env, buffer: ReplayBuffer, gamma, m=1000, rng=None,
                    reward_offset=0.0, horizon=None):
    """Monte-Carlo discounted return of stored (state, action) pairs.

    Each sample restores the stored simulator state, applies the stored
    action, then follows the deterministic policy until a terminal state or
    ``horizon`` steps (default: the env's episode cap).
    """
    if len(buffer) == 0:
        raise ValueError("cannot estimate true Q from an empty buffer")
    idx = buffer.sample_indices(m, rng)
    horizon = horizon or env.cfg.episode_cap
    if hasattr(env, "batch_step"):
        return float(np.mean(_batched_returns(actor_fn, env, buffer, idx, gamma, reward_offset, horizon)))
    returns = []
    seqs = SequenceBuilder(buffer.s.shape[1])
    for i in idx:
        snap = buffer.snapshots[i]
        if snap is None:
            raise ValueError(f"transition {i} carries no simulator snapshot")
        env.restore(snap)
        env.state.step = 0
        seqs.window = buffer.s[i].copy()
        action = buffer.a[i]
        rewards = []
        for _ in range(horizon):
            res = env.step(action)
            rewards.append(reward_offset + _default_reward(res))
            if res.terminal:
                break
            seq = seqs.push(res.obs)
            action = actor_fn(seq[None])[0]
        returns.append(discounted_return(rewards, gamma))
    return float(np.mean(returns))


def _batched_returns(actor_fn, env, buffer, idx, gamma, reward_offset, horizon):
    snaps = [buffer.snapshots[i] for i in idx]
    if any(s is None for s in snaps):
        raise ValueError("transitions carry no simulator snapshots")
    x = np.array([s.x for s in snaps])
    v = np.array([s.v for s in snaps])
    seq = buffer.s[idx].copy()
    actions = buffer.a[idx]
    g = np.zeros(len(idx))
    disc = 1.0
    for _ in range(horizon):
        x, v, r = env.batch_step(x, v, actions)
        g += disc * (reward_offset + r)
        disc *= gamma
        seq = np.concatenate([seq[:, 1:], env.batch_observe(x, v)[:, None, :]], axis=1)
        actions = actor_fn(seq)
    return g


@dataclass
class QErrorReport:
    step: int
    estimated: float
    true: float
    normalized_error: float = field(init=False)

    def __post_init__(self):
        self.normalized_error = (self.estimated - self.true) / self.true if self.true != 0 else float("nan")


def window_mean_abs_error(reports, total_steps, fraction=0.2):
    """Mean |normalised error| over reports in the last ``fraction`` of training."""
    lo = total_steps * (1.0 - fraction)
    vals = [abs(r.normalized_error) for r in reports if r.step >= lo and np.isfinite(r.normalized_error)]
    return float(np.mean(vals)) if vals else float("nan")


def ema_smooth(series, weight=0.8):
    """s_0 = x_0, s_k = w s_{k-1} + (1 - w) x_k, evaluated as s + (1 - w)(x - s)."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    # complement taken in decimal so that e.g. 1 - 0.8 is exactly 0.2
    mix = float(1 - Decimal(repr(float(weight))))
    out = np.empty_like(x)
    out[0] = x[0]
    for k in range(1, x.size):
        out[k] = out[k - 1] + mix * (x[k] - out[k - 1])
    return out


# --------------------------------------------------------------- gait curves


def load_reference_gait(path=None) -> np.ndarray:
    """(100, 3) hip/knee/ankle reference angles in degrees, one gait cycle."""
    if path is None:
        text = resources.files("atd3gait").joinpath("data/reference_gait.csv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    reader = csv.DictReader(rows)
    table = np.array([[float(r["hip"]), float(r["knee"]), float(r["ankle"])] for r in reader])
    if table.shape != (100, 3):
        raise ValueError(f"reference gait must have 100 rows, got {table.shape[0]}")
    return table


def leg_curves(contacts, angles, min_cycle=MIN_CYCLE):
    """Mean resampled (100, 3) curve over this leg's complete gaits, or None."""
    strikes = detect_heel_strikes(contacts)
    curves = [resample_curve(angles[a:b]) for a, b in zip(strikes[:-1], strikes[1:]) if b - a >= min_cycle]
    if not curves:
        return None
    return np.mean(curves, axis=0), len(curves)


def gait_curve_set(right_contacts, left_contacts, angles):
    """(100, 6) curves in radians (CURVE_NAMES order) or None without complete gaits."""
    angles = np.asarray(angles, dtype=np.float64)
    right = leg_curves(right_contacts, angles[:, 0:3])
    left = leg_curves(left_contacts, angles[:, 3:6])
    if right is None or left is None:
        return None
    return np.concatenate([right[0], left[0]], axis=1)


def normalize_curves(curves_deg):
    """Map each joint to [-1, 1] with NORM_RANGES, then subtract the first sample."""
    c = np.array(curves_deg, dtype=np.float64)
    for j in range(c.shape[1]):
        lo, hi = NORM_RANGES[("hip", "knee", "ankle")[j % 3]]
        c[:, j] = 2.0 * (c[:, j] - lo) / (hi - lo) - 1.0
        c[:, j] -= c[0, j]
    return c


def reference_curve_set(reference_deg=None):
    """Six normalised reference curves; both legs follow the same table."""
    ref = load_reference_gait() if reference_deg is None else np.asarray(reference_deg)
    return normalize_curves(np.concatenate([ref, ref], axis=1))


def kinematic_similarity(robot, reference):
    """Mean and per-curve cosine similarity of two normalised curve sets."""
    robot = np.asarray(robot)
    reference = np.asarray(reference)
    if robot.shape != reference.shape:
        raise ValueError(f"curve sets differ in shape: {robot.shape} vs {reference.shape}")
    per = [cosine(robot[:, j], reference[:, j]) for j in range(robot.shape[1])]
    return float(np.mean(per)), per


def similarity_from_trajectory(right_contacts, left_contacts, angles_rad, reference_deg=None):
    """Full pipeline: segment, resample, average, normalise, score. None if no gait."""
    curves = gait_curve_set(right_contacts, left_contacts, angles_rad)
    if curves is None:
        return None
    robot = normalize_curves(np.degrees(curves))
    mean, per = kinematic_similarity(robot, reference_curve_set(reference_deg))
    return {"mean": mean, "per_joint": dict(zip(CURVE_NAMES, per)), "curves": robot}


def synthetic_reference_trajectory(reference_deg=None, cycle=199, n_cycles=4, lead=10, stance=0.6):
    """A walking trace whose every gait replays the reference table.

    Each gait of ``cycle`` steps visits the reference samples at phases
    i / (cycle - 1); the left leg lags by about half a cycle.
    """
    ref = load_reference_gait() if reference_deg is None else np.asarray(reference_deg)
    phase_ref = np.linspace(0.0, 1.0, ref.shape[0])
    one = np.stack([np.interp(np.linspace(0.0, 1.0, cycle), phase_ref, ref[:, j]) for j in range(3)], axis=1)
    half = cycle // 2
    n = lead + n_cycles * cycle + half + 1
    angles = np.zeros((n, 6))
    right = np.zeros(n, dtype=bool)
    left = np.zeros(n, dtype=bool)
    for t in range(n):
        i_r = (t - lead) % cycle
        i_l = (t - lead - half) % cycle
        angles[t, 0:3] = one[i_r]
        angles[t, 3:6] = one[i_l]
        right[t] = t >= lead and i_r < stance * cycle
        left[t] = t >= lead + half and i_l < stance * cycle
    return right, left, np.radians(angles)


def rollout_trace(policy, env, seq_len, seed=EVAL_SEED_BASE):
    """One noise-free walker episode; returns (right, left, angles_rad, displacement)."""
    seqs = SequenceBuilder(seq_len)
    seq = seqs.reset(env.reset(seed=seed))
    right, left, angles = [], [], []
    while True:
        res = env.step(policy(seq))
        st = env.state
        right.append(bool(st.contacts[0]))
        left.append(bool(st.contacts[1]))
        angles.append(np.asarray(st.q[3:], dtype=np.float64))
        seq = seqs.push(res.obs)
        if res.terminal:
            break
    return np.array(right), np.array(left), np.array(angles), float(env.state.displacement)


def record_trajectory(policy, env, seq_len, seed=EVAL_SEED_BASE):
    """One noise-free walker episode as a :class:`TrajectoryRecorder`."""
    from .walker import TrajectoryRecorder

    rec = TrajectoryRecorder()
    seqs = SequenceBuilder(seq_len)
    seq = seqs.reset(env.reset(seed=seed))
    while True:
        action = policy(seq)
        res = env.step(action)
        rec.record(env.state.step, res.obs, action, res.reward, res.terminal)
        seq = seqs.push(res.obs)
        if res.terminal:
            return rec
