from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atd3gait.agent import Hyperparams, Learner, ReplayBuffer
from atd3gait.evaluation import (CURVE_NAMES, QErrorReport, discounted_return, ema_smooth, estimate_q,
                                 estimate_true_q, evaluate_policy, kinematic_similarity, load_reference_gait,
                                 normalize_curves, reference_curve_set, similarity_from_trajectory,
                                 synthetic_reference_trajectory, window_mean_abs_error)
from atd3gait.gait import resample_curve
from atd3gait.pointmass import PointMass1D
from atd3gait.walker import ACT_DIM, Walker2D


def _buffer(n=10, seq_len=1, obs_dim=2):
    buf = ReplayBuffer(100, seq_len, obs_dim, 1, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(n):
        buf.add(rng.normal(size=(seq_len, obs_dim)), rng.uniform(-1, 1, 1), 0.0,
                rng.normal(size=(seq_len, obs_dim)), False)
    return buf


# ------------------------------------------------------------------ estimated Q

class ConstCritic:
    def __init__(self, value):
        self.value = value

    def forward(self, s, a):
        return np.full(s.shape[0], self.value)


def _learner_with_constant_critics(variant):
    learner = Learner(2, 1, Hyperparams(variant=variant, hidden=4), seed=0)
    learner.critic1, learner.critic2 = ConstCritic(2.0), ConstCritic(4.0)
    return learner


def test_estimated_q_mean_of_critics():
    learner = _learner_with_constant_critics("atd3")
    assert estimate_q(learner.q_estimate, _buffer(), n=50) == 3.0


def test_estimated_q_td3_uses_first_critic():
    learner = _learner_with_constant_critics("td3")
    assert estimate_q(learner.q_estimate, _buffer(), n=50) == 2.0


def test_estimated_q_more_samples_than_buffer():
    learner = _learner_with_constant_critics("atd3")
    assert estimate_q(learner.q_estimate, _buffer(n=3), n=10_000) == 3.0


def test_estimated_q_empty_buffer():
    with pytest.raises(ValueError):
        estimate_q(lambda s, a: s, ReplayBuffer(5, 1, 2, 1))


# ----------------------------------------------------------------------- true Q

@dataclass
class ChainState:
    pos: int
    step: int = 0

    def copy(self):
        return ChainState(self.pos, self.step)


@dataclass
class ChainConfig:
    episode_cap: int = 1000


@dataclass
class Step:
    obs: np.ndarray
    reward: float
    terminal: bool


class Chain:
    """Deterministic chain 0 -> 1 -> 2 -> end; every move pays ``rewards[pos]``."""

    def __init__(self, rewards=(1.0, 1.0, 1.0)):
        self.rewards = rewards
        self.cfg = ChainConfig()
        self.state = None

    def restore(self, snap):
        self.state = snap.copy()

    def step(self, action):
        r = self.rewards[self.state.pos] + float(action[0])
        self.state.pos += 1
        self.state.step += 1
        return Step(np.array([float(self.state.pos)]), r, self.state.pos >= len(self.rewards))


def _chain_buffer(starts, actions):
    buf = ReplayBuffer(10, 1, 1, 1, seed=0)
    for p, a in zip(starts, actions):
        buf.add([[float(p)]], [a], 0.0, [[p + 1.0]], False, snapshot=ChainState(p))
    return buf


def zero_actor(seq):
    return np.zeros((seq.shape[0], 1))


def test_true_q_three_step_chain():
    buf = _chain_buffer([0], [0.0])
    assert estimate_true_q(zero_actor, Chain(), buf, 0.5, m=5) == 1.75


def test_true_q_gamma_zero_is_immediate_reward():
    buf = _chain_buffer([0, 1], [0.25, 0.75])
    rng = np.random.default_rng(3)
    idx = buf.sample_indices(40, np.random.default_rng(3))
    expect = np.mean([1.0 + buf.a[i, 0] for i in idx])
    assert estimate_true_q(zero_actor, Chain(), buf, 0.0, m=40, rng=rng) == pytest.approx(expect, abs=1e-15)


def test_true_q_terminal_state_single_step():
    buf = _chain_buffer([2], [0.0])
    assert estimate_true_q(zero_actor, Chain(rewards=(1.0, 1.0, 3.0)), buf, 0.9, m=3) == 3.0


def test_true_q_offset_applied_per_step():
    buf = _chain_buffer([0], [0.0])
    got = estimate_true_q(zero_actor, Chain(), buf, 0.5, m=1, reward_offset=-0.5)
    assert got == pytest.approx(1.75 * 0.5, abs=1e-15)


def test_true_q_requires_snapshots():
    buf = ReplayBuffer(5, 1, 1, 1)
    buf.add([[0.0]], [0.0], 0.0, [[1.0]], False)
    with pytest.raises(ValueError):
        estimate_true_q(zero_actor, Chain(), buf, 0.9, m=1)


def test_true_q_pointmass_batched_matches_loop():
    """The vectorised point-mass rollout equals a step-by-step replay."""
    env = PointMass1D()
    buf = ReplayBuffer(50, 1, 2, 1, seed=1)
    obs = env.reset(seed=0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        snap = env.state.copy()
        a = rng.uniform(-1, 1, 1)
        res = env.step(a)
        buf.add(obs[None], a, 0.0, res.obs[None], res.terminal, snapshot=snap)
        obs = res.obs

    def actor(seq):
        return np.tanh(seq[:, -1, :1] - 0.3 * seq[:, -1, 1:])

    got = estimate_true_q(actor, env, buf, 0.9, m=8, rng=np.random.default_rng(5), horizon=50)
    idx = buf.sample_indices(8, np.random.default_rng(5))
    returns = []
    for i in idx:
        env.restore(buf.snapshots[i])
        action = buf.a[i]
        rewards = []
        for _ in range(50):
            res = env.step(action)
            rewards.append(float(res.reward))
            action = actor(res.obs[None, None, :])[0]
        returns.append(discounted_return(rewards, 0.9))
    assert got == pytest.approx(np.mean(returns), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3).filter(lambda t: abs(t) > 1e-6))
def test_normalized_error_identity(est, true):
    rep = QErrorReport(0, est, true)
    assert est == pytest.approx(true * (1.0 + rep.normalized_error), abs=1e-12, rel=1e-12)


def test_normalized_error_zero_true_is_nan():
    assert np.isnan(QErrorReport(0, 1.0, 0.0).normalized_error)


def test_window_mean_uses_last_fraction():
    reports = [QErrorReport(s, e, 1.0) for s, e in [(1000, 3.0), (8000, 1.5), (9000, 0.5), (10000, 1.0)]]
    # last 20% of 10000 steps: 8000, 9000, 10000 -> |0.5|, |-0.5|, 0
    assert window_mean_abs_error(reports, 10000) == pytest.approx(1.0 / 3.0)


# ------------------------------------------------------------------------ EMA

def test_ema_hand_values():
    np.testing.assert_array_equal(ema_smooth([0.0, 1.0], 0.8), [0.0, 0.2])


def test_ema_constant_and_identity():
    np.testing.assert_array_equal(ema_smooth([3.0] * 5), [3.0] * 5)
    x = [1.0, -2.0, 5.0]
    np.testing.assert_array_equal(ema_smooth(x, 0.0), x)


def test_ema_empty():
    with pytest.raises(ValueError):
        ema_smooth([])


# ----------------------------------------------------------------- resampling

def test_resample_constant_and_endpoints():
    np.testing.assert_array_equal(resample_curve(np.full(37, 2.5)), np.full(100, 2.5))
    ramp = np.linspace(-1.0, 3.0, 13)
    out = resample_curve(ramp)
    assert out[0] == -1.0 and out[-1] == 3.0
    np.testing.assert_allclose(out, np.linspace(-1.0, 3.0, 100), atol=1e-12)


def test_resample_identity_at_100():
    x = np.random.default_rng(0).normal(size=100)
    np.testing.assert_array_equal(resample_curve(x), x)
    np.testing.assert_array_equal(resample_curve(resample_curve(x[:40])), resample_curve(x[:40]))


def test_resample_too_short():
    with pytest.raises(ValueError):
        resample_curve([1.0])


# ----------------------------------------------------------------- similarity

def test_reference_table_shape():
    ref = load_reference_gait()
    assert ref.shape == (100, 3)
    assert np.all(ref[:, 1] >= -5.0)


def test_normalized_curves_start_at_zero():
    ref = reference_curve_set()
    assert ref.shape == (100, 6)
    np.testing.assert_array_equal(ref[0], np.zeros(6))


def test_normalization_ranges():
    deg = np.array([[-45.0, 150.0, -45.0], [115.0, 0.0, 45.0]])
    c = normalize_curves(deg)
    # raw map gives -1 then +1; subtracting the first sample leaves +2
    np.testing.assert_array_equal(c[1], [2.0, 2.0, 2.0])


def test_similarity_identity_negation_orthogonal():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(100, 6))
    assert kinematic_similarity(a, a)[0] == pytest.approx(1.0, abs=1e-12)
    assert kinematic_similarity(-a, a)[0] == pytest.approx(-1.0, abs=1e-12)
    t = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    s, c = np.tile(np.sin(t)[:, None], 6), np.tile(np.cos(t)[:, None], 6)
    assert kinematic_similarity(s, c)[0] == pytest.approx(0.0, abs=1e-12)


def test_similarity_scale_invariant_and_zero_curve():
    a = np.random.default_rng(1).normal(size=(100, 6))
    b = a * np.array([0.1, 2.0, 5.0, 1.0, 3.0, 0.5])
    assert kinematic_similarity(b, a)[0] == pytest.approx(1.0, abs=1e-12)
    z = a.copy()
    z[:, 0] = 0.0
    mean, per = kinematic_similarity(z, a)
    assert per[0] == 0.0
    assert mean == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_similarity_shape_mismatch():
    with pytest.raises(ValueError):
        kinematic_similarity(np.zeros((100, 6)), np.zeros((99, 6)))


def test_synthetic_reference_scores_one():
    right, left, angles = synthetic_reference_trajectory()
    out = similarity_from_trajectory(right, left, angles)
    assert abs(out["mean"] - 1.0) <= 1e-9
    assert set(out["per_joint"]) == set(CURVE_NAMES)


def test_no_complete_gait_gives_none():
    n = 40
    angles = np.zeros((n, 6))
    assert similarity_from_trajectory(np.ones(n, bool), np.ones(n, bool), angles) is None


# ----------------------------------------------------------------- evaluation

def test_evaluate_policy_deterministic():
    env = Walker2D()
    learner = Learner(env.obs_dim, env.act_dim, Hyperparams(variant="atd3_rnn", hidden=8), seed=0)
    a = evaluate_policy(learner.act, env, 2, episodes=2)
    b = evaluate_policy(learner.act, Walker2D(), 2, episodes=2)
    assert a == b


def test_evaluate_policy_immediate_fall():
    env = Walker2D()
    env.cfg.fall_height_ratio = 2.0          # every pose counts as fallen
    res = evaluate_policy(lambda seq: np.zeros(ACT_DIM), env, 1, episodes=3)
    assert res.lengths == [1, 1, 1]
    assert res.mean_reward == pytest.approx(env.cfg.fallen_penalty, abs=0.05)
