from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atd3gait import gait
from atd3gait.evaluation import synthetic_reference_trajectory
from atd3gait.gait import (ContactTrace, current_double_support, detect_heel_strikes, double_support_runs,
                           finalize_episode_rewards, parse_reward_set, resample_curve, reward_crossover,
                           reward_double_support, reward_gait_number, reward_gait_symmetry,
                           reward_left_heel_strike, score_segments, segment_gaits)

getcontext().prec = 40


def dec_tanh(x):
    e = (2 * Decimal(x)).exp()
    return (e - 1) / (e + 1)


# high-precision hand evaluations, independent of math.tanh
LHS_AT_EDGE = float(Decimal("0.2") * (1 - dec_tanh("0.25")))
CG_ALL_04 = float(Decimal("0.05") * 4 * dec_tanh("0.4"))


def trace_from(right, left, angles=None):
    tr = ContactTrace()
    n = len(right)
    angles = np.zeros((n, 6)) if angles is None else angles
    for k in range(n):
        tr.append(right[k], left[k], angles[k])
    return tr


# ---------------------------------------------------------------- events


@pytest.mark.parametrize("contacts,expected", [([0, 0, 1, 1], [2]), ([1, 1, 1, 1], []), ([0, 1, 0, 1], [1, 3])])
def test_detect_heel_strikes(contacts, expected):
    assert detect_heel_strikes(contacts) == expected


def test_detect_heel_strikes_empty():
    with pytest.raises(ValueError):
        detect_heel_strikes([])


@pytest.mark.parametrize("right,left,expected", [([1, 1, 1], [1, 1, 1], [3]), ([1, 0, 1], [1, 1, 1], [1, 1]),
                                                 ([1, 0, 1, 0], [0, 1, 0, 1], [])])
def test_double_support_runs(right, left, expected):
    assert double_support_runs(right, left) == expected


def test_double_support_length_mismatch():
    with pytest.raises(ValueError):
        double_support_runs([1, 1], [1])


def test_current_double_support():
    assert current_double_support([1, 1, 0, 1, 1], [1, 1, 1, 1, 1]) == 2
    assert current_double_support([1, 0], [1, 1]) == 0
    assert current_double_support([], []) == 0


# ------------------------------------------------------------ sub-rewards


def test_double_support_reward():
    assert reward_double_support(150) == (-2.0, True)
    assert reward_double_support(100) == (0.0, False)
    assert reward_double_support(0) == (0.0, False)
    with pytest.raises(ValueError):
        reward_double_support(-1)


@pytest.mark.parametrize("n,expected", [(6, 0.30), (0, 0.0), (4, 0.20)])
def test_gait_number_reward(n, expected):
    assert abs(reward_gait_number(n) - expected) < 1e-9


def test_left_heel_strike_reward():
    assert abs(reward_left_heel_strike(50, 100) - 0.2) < 1e-9
    assert abs(reward_left_heel_strike(0, 100) - LHS_AT_EDGE) < 1e-9
    assert abs(reward_left_heel_strike(100, 100) - LHS_AT_EDGE) < 1e-9
    # quoted approximation of the same value
    assert reward_left_heel_strike(0, 100) == pytest.approx(0.151015, abs=2e-6)
    assert reward_left_heel_strike(None, 100) == 0.0
    with pytest.raises(ValueError):
        reward_left_heel_strike(120, 100)


def test_crossover_reward():
    assert reward_crossover(np.zeros(6), np.zeros(6)) == 0.0
    # arguments: rh0 - rk0, -rh1 + rk1, -lh0 + lk0, lh1 - lk1, all 0.4
    at_rhs = np.array([0.4, 0.0, 0.0, 0.0, 0.4, 0.0])
    at_lhs = np.array([0.0, 0.4, 0.0, 0.4, 0.0, 0.0])
    assert abs(reward_crossover(at_rhs, at_lhs) - CG_ALL_04) < 1e-9
    assert abs(CG_ALL_04 - 0.075989) < 1e-6
    a = 0.7
    # arguments +a, -a, +a, -a
    at_rhs = np.array([a, 0.0, 0.0, 0.0, a, 0.0])
    at_lhs = np.array([a, 0.0, 0.0, 0.0, a, 0.0])
    assert abs(reward_crossover(at_rhs, at_lhs)) < 1e-15
    assert reward_crossover(at_rhs, None) == 0.0


def test_gait_symmetry_reward():
    rng = np.random.default_rng(0)
    right = rng.normal(size=(40, 3))
    assert abs(reward_gait_symmetry(right, right) - 0.2) < 1e-9
    assert abs(reward_gait_symmetry(right, -right) + 0.2) < 1e-9
    t = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    sin3 = np.stack([np.sin(t)] * 3, axis=1)
    cos3 = np.stack([np.cos(t)] * 3, axis=1)
    assert abs(reward_gait_symmetry(sin3, cos3)) < 1e-9
    # zero-norm joint contributes nothing
    zero = right.copy()
    zero[:, 0] = 0.0
    assert abs(reward_gait_symmetry(right, zero) - 0.2 * 2 / 3) < 1e-9


def test_gait_symmetry_resamples_different_lengths():
    t1 = np.linspace(0, 1, 30)
    t2 = np.linspace(0, 1, 70)
    a = np.stack([t1, t1 ** 2, np.sin(t1)], axis=1)
    b = np.stack([t2, t2 ** 2, np.sin(t2)], axis=1)
    assert reward_gait_symmetry(a, b) == pytest.approx(0.2, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(t=st.integers(0, 300), extra=st.integers(0, 300),
       angles=st.lists(st.floats(-3, 3), min_size=12, max_size=12))
def test_reward_ranges(t, extra, angles):
    T = max(t, 1) + extra
    assert 0.0 < reward_left_heel_strike(min(t, T), T) <= 0.2
    cg = reward_crossover(np.array(angles[:6]), np.array(angles[6:]))
    assert -0.2 < cg < 0.2


# ----------------------------------------------------------- segmentation


def periodic_trace(cycle=40, n_cycles=5, lead=5, stance=0.6, left_shift=None, tail=3):
    n = lead + n_cycles * cycle + tail
    left_shift = cycle // 2 if left_shift is None else left_shift
    right = np.zeros(n, dtype=bool)
    left = np.zeros(n, dtype=bool)
    for t in range(lead, n):
        right[t] = (t - lead) % cycle < stance * cycle
        left[t] = t >= lead + left_shift and (t - lead - left_shift) % cycle < stance * cycle
    return right, left


def test_segments_from_periodic_trace():
    right, left = periodic_trace()
    segs = segment_gaits(trace_from(right, left))
    strikes = detect_heel_strikes(right)
    assert [s.start for s in segs] == strikes[:-1]
    assert all(s.cycle == 40 for s in segs)
    assert all(s.left_strike == s.start + 20 for s in segs)


def test_short_candidates_discarded():
    right = np.array([0] + [1, 0] * 10 + [1] + [0] * 30 + [1, 1], dtype=bool)
    segs = segment_gaits(trace_from(right, np.zeros_like(right)))
    assert all(s.cycle >= gait.MIN_CYCLE for s in segs)
    assert len(segs) == 1


def test_cycle_of_exactly_min_is_kept():
    right = np.zeros(60, dtype=bool)
    right[[5, 5 + 25, 5 + 25 + 24]] = True
    segs = segment_gaits(trace_from(right, np.zeros_like(right)))
    assert [s.cycle for s in segs] == [25]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=400), st.lists(st.booleans(), min_size=400, max_size=400))
def test_segmentation_partition_properties(right, left):
    left = left[:len(right)]
    tr = trace_from(right, left)
    segs = score_segments(tr, segment_gaits(tr), gait.OPTIMAL_SET + ("r_gs",))
    for a, b in zip(segs, segs[1:]):
        assert a.end <= b.start
    for k, s in enumerate(segs):
        assert s.cycle >= gait.MIN_CYCLE
        assert right[s.start] and not right[s.start - 1]
        assert right[s.end] and not right[s.end - 1]
        assert s.stage == (2 if k >= 2 else 1)
        assert s.rewards.get("r_s", 0.0) in (0.0, -2.0)
        if "r_gs" in s.rewards:
            assert -0.2 - 1e-12 <= s.rewards["r_gs"] <= 0.2 + 1e-12
    stages = [s.stage for s in segs]
    assert stages == sorted(stages)


def test_stage_two_terms_only_after_two_gaits():
    right, left = periodic_trace(n_cycles=5)
    tr = trace_from(right, left)
    segs = score_segments(tr, segment_gaits(tr), gait.OPTIMAL_SET)
    assert set(segs[0].rewards) == {"r_s"}
    assert set(segs[1].rewards) == {"r_s"}
    assert set(segs[2].rewards) == {"r_s", "r_n", "r_lhs", "r_cg"}
    # left strike at the midpoint of a 40-step gait
    assert segs[2].rewards["r_lhs"] == pytest.approx(0.2)


def test_gait_number_counts_from_segment_start():
    right, left = periodic_trace(cycle=40, n_cycles=20)
    tr = trace_from(right, left)
    segs = score_segments(tr, segment_gaits(tr), ("r_n",))
    # ends in (start, start + 500] for a 40-step cycle: 12 gaits, truncated near the end
    assert segs[2].rewards["r_n"] == pytest.approx(0.05 * 12)
    assert segs[-1].rewards["r_n"] == pytest.approx(0.05)


def test_long_double_support_penalised():
    right = np.zeros(300, dtype=bool)
    left = np.zeros(300, dtype=bool)
    right[[10, 200]] = True
    right[10:150] = True
    left[20:140] = True       # 120 steps of double support
    tr = trace_from(right, left)
    segs = score_segments(tr, segment_gaits(tr), ("r_s",))
    assert segs[0].double_support == [120]
    assert segs[0].rewards["r_s"] == -2.0


# ------------------------------------------------------------ finalisation


def test_finalize_without_gait():
    rd = np.array([1.0, 0.5, -0.25])
    tr = trace_from([1, 1, 1], [1, 1, 1])
    out = finalize_episode_rewards(tr, rd, gait.OPTIMAL_SET).rewards
    np.testing.assert_array_equal(out, rd - 0.5)


def test_finalize_adds_gait_reward_to_segment():
    n = 80
    right = np.zeros(n, dtype=bool)
    right[[10, 60]] = True
    tr = trace_from(right, np.zeros(n, dtype=bool))
    seg = gait.GaitSegment(10, 60, None, [], rewards={"r_lhs": 0.2})
    rd = np.zeros(n)
    out = finalize_episode_rewards(tr, rd, ("offset",)).rewards
    out[seg.start:seg.end] += seg.total
    expected = np.full(n, -0.5)
    expected[10:60] += 0.2
    np.testing.assert_array_equal(out, expected)


def test_finalize_segment_distribution_matches_scores():
    right, left = periodic_trace(n_cycles=6)
    n = len(right)
    rng = np.random.default_rng(0)
    angles = rng.normal(scale=0.3, size=(n, 6))
    tr = trace_from(right, left, angles)
    rd = rng.normal(size=n)
    fin = finalize_episode_rewards(tr, rd, gait.OPTIMAL_SET)
    expected = rd - 0.5
    for s in fin.segments:
        expected[s.start:s.end] += s.total
    np.testing.assert_array_equal(fin.rewards, expected)
    amort = finalize_episode_rewards(tr, rd, gait.OPTIMAL_SET, amortize=True)
    assert amort.rewards.sum() == pytest.approx((rd - 0.5).sum() + sum(s.total for s in fin.segments))


def test_finalize_evaluation_mode_returns_default():
    rd = np.array([0.3, -1.0, 2.0])
    out = finalize_episode_rewards(trace_from([1, 0, 1], [0, 1, 1]), rd, gait.OPTIMAL_SET, evaluation=True)
    np.testing.assert_array_equal(out.rewards, rd)


def test_finalize_length_mismatch():
    with pytest.raises(ValueError):
        finalize_episode_rewards(trace_from([1, 0], [0, 1]), np.zeros(3), gait.OPTIMAL_SET)


def test_sum_property_on_recorded_walk():
    right, left, angles = synthetic_reference_trajectory(cycle=60, n_cycles=8)
    rd = np.random.default_rng(5).normal(size=len(right))
    fin = finalize_episode_rewards(trace_from(right, left, angles), rd, gait.REWARD_TERMS)
    assert len(fin.segments) >= 3
    expected = np.sum(rd - 0.5) + sum(s.total * s.cycle for s in fin.segments)
    assert abs(fin.rewards.sum() - expected) < 1e-9


def test_report_structure():
    right, left = periodic_trace(n_cycles=4)
    fin = finalize_episode_rewards(trace_from(right, left), np.zeros(len(right)), gait.OPTIMAL_SET)
    rep = fin.report()
    assert rep["length"] == len(right)
    assert [s["stage"] for s in rep["segments"]] == [1, 1, 2, 2]
    assert rep["stage_timeline"][2] == {"step": rep["segments"][2]["start"], "stage": 2}


# ---------------------------------------------------------- reward sets


def test_parse_reward_set():
    assert parse_reward_set("default") == ()
    assert parse_reward_set("optimal") == ("offset", "r_s", "r_n", "r_lhs", "r_cg")
    assert parse_reward_set("offset, r_gs") == ("offset", "r_gs")
    with pytest.raises(ValueError):
        parse_reward_set("offset,r_fly")


# ---------------------------------------------------------------- resample


def test_resample_properties():
    np.testing.assert_array_equal(resample_curve(np.full(37, 2.5)), np.full(100, 2.5))
    ramp = resample_curve(np.linspace(-1.0, 3.0, 13))
    assert ramp[0] == -1.0 and ramp[-1] == 3.0
    x = np.random.default_rng(0).normal(size=100)
    np.testing.assert_array_equal(resample_curve(x), x)
    with pytest.raises(ValueError):
        resample_curve([1.0])
