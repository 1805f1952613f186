"""Gait segmentation and gait-principle rewards.

A gait runs from one right heel strike to the next (half-open step range);
candidates shorter than ``MIN_CYCLE`` steps are dropped. Each complete gait
gets one scalar reward that is added to every step inside it once the
episode is over.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

MIN_CYCLE = 25
DOUBLE_SUPPORT_LIMIT = 100
GAIT_WINDOW = 500
OFFSET = -0.5
CURVE_LENGTH = 100

GAIT_TERMS = ("r_s", "r_n", "r_lhs", "r_cg", "r_gs")
REWARD_TERMS = ("offset",) + GAIT_TERMS
OPTIMAL_SET = ("offset", "r_s", "r_n", "r_lhs", "r_cg")


@dataclass
class ContactTrace:
    """Per-step contact flags and joint angles of one episode."""

    right: list = field(default_factory=list)
    left: list = field(default_factory=list)
    angles: list = field(default_factory=list)   # 6-vectors, walker joint order

    def append(self, right, left, angles):
        self.right.append(bool(right))
        self.left.append(bool(left))
        self.angles.append(np.asarray(angles, dtype=np.float64))

    def __len__(self):
        return len(self.right)

    def angle_array(self):
        return np.array(self.angles).reshape(len(self.angles), 6)


@dataclass
class GaitSegment:
    start: int
    end: int
    left_strike: int | None
    double_support: list
    stage: int = 1
    rewards: dict = field(default_factory=dict)

    @property
    def cycle(self):
        return self.end - self.start

    @property
    def total(self):
        return float(sum(self.rewards.values()))


def detect_heel_strikes(contacts) -> list[int]:
    """Indices of 0 -> 1 transitions. Index 0 is never a strike."""
    c = np.asarray(contacts, dtype=bool)
    if c.size == 0:
        raise ValueError("empty contact sequence")
    return (np.nonzero(c[1:] & ~c[:-1])[0] + 1).tolist()


def double_support_runs(right, left) -> list[int]:
    """Lengths of maximal runs where both feet are in contact."""
    r = np.asarray(right, dtype=bool)
    l = np.asarray(left, dtype=bool)
    if r.shape != l.shape:
        raise ValueError("contact sequences differ in length")
    both = np.concatenate([[False], r & l, [False]]).astype(np.int8)
    edges = np.diff(both)
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    return (ends - starts).tolist()


def current_double_support(right, left) -> int:
    """Length of the double-support run ending at the last step (0 if none)."""
    n = 0
    for r, l in zip(reversed(right), reversed(left)):
        if not (r and l):
            break
        n += 1
    return n


def reward_double_support(t_s):
    if t_s < 0:
        raise ValueError("double support length must be >= 0")
    if t_s > DOUBLE_SUPPORT_LIMIT:
        return -2.0, True
    return 0.0, False


def reward_gait_number(n_future):
    return 0.05 * n_future


def reward_left_heel_strike(t_lhs, cycle):
    if t_lhs is None:
        return 0.0
    if not 0 <= t_lhs <= cycle:
        raise ValueError("left heel strike must fall inside the gait")
    return 0.2 * (1.0 - math.tanh((t_lhs / cycle - 0.5) ** 2))


def reward_crossover(at_rhs, at_lhs):
    """``at_rhs``/``at_lhs``: joint angles (rh, rk, ra, lh, lk, la) at each strike."""
    if at_lhs is None or at_rhs is None:
        return 0.0
    rh0, rk0, _, lh0, lk0, _ = at_rhs
    rh1, rk1, _, lh1, lk1, _ = at_lhs
    return 0.05 * (math.tanh(rh0 - rk0) + math.tanh(-rh1 + rk1)
                   + math.tanh(-lh0 + lk0) + math.tanh(lh1 - lk1))


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def resample_curve(curve, length=CURVE_LENGTH):
    """Linear interpolation onto ``length`` evenly spaced points, endpoints kept."""
    y = np.asarray(curve, dtype=np.float64)
    if y.shape[0] < 2:
        raise ValueError("need at least two samples to resample")
    if y.shape[0] == length:
        return y.copy()
    src = np.linspace(0.0, 1.0, y.shape[0])
    dst = np.linspace(0.0, 1.0, length)
    if y.ndim == 1:
        return np.interp(dst, src, y)
    return np.stack([np.interp(dst, src, y[:, j]) for j in range(y.shape[1])], axis=1)


def reward_gait_symmetry(right_curves, left_curves):
    """Both arguments: (n, 3) hip/knee/ankle curves of one leg's gait."""
    r = resample_curve(right_curves)
    l = resample_curve(left_curves)
    return (0.2 / 3.0) * sum(cosine(r[:, j], l[:, j]) for j in range(3))


def segment_gaits(trace: ContactTrace) -> list[GaitSegment]:
    if len(trace) == 0:
        return []
    strikes = detect_heel_strikes(trace.right)
    left_strikes = detect_heel_strikes(trace.left)
    segments = []
    for start, end in zip(strikes[:-1], strikes[1:]):
        if end - start < MIN_CYCLE:
            continue
        lhs = next((s for s in left_strikes if start < s < end), None)
        runs = double_support_runs(trace.right[start:end], trace.left[start:end])
        segments.append(GaitSegment(start, end, lhs, runs))
    return segments


def _normalise_terms(terms):
    terms = tuple(terms)
    unknown = set(terms) - set(REWARD_TERMS)
    if unknown:
        raise ValueError(f"unknown reward terms {sorted(unknown)}")
    return terms


def score_segments(trace: ContactTrace, segments, terms=OPTIMAL_SET):
    """Fill ``segment.rewards`` and ``segment.stage`` in place."""
    terms = _normalise_terms(terms)
    angles = trace.angle_array() if len(trace) else np.zeros((0, 6))
    left_strikes = detect_heel_strikes(trace.left) if len(trace) else []
    ends = [s.end for s in segments]
    for k, seg in enumerate(segments):
        # stage 2 once two complete gaits precede this one
        seg.stage = 2 if k >= 2 else 1
        rewards = {}
        if "r_s" in terms:
            rewards["r_s"] = reward_double_support(max(seg.double_support, default=0))[0]
        if seg.stage == 2:
            if "r_n" in terms:
                n_future = sum(1 for e in ends if seg.start < e <= seg.start + GAIT_WINDOW)
                rewards["r_n"] = reward_gait_number(n_future)
            if "r_lhs" in terms:
                t_lhs = None if seg.left_strike is None else seg.left_strike - seg.start
                rewards["r_lhs"] = reward_left_heel_strike(t_lhs, seg.cycle)
            if "r_cg" in terms:
                at_lhs = None if seg.left_strike is None else angles[seg.left_strike]
                rewards["r_cg"] = reward_crossover(angles[seg.start], at_lhs)
            if "r_gs" in terms:
                rewards["r_gs"] = _symmetry_for(seg, angles, left_strikes)
        seg.rewards = rewards
    return segments


def _symmetry_for(seg, angles, left_strikes):
    if seg.left_strike is None:
        return 0.0
    nxt = next((s for s in left_strikes if s > seg.left_strike), None)
    if nxt is None or nxt - seg.left_strike < 2:
        return 0.0
    right = angles[seg.start:seg.end, 0:3]
    left = angles[seg.left_strike:nxt, 3:6]
    return reward_gait_symmetry(right, left)


@dataclass
class EpisodeRewards:
    rewards: np.ndarray
    segments: list
    stage_timeline: list

    def report(self):
        return {
            "length": int(self.rewards.shape[0]),
            "segments": [
                {"start": s.start, "end": s.end, "cycle": s.cycle, "left_strike": s.left_strike,
                 "double_support": list(s.double_support), "stage": s.stage,
                 "rewards": dict(sorted(s.rewards.items())), "total": s.total}
                for s in self.segments
            ],
            "stage_timeline": self.stage_timeline,
        }


def finalize_episode_rewards(trace: ContactTrace | None, default_rewards, terms=OPTIMAL_SET,
                             evaluation=False, amortize=False) -> EpisodeRewards:
    """Per-step training rewards for a finished episode.

    Every step gets ``offset + r_d`` (offset only if enabled); each complete
    gait's scalar reward is added to all steps of that gait, or spread over
    them (divided by the cycle length) when ``amortize`` is set. In
    evaluation mode the default reward is returned untouched.
    """
    rd = np.asarray(default_rewards, dtype=np.float64)
    if evaluation:
        return EpisodeRewards(rd.copy(), [], [])
    terms = _normalise_terms(terms)
    rewards = rd + OFFSET if "offset" in terms else rd.copy()
    gait_terms = [t for t in terms if t in GAIT_TERMS]
    if not gait_terms or trace is None:
        return EpisodeRewards(rewards, [], [])
    if len(trace) != rd.shape[0]:
        raise ValueError("trace and reward lengths differ")
    segments = score_segments(trace, segment_gaits(trace), gait_terms)
    for seg in segments:
        rewards[seg.start:seg.end] += seg.total / seg.cycle if amortize else seg.total
    timeline = [{"step": seg.start, "stage": seg.stage} for seg in segments]
    return EpisodeRewards(rewards, segments, timeline)


def parse_reward_set(spec) -> tuple[str, ...]:
    """'default' | 'optimal' | comma list of REWARD_TERMS."""
    if isinstance(spec, (list, tuple)):
        return _normalise_terms(spec)
    spec = spec.strip()
    if spec in ("default", ""):
        return ()
    if spec == "optimal":
        return OPTIMAL_SET
    return _normalise_terms(t.strip() for t in spec.split(",") if t.strip())


def segment_to_dict(seg: GaitSegment):
    return asdict(seg)
