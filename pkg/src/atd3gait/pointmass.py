"""One-dimensional double-integrator reach task.

A toy environment for fast Q-value studies: the learner is unchanged, only
the dynamics are cheap. Position is kept inside a wall at +/- ``bound``.
Vectorised dynamics make the Monte-Carlo true-Q rollouts cheap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PointMassState:
    x: float
    v: float
    step: int = 0
    x0: float = 0.0

    def copy(self):
        return PointMassState(self.x, self.v, self.step, self.x0)

    @property
    def displacement(self):
        return self.x - self.x0


@dataclass
class PointMassConfig:
    dt: float = 0.05
    force: float = 1.0
    bound: float = 2.0
    start_range: float = 1.0
    position_cost: float = 1.0
    action_cost: float = 0.01
    episode_cap: int = 1000


def dynamics(x, v, a, cfg: PointMassConfig):
    """Semi-implicit Euler step; works on scalars or arrays. Returns (x, v, reward)."""
    a = np.clip(a, -1.0, 1.0)
    v = v + cfg.dt * cfg.force * a
    x = x + cfg.dt * v
    hit = np.abs(x) > cfg.bound
    x = np.clip(x, -cfg.bound, cfg.bound)
    v = np.where(hit, 0.0, v)
    reward = -(cfg.position_cost * x * x + cfg.action_cost * a * a)
    return x, v, reward


class PointMass1D:
    obs_dim = 2
    act_dim = 1
    name = "pointmass-1d"

    def __init__(self, config: PointMassConfig | None = None):
        self.cfg = config or PointMassConfig()
        self.state: PointMassState | None = None

    def reset(self, seed=None, perturb=True):
        rng = np.random.default_rng(seed)
        x = float(rng.uniform(-self.cfg.start_range, self.cfg.start_range)) if perturb else self.cfg.start_range
        self.state = PointMassState(x, 0.0, 0, x)
        return self.observe()

    def observe(self, state=None):
        st = state or self.state
        return np.array([st.x, st.v])

    def step(self, action):
        from .walker import StepResult

        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (1,) or not np.isfinite(a[0]):
            raise ValueError("pointmass action must be one finite value")
        st = self.state
        x, v, r = dynamics(st.x, st.v, a[0], self.cfg)
        st.x, st.v = float(x), float(v)
        st.step += 1
        truncated = st.step >= self.cfg.episode_cap
        return StepResult(self.observe(), float(r), truncated,
                          {"fallen": False, "truncated": truncated, "error": False})

    def snapshot(self):
        return self.state.copy()

    def restore(self, state):
        self.state = state.copy()

    # vectorised helpers for batched rollouts
    def batch_observe(self, x, v):
        return np.stack([x, v], axis=-1)

    def batch_step(self, x, v, actions):
        return dynamics(x, v, actions[:, 0], self.cfg)
