"""Episode loop: acting, deferred reward finalisation, training, logging."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gait
from .agent import Hyperparams, Learner, ReplayBuffer, SequenceBuilder
from .evaluation import (EvalResult, QErrorReport, estimate_q, estimate_true_q, evaluate_policy,
                         window_mean_abs_error)
from .nn import save_checkpoint
from .pointmass import PointMass1D
from .walker import RobotConfig, Walker2D

log = logging.getLogger(__name__)

ENVS = ("walker2d", "pointmass-1d")


@dataclass
class RunConfig:
    name: str = "run"
    env: str = "walker2d"
    hyper: dict = field(default_factory=dict)
    reward_set: tuple = gait.OPTIMAL_SET
    steps: int = 50_000
    eval_interval: int = 5000
    eval_episodes: int = 10
    seeds: tuple = (1, 2, 3)
    out: str = "runs"
    robot: dict = field(default_factory=dict)
    amortize_gait_reward: bool = False
    # Q-value study (0 disables)
    q_interval: int = 0
    true_q_interval: int = 0
    q_samples: int = 10_000
    true_q_samples: int = 1000

    def __post_init__(self):
        self.reward_set = gait.parse_reward_set(self.reward_set)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.env not in ENVS:
            raise ValueError(f"env must be one of {ENVS}")
        if self.env != "walker2d" and any(t in gait.GAIT_TERMS for t in self.reward_set):
            raise ValueError(f"gait reward terms need a legged env, not {self.env}")
        if self.steps < 0 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("steps must be >= 0; eval_interval and eval_episodes >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.hyperparams()  # validates overrides early

    @property
    def trials(self):
        return len(self.seeds)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams.from_dict(dict(self.hyper))

    def to_dict(self):
        d = asdict(self)
        d["reward_set"] = list(self.reward_set)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def make_env(name, robot=None):
    if name == "walker2d":
        return Walker2D(RobotConfig.from_dict(robot or {}))
    if name == "pointmass-1d":
        return PointMass1D()
    raise ValueError(f"unknown env {name!r}")


@dataclass
class TrialResult:
    seed: int
    log_rows: list
    q_reports: list
    best_eval: float
    best_step: int
    best_eval_result: EvalResult | None
    learner: Learner
    best_actor_params: np.ndarray
    gait_reports: list
    final_eval: EvalResult | None = None

    @property
    def q_error_window(self):
        return window_mean_abs_error(self.q_reports, self.total_steps) if self.q_reports else float("nan")

    total_steps: int = 0


LOG_FIELDS = ("step", "episodes", "train_episode_reward", "eval_reward", "eval_displacement",
              "eval_length", "critic1_loss", "critic2_loss", "actor_loss", "estimated_q")


def run_trial(cfg: RunConfig, seed: int, keep_gait_reports=5) -> TrialResult:
    """Train one learner for ``cfg.steps`` environment steps."""
    hp = cfg.hyperparams()
    env = make_env(cfg.env, cfg.robot)
    eval_env = make_env(cfg.env, cfg.robot)
    learner = Learner(env.obs_dim, env.act_dim, hp, seed=seed)
    buffer = ReplayBuffer(min(hp.buffer_capacity, max(cfg.steps, 1)), hp.seq_len, env.obs_dim,
                          env.act_dim, seed=[seed, 2])
    explore_rng = np.random.default_rng([seed, 3])
    q_rng = np.random.default_rng([seed, 4])
    seqs = SequenceBuilder(hp.seq_len)
    use_gait = any(t in gait.GAIT_TERMS for t in cfg.reward_set)
    stop_on_double_support = "r_s" in cfg.reward_set and cfg.env == "walker2d"
    offset = gait.OFFSET if "offset" in cfg.reward_set else 0.0

    rows, q_reports, gait_reports = [], [], []
    best = (-np.inf, 0, None, learner.actor.params.copy())
    last_train_reward = float("nan")
    last_q = float("nan")
    step = 0
    episode = 0
    t0 = time.perf_counter()

    def policy(seq):
        return learner.act(seq)

    while step < cfg.steps:
        seq = seqs.reset(env.reset(seed=[seed, 5, episode]))
        trace = gait.ContactTrace() if use_gait else None
        s_list, a_list, rd_list, s2_list, d_list, snaps = [], [], [], [], [], []
        while True:
            snaps.append(env.snapshot())
            action = learner.select_action(seq, hp.sigma, explore_rng, global_step=step)
            res = env.step(action)
            next_seq = seqs.push(res.obs)
            rd = res.reward if cfg.env == "pointmass-1d" else res.reward.total
            done = bool(res.info.get("fallen", False))
            if trace is not None:
                st = env.state
                trace.append(st.contacts[0], st.contacts[1], st.q[3:])
                if stop_on_double_support and not done:
                    ds = gait.current_double_support(trace.right, trace.left)
                    done = gait.reward_double_support(ds)[1]
            s_list.append(seq)
            a_list.append(action)
            rd_list.append(rd)
            s2_list.append(next_seq)
            d_list.append(done)
            seq = next_seq
            step += 1

            if cfg.q_interval and step % cfg.q_interval == 0 and len(buffer):
                last_q = estimate_q(learner.q_estimate, buffer, cfg.q_samples, q_rng)
                if cfg.true_q_interval and step % cfg.true_q_interval == 0:
                    true_q = estimate_true_q(learner.actor.forward, eval_env, buffer, hp.gamma,
                                             cfg.true_q_samples, q_rng, reward_offset=offset)
                    q_reports.append(QErrorReport(step, last_q, true_q))
            if cfg.eval_interval and step % cfg.eval_interval == 0:
                ev = evaluate_policy(policy, eval_env, hp.seq_len, cfg.eval_episodes)
                if ev.mean_reward > best[0]:
                    best = (ev.mean_reward, step, ev, learner.actor.params.copy())
                losses = learner.last
                rows.append({"step": step, "episodes": episode, "train_episode_reward": last_train_reward,
                             "eval_reward": ev.mean_reward, "eval_displacement": ev.mean_displacement,
                             "eval_length": ev.mean_length, "critic1_loss": losses["critic1_loss"],
                             "critic2_loss": losses["critic2_loss"], "actor_loss": losses["actor_loss"],
                             "estimated_q": last_q})
                log.info("seed %s step %d eval %.2f disp %.2f len %.0f (%.0fs)", seed, step,
                         ev.mean_reward, ev.mean_displacement, ev.mean_length, time.perf_counter() - t0)
            if done or res.terminal or step >= cfg.steps:
                break

        fin = gait.finalize_episode_rewards(trace, rd_list, cfg.reward_set,
                                            amortize=cfg.amortize_gait_reward)
        if use_gait and len(gait_reports) < keep_gait_reports and fin.segments:
            gait_reports.append({"episode": episode, **fin.report()})
        for k in range(len(rd_list)):
            buffer.add(s_list[k], a_list[k], fin.rewards[k], s2_list[k], d_list[k], snaps[k])
        last_train_reward = float(np.sum(fin.rewards))
        learner.train_after_episode(buffer, len(rd_list))
        episode += 1

    result = TrialResult(seed, rows, q_reports, best[0], best[1], best[2], learner, best[3],
                         gait_reports, total_steps=cfg.steps)
    return result


# ------------------------------------------------------------------ output


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in fieldnames])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def save_trial(result: TrialResult, cfg: RunConfig, trial_dir: Path):
    trial_dir.mkdir(parents=True, exist_ok=True)
    write_csv(trial_dir / "log.csv", LOG_FIELDS, result.log_rows)
    learner = result.learner
    best_actor = learner.actor.copy()
    best_actor.params[:] = result.best_actor_params
    nets = {**learner.networks(), "best_actor": best_actor}
    meta = {"env": cfg.env, "seed": result.seed, "step": cfg.steps, "best_step": result.best_step,
            "hyperparams": cfg.hyperparams().to_dict(), "reward_set": list(cfg.reward_set)}
    save_checkpoint(trial_dir / "checkpoint.json", nets, meta, learner.state_extra())
    write_json(trial_dir / "gait.json", {"episodes": result.gait_reports})
    if cfg.q_interval or cfg.true_q_interval:
        write_csv(trial_dir / "qerror.csv", ("step", "estimated_q", "true_q", "normalized_error"),
                  [{"step": r.step, "estimated_q": r.estimated, "true_q": r.true,
                    "normalized_error": r.normalized_error} for r in result.q_reports])


def run_trials(cfg: RunConfig, out_dir: Path | None = None):
    """Train every seed; write per-trial artefacts if ``out_dir`` is given."""
    results = []
    for k, seed in enumerate(cfg.seeds):
        t0 = time.perf_counter()
        res = run_trial(cfg, seed)
        log.info("trial %d (seed %d) finished in %.1fs, best eval %.2f", k, seed,
                 time.perf_counter() - t0, res.best_eval)
        if out_dir is not None:
            save_trial(res, cfg, Path(out_dir) / f"trial{k}")
        results.append(res)
    return results


def summarize(results) -> dict:
    best = np.array([r.best_eval for r in results])
    summary = {
        "trials": len(results),
        "seeds": [r.seed for r in results],
        "best_eval_mean": float(best.mean()),
        "best_eval_std": float(best.std()),
        "best_eval": best.tolist(),
        "best_displacement": [r.best_eval_result.mean_displacement if r.best_eval_result else None
                              for r in results],
        "best_length": [r.best_eval_result.mean_length if r.best_eval_result else None for r in results],
    }
    if any(r.q_reports for r in results):
        errs = [r.q_error_window for r in results]
        summary["q_error_window"] = errs
        summary["q_error_window_mean"] = float(np.nanmean(errs))
    return summary
