"""Command-line front end.

    atd3gait train      --variant atd3_rnn --steps 50000 --seeds 1,2,3
    atd3gait evaluate   runs/x/trial0/checkpoint.json
    atd3gait ablate     --steps 50000 --trials 3
    atd3gait qerror     --env pointmass-1d --variants td3,atd3,atd3_rnn
    atd3gait similarity runs/x/trial*/checkpoint.json

Precedence: built-in defaults < ``--config`` JSON file < explicit flags.
The effective configuration is written to ``<out>/<name>/config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .evaluation import (CURVE_NAMES, evaluate_policy, gait_curve_set, kinematic_similarity,
                         load_reference_gait, normalize_curves, record_trajectory, reference_curve_set,
                         rollout_trace)
from .nn import load_checkpoint
from .plotting import joint_angle_figure, learning_curves, q_error_plot
from .training import RunConfig, make_env, run_trials, summarize, write_csv, write_json

log = logging.getLogger("atd3gait")

# incremental reward prefixes: r^d alone, then each term added in turn
ABLATION_ORDER = ("offset", "r_s", "r_n", "r_lhs", "r_cg", "r_gs")
STANDING_DISPLACEMENT = 0.1  # metres; below this a walker trial counts as standing
HYPER_FLAGS = ("variant", "beta", "sigma", "seq_len", "hidden", "start_steps", "batch_size")


def ablation_conditions(n=None):
    conds = [("r_d", ())]
    for k in range(len(ABLATION_ORDER)):
        conds.append(("r_d+" + "+".join(ABLATION_ORDER[:k + 1]), ABLATION_ORDER[:k + 1]))
    return conds if n is None else conds[:n]


def _parse_seeds(text):
    return tuple(int(s) for s in str(text).split(",") if s.strip())


def build_config(args, **overrides) -> RunConfig:
    """Defaults, then the config file, then flags given on the command line."""
    d = RunConfig().to_dict()
    file_keys = set()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(d)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        file_keys = set(file_cfg)
        hyper = dict(d["hyper"])
        hyper.update(file_cfg.pop("hyper", {}))
        d.update(file_cfg)
        d["hyper"] = hyper
    hyper = dict(d["hyper"])
    for key in HYPER_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            hyper[key] = val
    d["hyper"] = hyper
    for key in ("name", "env", "steps", "eval_interval", "eval_episodes", "out", "reward_set"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    seeds = getattr(args, "seeds", None)
    trials = getattr(args, "trials", None)
    if seeds is not None:
        d["seeds"] = _parse_seeds(seeds)
    if trials is not None:
        if seeds is None or len(d["seeds"]) == 1:
            first = d["seeds"][0] if d["seeds"] else 1
            d["seeds"] = tuple(range(first, first + trials))
        elif len(d["seeds"]) != trials:
            raise ValueError("--trials disagrees with the number of --seeds")
    d.update(overrides)
    given = getattr(args, "reward_set", None) is not None or "reward_set" in file_keys
    if d["env"] != "walker2d" and not given:
        d["reward_set"] = []    # gait terms only exist for the walker
    return RunConfig.from_dict(d)


def _run_dir(cfg: RunConfig, sub=None):
    path = Path(cfg.out) / cfg.name
    if sub:
        path = path / sub
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SystemExit(f"cannot create output directory {path}: {exc}")
    return path


def _curve_series(results, key="eval_reward"):
    return [([r["step"] for r in res.log_rows], [r[key] for r in res.log_rows]) for res in results]


def _train_one(cfg: RunConfig, run_dir: Path):
    write_json(run_dir / "config.json", cfg.to_dict())
    results = run_trials(cfg, run_dir)
    summary = summarize(results)
    write_json(run_dir / "summary.json", summary)
    rows = [{"trial": k, "seed": r.seed, "best_eval": r.best_eval, "best_step": r.best_step,
             "best_displacement": summary["best_displacement"][k], "best_length": summary["best_length"][k]}
            for k, r in enumerate(results)]
    rows.append({"trial": "mean", "seed": "", "best_eval": summary["best_eval_mean"], "best_step": "",
                 "best_displacement": "", "best_length": ""})
    rows.append({"trial": "std", "seed": "", "best_eval": summary["best_eval_std"], "best_step": "",
                 "best_displacement": "", "best_length": ""})
    write_csv(run_dir / "summary.csv", ("trial", "seed", "best_eval", "best_step", "best_displacement",
                                        "best_length"), rows)
    return results, summary


# ------------------------------------------------------------------ commands


def cmd_train(args):
    cfg = build_config(args)
    run_dir = _run_dir(cfg)
    results, summary = _train_one(cfg, run_dir)
    label = cfg.hyperparams().variant
    learning_curves({label: _curve_series(results)}, run_dir / "learning_curve.svg")
    print(f"{cfg.name}: best evaluation reward {summary['best_eval_mean']:.2f} "
          f"+/- {summary['best_eval_std']:.2f} over {len(results)} trial(s)")
    return summary


def cmd_ablate(args):
    base = build_config(args)
    run_dir = _run_dir(base)
    write_json(run_dir / "config.json", base.to_dict())
    rows, curves = [], {}
    for cond, terms in ablation_conditions(args.prefixes):
        cfg = RunConfig.from_dict({**base.to_dict(), "reward_set": list(terms),
                                   "name": f"{base.name}/{cond}"})
        results, summary = _train_one(cfg, _run_dir(cfg))
        rows.append({"condition": cond, "mean": summary["best_eval_mean"], "std": summary["best_eval_std"]})
        curves[cond] = _curve_series(results)
        print(f"{cond}: {summary['best_eval_mean']:.2f} +/- {summary['best_eval_std']:.2f}")
    write_csv(run_dir / "summary.csv", ("condition", "mean", "std"), rows)
    write_json(run_dir / "summary.json", {"conditions": rows})
    learning_curves(curves, run_dir / "learning_curves.svg")
    return rows


def cmd_qerror(args):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    base = build_config(args, q_interval=args.q_interval, true_q_interval=args.true_q_interval,
                        q_samples=args.q_samples, true_q_samples=args.true_q_samples)
    if args.reward_set is None:
        base = RunConfig.from_dict({**base.to_dict(), "reward_set": ["offset"]})
    run_dir = _run_dir(base)
    write_json(run_dir / "config.json", {**base.to_dict(), "variants": variants})
    if base.steps == 0:
        log.warning("zero-length training: no Q estimates will be produced")
    rows, series = [], {}
    for variant in variants:
        hyper = {**base.hyper, "variant": variant}
        if variant != "atd3_rnn":
            hyper.pop("seq_len", None)
        cfg = RunConfig.from_dict({**base.to_dict(), "hyper": hyper, "name": f"{base.name}/{variant}"})
        vdir = _run_dir(cfg)
        write_json(vdir / "config.json", cfg.to_dict())
        results = run_trials(cfg, vdir)
        for res in results:
            final = res.log_rows[-1]["eval_displacement"] if res.log_rows else float("nan")
            standing = cfg.env == "walker2d" and not abs(final) > STANDING_DISPLACEMENT
            rows.append({"variant": variant, "seed": res.seed, "q_error_window": res.q_error_window,
                         "final_displacement": final, "standing": standing})
        series[variant] = [([r.step for r in res.q_reports], [r.normalized_error for r in res.q_reports])
                           for res in results]
    summary = {}
    for variant in variants:
        errs = [r["q_error_window"] for r in rows if r["variant"] == variant]
        summary[variant] = {"mean_abs_error": float(np.nanmean(errs)) if errs and not np.all(np.isnan(errs))
                            else float("nan"),
                            "per_seed": errs,
                            "standing_seeds": [r["seed"] for r in rows if r["variant"] == variant and r["standing"]]}
    write_csv(run_dir / "summary.csv", ("variant", "seed", "q_error_window", "final_displacement", "standing"), rows)
    write_json(run_dir / "summary.json", summary)
    q_error_plot(series, run_dir / "q_error.svg")
    for variant, s in summary.items():
        flag = f" (standing: seeds {s['standing_seeds']}, re-run advised)" if s["standing_seeds"] else ""
        print(f"{variant}: last-window mean |normalised Q error| = {s['mean_abs_error']:.4f}{flag}")
    return summary


def _load_policy(path):
    nets, meta, _ = load_checkpoint(path)
    actor = nets.get("best_actor") or nets.get("actor")
    if actor is None:
        raise ValueError(f"{path}: checkpoint holds no actor")
    seq_len = meta["hyperparams"]["seq_len"]
    return actor, meta, seq_len


def cmd_evaluate(args):
    out = {}
    for path in args.checkpoints:
        actor, meta, seq_len = _load_policy(path)
        env = make_env(meta["env"])
        if (env.obs_dim, env.act_dim) != (actor.obs_dim, actor.act_dim):
            raise SystemExit(f"{path}: actor does not match environment {meta['env']}")
        policy = lambda s: actor.forward(s[None])[0]  # noqa: E731
        ev = evaluate_policy(policy, env, seq_len, args.episodes)
        if args.trajectory and meta["env"] == "walker2d":
            traj = Path(path).with_name("trajectory.csv")
            record_trajectory(policy, env, seq_len).write(traj)
        out[str(path)] = {"mean_reward": ev.mean_reward, "mean_displacement": ev.mean_displacement,
                          "mean_length": ev.mean_length, "rewards": ev.rewards}
        print(f"{path}: reward {ev.mean_reward:.2f}, displacement {ev.mean_displacement:.2f}, "
              f"length {ev.mean_length:.0f}")
    if args.output:
        write_json(args.output, out)
    return out


def cmd_similarity(args):
    reference_deg = load_reference_gait(args.reference)
    ref = reference_curve_set(reference_deg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, pooled_curves, robot_curves = {}, [], {}
    for k, path in enumerate(args.checkpoints):
        actor, meta, seq_len = _load_policy(path)
        if meta["env"] != "walker2d":
            raise SystemExit(f"{path}: similarity needs a walker policy")
        env = make_env("walker2d")
        right, left, angles, disp = rollout_trace(lambda s: actor.forward(s[None])[0], env, seq_len)
        curves = gait_curve_set(right, left, angles)
        if curves is None:
            report[str(path)] = {"similarity": None, "note": "no complete gait", "steps": int(len(right))}
            print(f"{path}: no complete gait")
            continue
        norm = normalize_curves(np.degrees(curves))
        mean, per = kinematic_similarity(norm, ref)
        pooled_curves.append(np.degrees(curves))
        robot_curves[f"policy {k}"] = norm
        report[str(path)] = {"similarity": mean, "per_joint": dict(zip(CURVE_NAMES, per)),
                             "steps": int(len(right)), "displacement": disp}
        print(f"{path}: similarity {mean:.4f}")
    pooled = None
    if pooled_curves:
        pooled = kinematic_similarity(normalize_curves(np.mean(pooled_curves, axis=0)), ref)[0]
        joint_angle_figure(robot_curves, ref, out_dir / "joint_angles.svg")
        print(f"pooled similarity {pooled:.4f}")
    doc = {"checkpoints": report, "pooled": pooled}
    write_json(out_dir / "similarity.json", doc)
    return doc


# -------------------------------------------------------------------- parser


def _add_run_flags(p, reward_default_hint=""):
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--name", help="run name (directory under --out)")
    p.add_argument("--out", help="output root (default runs)")
    p.add_argument("--env", choices=("walker2d", "pointmass-1d"))
    p.add_argument("--variant", choices=("td3", "atd3", "atd3_rnn"))
    p.add_argument("--reward-set", dest="reward_set",
                   help="'default', 'optimal' or a comma list of offset,r_s,r_n,r_lhs,r_cg,r_gs"
                   + reward_default_hint)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", dest="seeds", type=str, help="single seed")
    p.add_argument("--seeds", dest="seeds", type=str, help="comma list of seeds")
    p.add_argument("--trials", type=int, help="number of trials (seeds counted up from the first)")
    p.add_argument("--eval-interval", dest="eval_interval", type=int)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--start-steps", dest="start_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="atd3gait", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over several seeds")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="incremental reward ablation")
    _add_run_flags(p)
    p.add_argument("--prefixes", type=int, default=None, help="run only the first N conditions")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("qerror", help="estimated vs Monte-Carlo Q-value error")
    _add_run_flags(p, " (default: offset only)")
    p.add_argument("--variants", default="td3,atd3,atd3_rnn")
    p.add_argument("--q-interval", dest="q_interval", type=int, default=1000)
    p.add_argument("--true-q-interval", dest="true_q_interval", type=int, default=10_000)
    p.add_argument("--q-samples", dest="q_samples", type=int, default=10_000)
    p.add_argument("--true-q-samples", dest="true_q_samples", type=int, default=1000)
    p.set_defaults(func=cmd_qerror)

    p = sub.add_parser("evaluate", help="noise-free evaluation of saved policies")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--output", help="write results to this JSON file")
    p.add_argument("--trajectory", action="store_true",
                   help="also write a per-step trajectory.csv next to each walker checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("similarity", help="kinematic similarity against the reference gait")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--reference", help="CSV with percent,hip,knee,ankle (degrees)")
    p.add_argument("--out", default="similarity")
    p.set_defaults(func=cmd_similarity)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        parser.exit(2, f"atd3gait: error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
