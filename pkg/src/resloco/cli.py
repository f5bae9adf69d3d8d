"""Command-line entry point: gen / train / eval / ablate / plot-data.

Exit codes: 0 success, 2 configuration error, 3 runtime divergence or
unexpected failure, 4 resume mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import (ConfigError, RunConfig, config_hash, load_config,
                     save_config, validate)
from .curriculum import RandomizationRanges
from .env import EnvConfig, TrackingEnv
from .evaluate import compare, evaluate, save_report
from .net import load_params
from .oracles import oracle_metrics, report
from .policy import observation_manifest
from .refgen import (TASKS, generate_gmt_corpus, generate_task_reference,
                     inject_retarget_artifacts, load_trajectory,
                     oracle_contacts_from_geometry, save_trajectory)
from .robot import compile_model, default_humanoid, load_model
from .trainer import (PolicyBundle, ResumeMismatch, convergence_iteration,
                      load_checkpoint, make_bundle, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_RESUME = 4


def _arrays(cfg: RunConfig = None):
    if cfg is not None and cfg.model_file:
        return compile_model(load_model(cfg.model_file))
    return compile_model(default_humanoid())


def _reference(cfg: RunConfig, arrays):
    if cfg.reference_file:
        return load_trajectory(cfg.reference_file)
    traj = generate_task_reference(cfg.task, arrays, seed=cfg.ref_seed)
    if cfg.penetration > 0 or cfg.float_offset > 0:
        traj = inject_retarget_artifacts(traj, arrays,
                                         penetration=cfg.penetration,
                                         float_offset=cfg.float_offset)
        traj = oracle_contacts_from_geometry(traj, arrays,
                                             cfg.reward.sigma_c)
    return traj


def _make_envs(cfg: RunConfig, trajs, arrays):
    ranges = cfg.ranges if cfg.randomize else RandomizationRanges.disabled()
    env_cfg = EnvConfig(stage=cfg.stage, physics_label=cfg.physics_label,
                        reward=cfg.reward, ranges=ranges,
                        phase_random=cfg.phase_random)
    return [TrackingEnv(trajs, arrays, env_cfg, run_seed=cfg.seed,
                        env_index=e) for e in range(cfg.ppo.envs)]


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    arrays = _arrays()
    os.makedirs(args.out, exist_ok=True)
    if args.gmt_corpus:
        trajs = generate_gmt_corpus(arrays, args.count, args.seed)
        for i, traj in enumerate(trajs):
            family = traj.task.split(":")[1]
            path = os.path.join(args.out, f"gmt_{i:03d}_{family}.json")
            save_trajectory(traj, path)
        print(f"wrote {len(trajs)} corpus files to {args.out}")
        return EXIT_OK
    if args.task is None:
        raise ConfigError("need --task or --gmt-corpus")
    traj = generate_task_reference(args.task, arrays, seed=args.seed)
    if args.penetration > 0 or args.float_offset > 0:
        traj = inject_retarget_artifacts(traj, arrays,
                                         penetration=args.penetration,
                                         float_offset=args.float_offset)
        traj = oracle_contacts_from_geometry(traj, arrays)
    path = os.path.join(args.out, f"{args.task}_seed{args.seed}.json")
    save_trajectory(traj, path)
    n_contact = int(np.sum(traj.contacts.any(axis=1)))
    print(f"wrote {path}: {traj.n_frames} frames at {traj.fps:g} Hz, "
          f"{n_contact} contact-phase frames"
          + (f", penetration {traj.artifact_pen:g} m"
             if traj.artifact_pen else "")
          + (f", float {traj.artifact_float:g} m"
             if traj.artifact_float else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["ppo"] = replace(cfg.ppo, seed=args.seed)
    if args.iterations is not None:
        ppo = overrides.get("ppo", cfg.ppo)
        overrides["ppo"] = replace(ppo, total_iterations=args.iterations)
    if args.out is not None:
        overrides["out_dir"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    validate(cfg)
    arrays = _arrays(cfg)
    if args.dry_run:
        print(f"config ok, hash {config_hash(cfg)}")
        print(f"{'block':<20} {'offset':>8} {'length':>8}")
        for name, off, length in observation_manifest(arrays.n_joints,
                                                      cfg.stage):
            print(f"{name:<20} {off:>8} {length:>8}")
        return EXIT_OK
    if cfg.stage == "gmt":
        trajs = generate_gmt_corpus(arrays, 24, cfg.ref_seed)
    else:
        trajs = [_reference(cfg, arrays)]
    gmt = None
    if cfg.stage in ("residual", "finetune"):
        gmt = load_params(cfg.gmt_checkpoint)
    bundle = make_bundle(cfg.stage, arrays.n_joints, cfg.seed, gmt)
    envs = _make_envs(cfg, trajs, arrays)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "run_config.json"))
    bundle, rows = train(envs, bundle, cfg.ppo, cfg.schedule, cfg.out_dir,
                         config_hash=config_hash(cfg),
                         log_cb=(None if args.quiet else _print_row))
    conv = convergence_iteration([float(r["mean_reward"]) for r in rows])
    print(f"trained {len(rows)} iterations; convergence iteration: "
          f"{'x' if conv is None else conv}")
    return EXIT_OK


def _print_row(row):
    if row["iteration"] % 20 == 0:
        print(f"iter {row['iteration']:5d}  reward {row['mean_reward']:8.3f}"
              f"  r_m {row['r_m']:7.3f}  r_o {row['r_o']:6.3f}"
              f"  r_c {row['r_c']:6.3f}  len {row['episode_len']:6.1f}"
              f"  kp {row['kp_voc']:6.1f}", flush=True)


# ---------------------------------------------------------------------------
# eval

def _eval_one(ckpt_path, traj, arrays, labels, episodes, seed, rows_out=None):
    bundle, _, _, _, _ = load_checkpoint(ckpt_path)
    conv = None
    log_path = os.path.join(os.path.dirname(ckpt_path), "train_log.csv")
    if os.path.exists(log_path):
        with open(log_path) as f:
            rewards = [float(r["mean_reward"]) for r in csv.DictReader(f)]
        conv = convergence_iteration(rewards)
    out = {}
    for label in labels:
        out[label] = evaluate(bundle, traj, arrays, label, episodes, seed,
                              convergence_iteration=conv)
    return out


def cmd_eval(args) -> int:
    arrays = _arrays()
    if args.reference:
        traj = load_trajectory(args.reference)
    else:
        if args.task is None:
            raise ConfigError("need --task or --reference")
        traj = generate_task_reference(args.task, arrays, seed=args.ref_seed)
        if args.penetration > 0:
            traj = inject_retarget_artifacts(traj, arrays,
                                             penetration=args.penetration)
            traj = oracle_contacts_from_geometry(traj, arrays)
    labels = ["train", "transfer"] if args.config_label == "both" \
        else [args.config_label]
    os.makedirs(args.out, exist_ok=True)
    if args.all_baselines:
        reports = {}
        for method in ("base", "scratch", "finetune", "residual"):
            ckpt = os.path.join(args.all_baselines, method, "checkpoint.json")
            if not os.path.exists(ckpt):
                continue
            reports[method] = _eval_one(ckpt, traj, arrays,
                                        ["train", "transfer"],
                                        args.episodes, args.seed)
            for label, rep in reports[method].items():
                save_report(rep,
                            os.path.join(args.out,
                                         f"{method}_{label}.json"),
                            os.path.join(args.out, f"{method}_{label}.csv"))
        table = compare(reports)
        table_path = os.path.join(args.out, "comparison.txt")
        with open(table_path, "w") as f:
            f.write(table + "\n")
        print(table)
        return EXIT_OK
    if not args.checkpoint:
        raise ConfigError("need --checkpoint or --all-baselines")
    by_label = _eval_one(args.checkpoint, traj, arrays, labels,
                         args.episodes, args.seed)
    for label, rep in by_label.items():
        save_report(rep, os.path.join(args.out, f"report_{label}.json"),
                    os.path.join(args.out, f"report_{label}.csv"))
        print(f"[{label}] SR {rep.sr:.2f}  E_o {rep.agg('e_o')[0]:.3f}  "
              f"E_m {rep.agg('e_m')[0]:.3f}  E_j {rep.agg('e_j')[0]:.3f}")
        if args.with_oracles:
            _oracle_rows(args.checkpoint, traj, arrays, label, args.seed,
                         os.path.join(args.out, f"oracles_{label}.csv"))
    return EXIT_OK


def _oracle_rows(ckpt_path, traj, arrays, label, seed, path):
    """Replay one deterministic episode and cross-check the metrics against
    the independent brute-force oracle."""
    from .evaluate import _mean_action, metrics
    from .rewards import RewardConfig
    bundle, _, _, _, _ = load_checkpoint(ckpt_path)
    env_cfg = EnvConfig(stage=bundle.stage, physics_label=label,
                        reward=RewardConfig(),
                        ranges=RandomizationRanges.disabled(),
                        phase_random=False)
    env = TrackingEnv([traj], arrays, env_cfg, run_seed=seed)
    env.reset()
    qpos_seq, obj_seq, idx = [], [], []
    done = False
    while not done:
        a = _mean_action(bundle, env, 0.3)
        _, _, done, _ = env.step_env(a)
        qpos_seq.append(env.state.qpos.copy())
        obj_seq.append(env.state.obj_pose.copy())
        idx.append(env.t)
    main = metrics(np.array(qpos_seq), np.array(obj_seq), idx, traj, arrays)
    oracle = oracle_metrics(qpos_seq, obj_seq, idx, traj, arrays)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["quantity", "main", "oracle", "abs_err", "pass"])
        for name, m, o in zip(("E_o", "E_m", "E_j"), main, oracle):
            r = report(name, m, o, 1e-9)
            w.writerow([name, r.main_value, r.oracle_value, r.abs_error,
                        int(r.passed)])
    print(f"oracle rows written to {path}")


# ---------------------------------------------------------------------------
# ablate

_ABLATIONS = ("no-voc", "no-contact-reward", "pose-reward")


def _ablation_config(cfg: RunConfig, name: str) -> RunConfig:
    if name == "no-voc":
        return replace(cfg, schedule=replace(cfg.schedule, kp0=0.0, kd0=0.0))
    if name == "no-contact-reward":
        return replace(cfg, reward=replace(cfg.reward, w_contact=0.0))
    if name == "pose-reward":
        return replace(cfg, reward=replace(cfg.reward, use_pose_reward=True))
    raise ConfigError(f"unknown ablation {name!r}; known: {_ABLATIONS}")


def _train_run(cfg: RunConfig, arrays):
    trajs = [_reference(cfg, arrays)]
    gmt = load_params(cfg.gmt_checkpoint) if cfg.gmt_checkpoint else None
    bundle = make_bundle(cfg.stage, arrays.n_joints, cfg.seed, gmt)
    envs = _make_envs(cfg, trajs, arrays)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "run_config.json"))
    bundle, rows = train(envs, bundle, cfg.ppo, cfg.schedule, cfg.out_dir,
                         config_hash=config_hash(cfg))
    return bundle, rows, trajs[0]


def _torso_force_trace(bundle, traj, arrays, cfg: RunConfig):
    """Mean torso contact force over flagged frames of one mean-mode episode."""
    env_cfg = EnvConfig(stage=cfg.stage, physics_label=cfg.physics_label,
                        reward=cfg.reward,
                        ranges=RandomizationRanges.disabled(),
                        phase_random=False)
    env = TrackingEnv([traj], arrays, env_cfg, run_seed=cfg.seed)
    env.reset()
    from .evaluate import _mean_action
    forces = []
    done = False
    while not done:
        a = _mean_action(bundle, env, cfg.ppo.delta_max)
        _, _, done, info = env.step_env(a)
        if traj.contacts[info["t"], 0]:
            forces.append(info["torso_force"])
    return float(np.mean(forces)) if forces else 0.0


def cmd_ablate(args) -> int:
    base = load_config(args.config)
    validate(base)
    arrays = _arrays(base)
    out = args.out or base.out_dir + "_ablate"
    cfg_on = replace(base, out_dir=os.path.join(out, "with"))
    cfg_off = replace(_ablation_config(base, args.name),
                      out_dir=os.path.join(out, "without"))
    results = {}
    for tag, cfg in (("with", cfg_on), ("without", cfg_off)):
        bundle, rows, traj = _train_run(cfg, arrays)
        conv = convergence_iteration([float(r["mean_reward"]) for r in rows])
        rep = evaluate(bundle, traj, arrays, cfg.physics_label,
                       args.episodes, cfg.seed, convergence_iteration=conv)
        save_report(rep, os.path.join(out, f"{tag}.json"),
                    os.path.join(out, f"{tag}.csv"))
        entry = {"sr": rep.sr, "e_o": rep.agg("e_o")[0],
                 "convergence": conv}
        if args.name == "no-contact-reward":
            entry["torso_force"] = _torso_force_trace(bundle, traj, arrays,
                                                      cfg)
        results[tag] = entry
    delta = {k: results["with"][k] - results["without"][k]
             for k in results["with"]
             if isinstance(results["with"][k], float)
             and results["without"].get(k) is not None}
    summary = {"ablation": args.name, "with": results["with"],
               "without": results["without"], "delta": delta}
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot-data

def cmd_plot_data(args) -> int:
    rows = []
    for root, _, files in os.walk(args.runs):
        for name in files:
            path = os.path.join(root, name)
            run = os.path.relpath(root, args.runs)
            if name == "train_log.csv":
                with open(path) as f:
                    for r in csv.DictReader(f):
                        for key, val in r.items():
                            if key == "iteration":
                                continue
                            rows.append({"run": run, "source": "train",
                                         "iteration": r["iteration"],
                                         "metric": key, "value": val})
            elif name.endswith(".json") and "report" in name:
                with open(path) as f:
                    d = json.load(f)
                if "sr" not in d:
                    continue
                for key in ("sr", "e_o_mean", "e_m_mean", "e_j_mean"):
                    rows.append({"run": run, "source": "eval",
                                 "iteration": "",
                                 "metric": key, "value": d[key]})
    if not rows:
        print(f"no train logs or reports found under {args.runs}")
        return EXIT_OK
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["run", "source", "iteration",
                                          "metric", "value"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resloco",
                                description="Residual loco-manipulation "
                                "training pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate reference trajectories")
    g.add_argument("--task", choices=TASKS)
    g.add_argument("--gmt-corpus", action="store_true")
    g.add_argument("--count", type=int, default=24)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--penetration", type=float, default=0.0)
    g.add_argument("--float-offset", type=float, default=0.0)
    g.add_argument("--out", default="refs")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a policy stage")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--out")
    t.add_argument("--dry-run", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--workers", type=int, default=1,
                   help="env batching hint; results are identical for any "
                   "value (collection is deterministic per env)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--all-baselines",
                   help="directory with base/scratch/finetune/residual runs")
    e.add_argument("--task", choices=TASKS)
    e.add_argument("--reference")
    e.add_argument("--ref-seed", type=int, default=0)
    e.add_argument("--penetration", type=float, default=0.0)
    e.add_argument("--config-label", default="train",
                   choices=["train", "transfer", "both"])
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--with-oracles", action="store_true")
    e.add_argument("--out", default="eval_out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="paired ablation runs")
    a.add_argument("--name", required=True, choices=_ABLATIONS)
    a.add_argument("--config", required=True)
    a.add_argument("--episodes", type=int, default=20)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("plot-data", help="export tidy CSV for plotting")
    d.add_argument("--runs", default="runs")
    d.add_argument("--out", default="plot_data.csv")
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ResumeMismatch as e:
        print(f"resume mismatch: {e}", file=sys.stderr)
        return EXIT_RESUME
    except (ValueError, KeyError, OSError, RuntimeError,
            FloatingPointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
