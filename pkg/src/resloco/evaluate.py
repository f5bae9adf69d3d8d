"""Evaluation: tracking metrics, success judgment, and baseline comparison.

Metrics follow the paper's definitions: E_o sums point-cloud distances over
the object's surface samples, E_m sums global link-position errors, E_j is
the joint-angle error norm, each averaged over realized steps.  Success
requires completing the clip with mean-per-point E_o below a threshold while
remaining balanced.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .curriculum import RandomizationRanges
from .env import EnvConfig, TrackingEnv
from .geometry import transform_points
from .net import forward
from .physics import link_positions
from .refgen import ReferenceTrajectory
from .rewards import RewardConfig
from .robot import ModelArrays
from .trainer import PolicyBundle

#: success threshold on mean-per-point-per-step object deviation (m)
SUCCESS_THRESHOLD_O = 0.15
#: balance test: final base height must exceed this fraction of reference
BALANCE_HEIGHT_FRAC = 0.6


def metrics(qpos_seq, obj_pose_seq, ref_indices, traj: ReferenceTrajectory,
            arrays: ModelArrays):
    """(E_o, E_m, E_j) for a rollout aligned to reference frame indices."""
    qpos_seq = np.asarray(qpos_seq, dtype=np.float64)
    T = qpos_seq.shape[0]
    if T == 0:
        raise ValueError("length-0 rollout")
    e_o = e_m = e_j = 0.0
    for k in range(T):
        t = int(ref_indices[k])
        ref_qpos = traj.qpos_at(t)
        pos = link_positions(qpos_seq[k], arrays)
        ref_pos = link_positions(ref_qpos, arrays)
        e_m += float(np.sum(np.linalg.norm(pos - ref_pos, axis=1)))
        e_j += float(np.linalg.norm(qpos_seq[k, 3:] - ref_qpos[3:]))
        if traj.has_object and obj_pose_seq is not None:
            P = transform_points(traj.surface_points, obj_pose_seq[k])
            P_hat = transform_points(
                traj.surface_points,
                (traj.obj_pos[t, 0], traj.obj_pos[t, 1], traj.obj_pitch[t]))
            e_o += float(np.sum(np.linalg.norm(P - P_hat, axis=1)))
    return e_o / T, e_m / T, e_j / T


@dataclass
class EpisodeResult:
    e_o: float
    e_m: float
    e_j: float
    completed: bool
    balanced: bool
    termination: str
    length: int

    @property
    def success(self) -> bool:
        # strict <: an episode exactly at the threshold fails
        return bool(self.completed and self.balanced
                    and self.e_o_per_point < SUCCESS_THRESHOLD_O)

    @property
    def e_o_per_point(self) -> float:
        return self.e_o / max(1, self.n_points)

    n_points: int = 32


@dataclass
class EvalReport:
    task: str
    stage: str
    physics_label: str
    seed: int
    episodes: list  # list of EpisodeResult
    convergence_iteration: int = None

    @property
    def sr(self) -> float:
        return float(np.mean([e.success for e in self.episodes]))

    def agg(self, name):
        vals = np.array([getattr(e, name) for e in self.episodes])
        return float(vals.mean()), float(vals.std())

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "stage": self.stage,
            "physics_label": self.physics_label,
            "seed": self.seed,
            "sr": self.sr,
            "e_o_mean": self.agg("e_o")[0], "e_o_std": self.agg("e_o")[1],
            "e_m_mean": self.agg("e_m")[0], "e_m_std": self.agg("e_m")[1],
            "e_j_mean": self.agg("e_j")[0], "e_j_std": self.agg("e_j")[1],
            "convergence_iteration": self.convergence_iteration,
            "episodes": [asdict(e) for e in self.episodes],
        }


def _mean_action(bundle: PolicyBundle, env: TrackingEnv, delta_max: float):
    if bundle.stage == "residual":
        base = np.clip(forward(bundle.gmt, env.gmt_observe()),
                       env.arrays.q_lo, env.arrays.q_hi)
        da = np.clip(forward(bundle.actor, env.observe()),
                     -delta_max, delta_max)
        return np.clip(base + da, env.arrays.q_lo, env.arrays.q_hi)
    return np.clip(forward(bundle.actor, env.observe()),
                   env.arrays.q_lo, env.arrays.q_hi)


def run_episode(bundle: PolicyBundle, env: TrackingEnv,
                arrays: ModelArrays, jitter_rng=None,
                delta_max: float = 0.3, max_steps: int = None):
    """One mean-mode episode; returns an EpisodeResult.

    `jitter_rng` perturbs the initial object pose (+-2 cm / +-0.05 rad) and
    joint angles (+-0.01 rad) so evaluation episodes differ while staying
    deterministic per seed.
    """
    env.reset()
    if jitter_rng is not None:
        env.state.qpos[3:] += jitter_rng.uniform(-0.01, 0.01,
                                                 arrays.n_joints)
        if env.traj.has_object:
            env.state.obj_pose[:2] += jitter_rng.uniform(-0.02, 0.02, 2)
            env.state.obj_pose[2] += jitter_rng.uniform(-0.05, 0.05)
        env.buffer.reset(env.state)
    traj = env.traj
    qpos_seq, obj_seq, idx = [], [], []
    done = False
    steps = 0
    limit = max_steps or traj.n_frames + 10
    last_info = {"termination": None, "at_end": False, "contacts": []}
    while not done and steps < limit:
        a = _mean_action(bundle, env, delta_max)
        _, _, done, last_info = env.step_env(a)
        qpos_seq.append(env.state.qpos.copy())
        obj_seq.append(env.state.obj_pose.copy())
        idx.append(env.t)
        steps += 1
    e_o, e_m, e_j = metrics(np.array(qpos_seq), np.array(obj_seq), idx,
                            traj, arrays)
    completed = bool(last_info["at_end"])
    ref_z = traj.root_pos[min(env.t, traj.n_frames - 1), 1]
    ground_ok = not any(
        c.counterpart == "ground" and c.link >= 0
        and not arrays.is_foot[c.link] for c in last_info.get("contacts", []))
    balanced = bool(ground_ok
                    and env.state.qpos[1] > BALANCE_HEIGHT_FRAC * ref_z)
    return EpisodeResult(e_o=e_o, e_m=e_m, e_j=e_j, completed=completed,
                         balanced=balanced,
                         termination=last_info["termination"] or "",
                         length=steps,
                         n_points=traj.surface_points.shape[0]
                         if traj.has_object else 1)


def evaluate(bundle: PolicyBundle, traj: ReferenceTrajectory,
             arrays: ModelArrays, physics_label: str, episodes: int,
             seed: int, reward_cfg: RewardConfig = None,
             convergence_iteration=None) -> EvalReport:
    """Deterministic evaluation: mean-mode actions, no virtual wrench, no
    domain randomization, episodes jittered per (seed, episode index)."""
    cfg = EnvConfig(stage=bundle.stage, physics_label=physics_label,
                    reward=reward_cfg or RewardConfig(),
                    ranges=RandomizationRanges.disabled(), phase_random=False)
    results = []
    for ep in range(episodes):
        env = TrackingEnv([traj], arrays, cfg, run_seed=seed, env_index=ep)
        jrng = np.random.default_rng(np.random.SeedSequence([seed, ep, 7]))
        results.append(run_episode(bundle, env, arrays, jitter_rng=jrng))
    return EvalReport(task=traj.task, stage=bundle.stage,
                      physics_label=physics_label, seed=seed,
                      episodes=results,
                      convergence_iteration=convergence_iteration)


def save_report(report: EvalReport, path_json, path_csv=None):
    with open(path_json, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    if path_csv:
        with open(path_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["episode", "e_o", "e_m", "e_j", "success",
                        "completed", "balanced", "termination", "length"])
            for i, e in enumerate(report.episodes):
                w.writerow([i, e.e_o, e.e_m, e.e_j, int(e.success),
                            int(e.completed), int(e.balanced),
                            e.termination, e.length])


def compare(reports: dict) -> str:
    """Table-shaped comparison of methods; reports maps label ->
    {physics_label -> EvalReport}.  Requires shared task and seeds."""
    if not reports:
        raise ValueError("no reports to compare")
    tasks = {r.task for by in reports.values() for r in by.values()}
    if len(tasks) > 1:
        raise ValueError(f"reports cover different tasks: {sorted(tasks)}")
    seeds = {r.seed for by in reports.values() for r in by.values()}
    if len(seeds) > 1:
        raise ValueError("reports must share episode seeds")
    lines = [f"task: {tasks.pop()}",
             f"{'method':<10} {'config':<9} {'SR':>6} {'Iter.':>7} "
             f"{'E_o':>15} {'E_m':>15} {'E_j':>15}"]
    degradation = {}
    for label, by_cfg in reports.items():
        for cfg_label in sorted(by_cfg):
            r = by_cfg[cfg_label]
            it = r.convergence_iteration
            lines.append(
                f"{label:<10} {cfg_label:<9} {r.sr:>6.2f} "
                f"{'x' if it is None else it:>7} "
                f"{r.agg('e_o')[0]:>7.3f}+-{r.agg('e_o')[1]:<6.3f} "
                f"{r.agg('e_m')[0]:>7.3f}+-{r.agg('e_m')[1]:<6.3f} "
                f"{r.agg('e_j')[0]:>7.3f}+-{r.agg('e_j')[1]:<6.3f}")
        if "train" in by_cfg and "transfer" in by_cfg:
            degradation[label] = by_cfg["train"].sr - by_cfg["transfer"].sr
    if degradation:
        lines.append("")
        lines.append("SR degradation (train - transfer):")
        for label, d in degradation.items():
            lines.append(f"  {label:<10} {d:+.2f}")
    return "\n".join(lines)
