"""PPO with GAE over vectorized tracking environments.

Drives all four stages: GMT pre-training, residual training on a frozen GMT
base, train-from-scratch, and GMT fine-tuning.  Rollout collection is
deterministic given (config, seed): every environment derives its episode
randomness from (run seed, env index, episode counter), so batches are
independent of how envs are scheduled.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .curriculum import CurriculumSchedule, gains_at
from .env import STAGES, TrackingEnv
from .net import (MlpParams, backward, flatten_grads, flatten_params,
                  forward_batch, init_mlp, load_params, save_params,
                  unflatten_params)
from .policy import (DELTA_MAX, gmt_obs_dim, residual_obs_dim)
from .robot import ModelArrays

_LOG2PI = float(np.log(2.0 * np.pi))

#: architecture defaults (hidden sizes)
GMT_ACTOR_HIDDEN = (256, 256, 256)
RESIDUAL_ACTOR_HIDDEN = (128, 128)
CRITIC_HIDDEN = (256, 256)
#: residual actor final-layer gain; small enough that a fresh residual
#: policy's mean |da| stays below 1e-3 rad at these layer widths
RESIDUAL_FINAL_GAIN = 1e-3


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    envs: int = 64
    steps: int = 64
    total_iterations: int = 1500
    seed: int = 0
    stage: str = "residual"
    delta_max: float = DELTA_MAX
    checkpoint_every: int = 200

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must be in [0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.envs < 1 or self.steps < 1:
            raise ValueError("envs and steps must be >= 1")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass
class PolicyBundle:
    """Trainable actor/critic plus the frozen GMT base (residual stage)."""

    actor: MlpParams
    critic: MlpParams
    gmt: MlpParams = None  # frozen base; None outside residual stage
    stage: str = "residual"


def make_bundle(stage: str, n_joints: int, seed: int,
                gmt_params: MlpParams = None) -> PolicyBundle:
    gdim = gmt_obs_dim(n_joints)
    rdim = residual_obs_dim(n_joints)
    if stage == "gmt":
        actor = init_mlp([gdim, *GMT_ACTOR_HIDDEN, n_joints], 1.0, seed,
                         log_std_init=np.log(0.2))
        critic = init_mlp([gdim, *CRITIC_HIDDEN, 1], 1.0, seed + 1)
        return PolicyBundle(actor, critic, stage=stage)
    if stage == "residual":
        if gmt_params is None:
            raise ValueError("residual stage requires a GMT checkpoint")
        if gmt_params.in_dim != gdim:
            raise ValueError(f"GMT checkpoint input width {gmt_params.in_dim} "
                             f"does not match expected {gdim}")
        actor = init_mlp([rdim, *RESIDUAL_ACTOR_HIDDEN, n_joints],
                         RESIDUAL_FINAL_GAIN, seed,
                         log_std_init=np.log(0.05))
        critic = init_mlp([rdim, *CRITIC_HIDDEN, 1], 1.0, seed + 1)
        return PolicyBundle(actor, critic, gmt=gmt_params, stage=stage)
    if stage == "scratch":
        actor = init_mlp([rdim, *GMT_ACTOR_HIDDEN, n_joints], 1.0, seed,
                         log_std_init=np.log(0.2))
        critic = init_mlp([rdim, *CRITIC_HIDDEN, 1], 1.0, seed + 1)
        return PolicyBundle(actor, critic, stage=stage)
    if stage == "finetune":
        if gmt_params is None:
            raise ValueError("finetune stage requires a GMT checkpoint")
        if gmt_params.in_dim != gdim:
            raise ValueError(f"GMT checkpoint input width {gmt_params.in_dim} "
                             f"does not match expected {gdim}; the fine-tune "
                             "baseline cannot incorporate object observations")
        actor = gmt_params.copy()
        critic = init_mlp([gdim, *CRITIC_HIDDEN, 1], 1.0, seed + 1)
        return PolicyBundle(actor, critic, stage=stage)
    raise ValueError(f"unknown stage {stage!r}")


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, E, D)
    actions: np.ndarray  # (T, E, A) raw policy samples (pre-clip)
    logp: np.ndarray  # (T, E)
    rewards: np.ndarray  # (T, E)
    values: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E) bool
    bootstrap: np.ndarray  # (E,) value of the state after the last step
    reward_parts: dict  # mean r_m / r_o / r_c over the batch
    episode_returns: list  # completed-episode total rewards
    episode_lengths: list
    episode_successes: list  # completed-to-end flags
    terminations: dict  # reason -> count
    torso_force_contact: list  # torso force samples during flagged contact


def gae(rewards, values, dones, bootstrap, gamma, lam):
    """Generalized advantage estimation over (T, E) arrays."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T, E = rewards.shape
    adv = np.zeros((T, E))
    last = np.zeros(E)
    next_v = np.asarray(bootstrap, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * mask - values[t]
        last = delta + gamma * lam * mask * last
        adv[t] = last
        next_v = values[t]
    return adv, adv + values


def _gauss_logp(mean, log_std, a):
    z = (a - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z, axis=-1) \
        - np.sum(log_std) - 0.5 * _LOG2PI * mean.shape[-1]


def _entropy(log_std):
    return float(np.sum(log_std) + 0.5 * log_std.shape[0] * (1.0 + _LOG2PI))


def collect(envs, bundle: PolicyBundle, steps: int, cfg: PpoConfig,
            rng) -> RolloutBatch:
    """Roll every env forward `steps` steps with the current policy."""
    E = len(envs)
    stage = bundle.stage
    obs_list = [env.observe() if env.state is not None and not env.done
                else env.reset() for env in envs]
    D = obs_list[0].shape[0]
    A = bundle.actor.out_dim
    obs = np.zeros((steps, E, D))
    actions = np.zeros((steps, E, A))
    logp = np.zeros((steps, E))
    rewards = np.zeros((steps, E))
    values = np.zeros((steps, E))
    dones = np.zeros((steps, E), dtype=bool)
    parts = {"r_m": 0.0, "r_o": 0.0, "r_c": 0.0}
    ep_ret = [0.0] * E
    ep_len = [0] * E
    episode_returns, episode_lengths, episode_successes = [], [], []
    terminations = {}
    torso_force = []
    cur = np.stack(obs_list)
    std = np.exp(bundle.actor.log_std)
    for t in range(steps):
        obs[t] = cur
        mean, _ = forward_batch(bundle.actor, cur)
        eps = rng.standard_normal(mean.shape)
        a = mean + std * eps
        actions[t] = a
        logp[t] = _gauss_logp(mean, bundle.actor.log_std, a)
        v, _ = forward_batch(bundle.critic, cur)
        values[t] = v[:, 0]
        if stage == "residual":
            gmt_obs = np.stack([env.gmt_observe() for env in envs])
            base_all, _ = forward_batch(bundle.gmt, gmt_obs)
        for e, env in enumerate(envs):
            if stage == "residual":
                base = np.clip(base_all[e], env.arrays.q_lo, env.arrays.q_hi)
                da = np.clip(a[e], -cfg.delta_max, cfg.delta_max)
                target = np.clip(base + da, env.arrays.q_lo, env.arrays.q_hi)
            else:
                target = np.clip(a[e], env.arrays.q_lo, env.arrays.q_hi)
            o, r, done, info = env.step_env(target)
            rewards[t, e] = r.total
            dones[t, e] = done
            parts["r_m"] += r.r_m
            parts["r_o"] += r.r_o
            parts["r_c"] += r.r_c
            ep_ret[e] += r.total
            ep_len[e] += 1
            if env.traj.has_object and stage != "gmt" \
                    and env.traj.contacts[info["t"]].any():
                torso_force.append(info["torso_force"])
            if done:
                episode_returns.append(ep_ret[e])
                episode_lengths.append(ep_len[e])
                episode_successes.append(bool(info["at_end"]))
                if info["termination"] is not None:
                    key = info["termination"].split(":")[0]
                    terminations[key] = terminations.get(key, 0) + 1
                ep_ret[e], ep_len[e] = 0.0, 0
                o = env.reset()
            cur[e] = o
    boot, _ = forward_batch(bundle.critic, cur)
    n = steps * E
    return RolloutBatch(obs, actions, logp, rewards, values, dones,
                        boot[:, 0], {k: v / n for k, v in parts.items()},
                        episode_returns, episode_lengths, episode_successes,
                        terminations, torso_force)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params_flat, grad_flat):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad_flat
        self.v = self.b2 * self.v + (1 - self.b2) * grad_flat ** 2
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return params_flat - self.lr * mh / (np.sqrt(vh) + self.eps)

    def state_dict(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def load_state_dict(self, d):
        self.m = np.asarray(d["m"], dtype=np.float64)
        self.v = np.asarray(d["v"], dtype=np.float64)
        self.t = int(d["t"])


def ppo_loss_and_grads(bundle: PolicyBundle, obs, actions, logp_old, adv,
                       returns, cfg: PpoConfig):
    """Clipped-surrogate + value + entropy loss and flat gradients.

    Returns (loss, stats, actor grad flat incl. log_std, critic grad flat).
    """
    N = obs.shape[0]
    mean, tape_a = forward_batch(bundle.actor, obs)
    log_std = bundle.actor.log_std
    var = np.exp(2.0 * log_std)
    logp = _gauss_logp(mean, log_std, actions)
    ratio = np.exp(logp - logp_old)
    u1 = ratio * adv
    u2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    pg_loss = -float(np.mean(np.minimum(u1, u2)))
    ent = _entropy(log_std)
    v, tape_c = forward_batch(bundle.critic, obs)
    v = v[:, 0]
    v_loss = float(np.mean((v - returns) ** 2))
    loss = pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent

    # d loss / d logp: active only where the unclipped branch attains the min
    mask = (u1 <= u2).astype(np.float64)
    coeff = -(mask * ratio * adv) / N  # (N,)
    d_mean = coeff[:, None] * (actions - mean) / var
    ga, _ = backward(tape_a, d_mean)
    g_log_std = np.sum(coeff[:, None]
                       * ((actions - mean) ** 2 / var - 1.0), axis=0) \
        - cfg.entropy_coef * np.ones(log_std.shape[0])
    d_v = cfg.value_coef * 2.0 * (v - returns)[None].T / N
    gc, _ = backward(tape_c, d_v)
    stats = {"pg_loss": pg_loss, "v_loss": v_loss, "entropy": ent,
             "approx_kl": float(np.mean(logp_old - logp)),
             "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip))}
    return loss, stats, flatten_grads(ga, g_log_std), flatten_grads(gc)


def _clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(float(g @ g) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


def update(bundle: PolicyBundle, batch: RolloutBatch, cfg: PpoConfig,
           opt_actor: Adam, opt_critic: Adam, rng):
    """One PPO update over the batch; returns loss stats (mean over passes).

    On a non-finite loss the update is aborted and parameters rolled back.
    """
    T, E, D = batch.obs.shape
    N = T * E
    obs = batch.obs.reshape(N, D)
    actions = batch.actions.reshape(N, -1)
    logp_old = batch.logp.reshape(N)
    adv, returns = gae(batch.rewards, batch.values, batch.dones,
                       batch.bootstrap, cfg.gamma, cfg.gae_lambda)
    adv = adv.reshape(N)
    returns = returns.reshape(N)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    actor0 = bundle.actor.copy()
    critic0 = bundle.critic.copy()
    mb_size = N // cfg.minibatches
    stats_acc, passes = {}, 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(N)
        for m in range(cfg.minibatches):
            idx = perm[m * mb_size:(m + 1) * mb_size]
            loss, stats, g_actor, g_critic = ppo_loss_and_grads(
                bundle, obs[idx], actions[idx], logp_old[idx], adv[idx],
                returns[idx], cfg)
            if not np.isfinite(loss):
                bundle.actor = actor0
                bundle.critic = critic0
                return {"aborted": 1.0, "loss": float("nan")}
            (g_actor, g_critic), gnorm = _clip_global_norm(
                [g_actor, g_critic], cfg.max_grad_norm)
            flat_a = flatten_params(bundle.actor)
            bundle.actor = unflatten_params(bundle.actor,
                                            opt_actor.step(flat_a, g_actor))
            flat_c = flatten_params(bundle.critic)
            bundle.critic = unflatten_params(bundle.critic,
                                             opt_critic.step(flat_c, g_critic))
            stats["loss"] = float(loss)
            stats["grad_norm"] = gnorm
            for k, v in stats.items():
                stats_acc[k] = stats_acc.get(k, 0.0) + v
            passes += 1
    return {k: v / passes for k, v in stats_acc.items()}


# ---------------------------------------------------------------------------
# training loop

def convergence_iteration(mean_rewards, window=50, span=200,
                          threshold=0.01):
    """First iteration after which the `window`-iteration moving average has
    improved by < threshold relative to `span` iterations earlier."""
    r = np.asarray(mean_rewards, dtype=np.float64)
    if r.shape[0] < window + span:
        return None
    kern = np.ones(window) / window
    ma = np.convolve(r, kern, mode="valid")  # ma[i] ends at iteration i+window-1
    for i in range(span, ma.shape[0]):
        prev = ma[i - span]
        if prev > 0 and (ma[i] - prev) / abs(prev) < threshold:
            return i + window - 1
    return None


class ResumeMismatch(Exception):
    """Checkpoint does not match the requested run configuration."""


def train(envs, bundle: PolicyBundle, cfg: PpoConfig,
          schedule: CurriculumSchedule, out_dir, config_hash: str = "",
          log_cb=None):
    """collect -> gae -> update loop with checkpoints, resume, and a CSV log.

    Returns (bundle, rows) where rows is the TrainLog (one dict/iteration).
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    log_path = os.path.join(out_dir, "train_log.csv")
    n_actor = flatten_params(bundle.actor).shape[0]
    n_critic = flatten_params(bundle.critic).shape[0]
    opt_actor = Adam(n_actor, cfg.lr)
    opt_critic = Adam(n_critic, cfg.lr)
    start_iter = 0
    rows = []
    if os.path.exists(ckpt_path):
        bundle, opt_actor, opt_critic, start_iter, saved_hash = \
            load_checkpoint(ckpt_path, cfg)
        if config_hash and saved_hash and saved_hash != config_hash:
            raise ResumeMismatch(
                f"checkpoint config hash {saved_hash} does not match current "
                f"config hash {config_hash}")
        if os.path.exists(log_path):
            with open(log_path) as f:
                rows = [dict(r) for r in csv.DictReader(f)]
            rows = rows[:start_iter]
    frozen0 = None if bundle.gmt is None else flatten_params(bundle.gmt).copy()
    rng_collect = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 101, start_iter]))
    rng_update = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 202, start_iter]))
    for it in range(start_iter, cfg.total_iterations):
        kp, kd = gains_at(schedule, it)
        if cfg.stage not in ("residual", "scratch"):
            kp = kd = 0.0
        for env in envs:
            env.set_virtual_gains(kp, kd)
        t0 = time.time()
        batch = collect(envs, bundle, cfg.steps, cfg, rng_collect)
        stats = update(bundle, batch, cfg, opt_actor, opt_critic, rng_update)
        if frozen0 is not None:
            assert np.array_equal(flatten_params(bundle.gmt), frozen0), \
                "frozen GMT parameters changed during residual training"
        row = {
            "iteration": it,
            "mean_reward": float(np.mean(batch.rewards)),
            "r_m": batch.reward_parts["r_m"],
            "r_o": batch.reward_parts["r_o"],
            "r_c": batch.reward_parts["r_c"],
            "episode_len": float(np.mean(batch.episode_lengths))
            if batch.episode_lengths else float(cfg.steps),
            "success_frac": float(np.mean(batch.episode_successes))
            if batch.episode_successes else 0.0,
            "kp_voc": kp,
            "kd_voc": kd,
            "loss": stats.get("loss", float("nan")),
            "pg_loss": stats.get("pg_loss", float("nan")),
            "v_loss": stats.get("v_loss", float("nan")),
            "entropy": stats.get("entropy", float("nan")),
            "wall_clock": time.time() - t0,
        }
        rows.append(row)
        if log_cb is not None:
            log_cb(row)
        if (it + 1) % cfg.checkpoint_every == 0 \
                or it == cfg.total_iterations - 1:
            save_checkpoint(ckpt_path, bundle, opt_actor, opt_critic, it + 1,
                            cfg, config_hash)
            _write_log(log_path, rows)
    _write_log(log_path, rows)
    return bundle, rows


def _write_log(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def save_checkpoint(path, bundle: PolicyBundle, opt_actor, opt_critic,
                    iteration, cfg: PpoConfig, config_hash=""):
    from .net import params_to_dict
    d = {
        "version": 1,
        "stage": bundle.stage,
        "iteration": iteration,
        "config_hash": config_hash,
        "ppo": asdict(cfg),
        "actor": params_to_dict(bundle.actor),
        "critic": params_to_dict(bundle.critic),
        "gmt": None if bundle.gmt is None else params_to_dict(bundle.gmt),
        "opt_actor": opt_actor.state_dict(),
        "opt_critic": opt_critic.state_dict(),
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(d, f)
    os.replace(tmp, path)


def load_checkpoint(path, cfg: PpoConfig = None):
    from .net import params_from_dict
    with open(path) as f:
        d = json.load(f)
    if d.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    bundle = PolicyBundle(
        actor=params_from_dict(d["actor"]),
        critic=params_from_dict(d["critic"]),
        gmt=None if d["gmt"] is None else params_from_dict(d["gmt"]),
        stage=d["stage"])
    opt_actor = Adam(flatten_params(bundle.actor).shape[0],
                     d["ppo"]["lr"])
    opt_actor.load_state_dict(d["opt_actor"])
    opt_critic = Adam(flatten_params(bundle.critic).shape[0],
                      d["ppo"]["lr"])
    opt_critic.load_state_dict(d["opt_critic"])
    return bundle, opt_actor, opt_critic, int(d["iteration"]), \
        d.get("config_hash", "")
