"""Reward terms and early-termination logic for both training stages.

The motion reward follows the three-component pattern (task exponentials,
penalties, regularization).  The residual stage adds the object point-cloud
reward r^o = exp(-lambda_o * sum_i ||P[i] - P_hat[i]||) and the contact
reward r^c = sum_i c_hat[i] * exp(-lambda / f[i]).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import wrap_angle
from .physics import link_object_forces, link_positions
from .robot import ModelArrays


@dataclass(frozen=True)
class RewardConfig:
    # task-term weights (sum contribution at zero error) and error scales
    w_root_pos: float = 1.0
    k_root_pos: float = 20.0
    w_root_pitch: float = 0.5
    k_root_pitch: float = 10.0
    w_joint_pos: float = 1.0
    k_joint_pos: float = 2.0
    w_joint_vel: float = 0.2
    k_joint_vel: float = 0.02
    w_ee_pos: float = 0.5
    k_ee_pos: float = 40.0
    # penalties (negative contributions)
    w_action_rate: float = 0.01
    w_torque: float = 2e-7
    w_limit: float = 1.0
    # regularization: base velocity jitter
    w_base_jitter: float = 0.02
    # object / contact terms
    lambda_o: float = 5.0
    w_contact: float = 1.0  # contact-reward weight; 0 disables (ablation)
    contact_lambda: float = 20.0
    sigma_c: float = 0.02
    sigma_o: float = 0.25
    contact_patience: int = 10
    root_deviation: float = 0.5
    # opt-in pose-based object-reward variant
    use_pose_reward: bool = False
    lambda_p: float = 5.0
    lambda_theta: float = 2.0
    pose_w_theta: float = 0.5

    def __post_init__(self):
        for name in ("w_root_pos", "w_root_pitch", "w_joint_pos", "w_joint_vel",
                     "w_ee_pos", "w_action_rate", "w_torque", "w_limit",
                     "w_base_jitter", "w_contact"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lambda_o", "contact_lambda", "sigma_c", "sigma_o"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.contact_patience < 1:
            raise ValueError("contact_patience must be >= 1")

    @property
    def task_weight_sum(self) -> float:
        return (self.w_root_pos + self.w_root_pitch + self.w_joint_pos
                + self.w_joint_vel + self.w_ee_pos)


@dataclass
class StepReward:
    r_m: float
    r_o: float
    r_c: float
    breakdown: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.r_m + self.r_o + self.r_c


#: link indices used for the end-effector task term (feet + forearm)
EE_LINKS = (4, 7, 9)


def motion_reward(state, ref_frame, prev_action, action, torques,
                  cfg: RewardConfig, arrays: ModelArrays):
    """r^m and its per-term breakdown.

    End-effector positions are taken relative to the respective root so the
    term tracks body shape rather than duplicating the root-position term.
    """
    action = np.asarray(action, dtype=np.float64)
    prev_action = np.asarray(prev_action, dtype=np.float64)
    q, qd = state.qpos[3:], state.qvel[3:]

    e_root = state.qpos[:2] - ref_frame.root_pos
    e_pitch = wrap_angle(state.qpos[2] - ref_frame.root_pitch)
    e_q = q - ref_frame.joints
    # reference joint velocity is not stored per-frame; the velocity term
    # regularizes toward stillness scaled by k_joint_vel
    pos = link_positions(state.qpos, arrays) - state.qpos[:2]
    ref_qpos = np.concatenate(([ref_frame.root_pos[0], ref_frame.root_pos[1],
                                ref_frame.root_pitch], ref_frame.joints))
    ref_pos = link_positions(ref_qpos, arrays) - ref_frame.root_pos
    e_ee = pos[list(EE_LINKS)] - ref_pos[list(EE_LINKS)]

    span = arrays.q_hi - arrays.q_lo
    margin = 0.05 * span
    over = np.maximum(0.0, arrays.q_lo + margin - q) \
        + np.maximum(0.0, q - (arrays.q_hi - margin))

    terms = {
        "root_pos": cfg.w_root_pos * np.exp(-cfg.k_root_pos * e_root @ e_root),
        "root_pitch": cfg.w_root_pitch
        * np.exp(-cfg.k_root_pitch * e_pitch ** 2),
        "joint_pos": cfg.w_joint_pos * np.exp(-cfg.k_joint_pos * e_q @ e_q),
        "joint_vel": cfg.w_joint_vel * np.exp(-cfg.k_joint_vel * qd @ qd),
        "ee_pos": cfg.w_ee_pos * np.exp(-cfg.k_ee_pos * np.sum(e_ee ** 2)),
        "action_rate": -cfg.w_action_rate
        * float(np.sum((action - prev_action) ** 2)),
        "torque": -cfg.w_torque * float(np.sum(np.asarray(torques) ** 2)),
        "limit": -cfg.w_limit * float(np.sum(over ** 2)),
        "base_jitter": -cfg.w_base_jitter
        * float(state.qvel[1] ** 2 + state.qvel[2] ** 2),
    }
    terms = {k: float(v) for k, v in terms.items()}
    return sum(terms.values()), terms


def object_reward(P, P_hat, lambda_o: float) -> float:
    """Point-cloud reward exp(-lambda_o * sum_i ||P[i] - P_hat[i]||)."""
    P = np.asarray(P, dtype=np.float64)
    P_hat = np.asarray(P_hat, dtype=np.float64)
    if P.shape != P_hat.shape:
        raise ValueError(f"point-cloud shape mismatch: {P.shape} vs "
                         f"{P_hat.shape}")
    total = float(np.sum(np.linalg.norm(P - P_hat, axis=1)))
    return float(np.exp(-lambda_o * total))


def pose_object_reward(obj_pose, ref_pos, ref_pitch, cfg: RewardConfig) -> float:
    """Pose-based variant: exp(-lambda_p ||dp||) + w * exp(-lambda_th |dth|)."""
    dp = float(np.hypot(*(np.asarray(obj_pose[:2]) - np.asarray(ref_pos))))
    dth = abs(wrap_angle(obj_pose[2] - ref_pitch))
    return float(np.exp(-cfg.lambda_p * dp)
                 + cfg.pose_w_theta * np.exp(-cfg.lambda_theta * dth))


def contact_reward(contacts, c_flags, lam: float, arrays: ModelArrays) -> float:
    """r^c = sum over flagged links of exp(-lambda / f); f = 0 contributes 0."""
    fn = link_object_forces(contacts, arrays.n_links)
    if np.any(fn < 0):
        raise ValueError("negative contact force")
    r = 0.0
    for k, li in enumerate(arrays.contact_link_ids):
        if not c_flags[k]:
            continue
        f = fn[li]
        if f > 0.0:
            r += float(np.exp(-lam / f))
    return r


def per_link_object_forces(contacts, arrays: ModelArrays) -> np.ndarray:
    """Normal force per contact-eligible link (ordered as contact_link_ids)."""
    fn = link_object_forces(contacts, arrays.n_links)
    return fn[arrays.contact_link_ids]


# ---------------------------------------------------------------------------
# early termination

def fresh_counters(arrays: ModelArrays) -> np.ndarray:
    """Per-eligible-link consecutive contact-loss counts."""
    return np.zeros(arrays.contact_link_ids.shape[0], dtype=np.int64)


def check_termination(state, ref_frame, P, P_hat, contacts, c_flags, counters,
                      cfg: RewardConfig, stage: str, arrays: ModelArrays):
    """(reason | None, updated counters).

    Termination: divergence; unintended (non-foot) ground contact; root
    deviation beyond threshold; and, in the residual stage, mean point-cloud
    deviation beyond sigma_o or a flagged contact lost for more than
    `contact_patience` consecutive frames.
    """
    counters = np.asarray(counters, dtype=np.int64).copy()
    residual = stage in ("residual", "scratch", "finetune")
    if residual and c_flags is not None:
        fn = per_link_object_forces(contacts, arrays)
        for k in range(counters.shape[0]):
            if c_flags[k] and fn[k] == 0.0:
                counters[k] += 1
            else:
                counters[k] = 0
    if state.diverged:
        return "diverged", counters
    for c in contacts:
        if c.counterpart == "ground" and c.link >= 0 \
                and not arrays.is_foot[c.link]:
            name = arrays.link_names[c.link] if arrays.link_names else c.link
            return f"ground-contact:{name}", counters
    if float(np.hypot(*(state.qpos[:2] - ref_frame.root_pos))) \
            > cfg.root_deviation:
        return "root-deviation", counters
    if residual and P is not None:
        P = np.asarray(P, dtype=np.float64)
        P_hat = np.asarray(P_hat, dtype=np.float64)
        mean_dev = float(np.mean(np.linalg.norm(P - P_hat, axis=1)))
        if mean_dev > cfg.sigma_o:
            return "object-deviation", counters
    if residual and c_flags is not None:
        for k in range(counters.shape[0]):
            if counters[k] > cfg.contact_patience:
                li = int(arrays.contact_link_ids[k])
                name = arrays.link_names[li] if arrays.link_names else li
                return f"contact-lost:{name}", counters
    return None, counters
