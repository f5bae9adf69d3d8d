"""Episode environment: reference tracking with rewards and termination.

One TrackingEnv owns one simulator instance and one reference trajectory (or
a corpus, for GMT pre-training).  Episodes start at a uniformly sampled
reference phase with the state set to the reference kinematics; per-episode
randomness derives from (run seed, env index, episode counter), so rollouts
are independent of worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curriculum import (CurriculumSchedule, RandomizationRanges, randomize,
                         virtual_wrench)
from .geometry import box_shape, transform_points
from .physics import (NAMED_CONFIGS, PhysicsConfig, make_state, pd_torques,
                      step)
from .policy import ProprioBuffer, build_gmt_obs, build_residual_obs
from .refgen import ReferenceTrajectory, _finite_difference
from .rewards import (RewardConfig, StepReward, check_termination,
                      contact_reward, fresh_counters, motion_reward,
                      object_reward, per_link_object_forces,
                      pose_object_reward)
from .robot import ModelArrays

#: dummy object kept out of reach for robot-only (GMT) trajectories
FAR_OBJECT_POSE = (50.0, 0.12, 0.0)

STAGES = ("gmt", "residual", "scratch", "finetune")


@dataclass
class EnvConfig:
    stage: str = "residual"
    physics_label: str = "train"
    reward: RewardConfig = field(default_factory=RewardConfig)
    ranges: RandomizationRanges = field(
        default_factory=RandomizationRanges.disabled)
    phase_random: bool = True
    torque_ratio: float = 0.1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.physics_label not in NAMED_CONFIGS:
            raise ValueError(f"unknown physics config {self.physics_label!r}")


class TrackingEnv:
    """Single reference-tracking environment.

    `trajs` is a list of ReferenceTrajectory; each episode picks one
    (uniformly for a corpus, always the sole entry for task training).
    Actions are joint PD targets; residual composition happens in the caller.
    """

    def __init__(self, trajs, arrays: ModelArrays, cfg: EnvConfig,
                 run_seed: int = 0, env_index: int = 0):
        if not trajs:
            raise ValueError("need at least one reference trajectory")
        self.trajs = list(trajs)
        self.base_arrays = arrays
        self.cfg = cfg
        self.phys0 = NAMED_CONFIGS[cfg.physics_label]
        self.run_seed = int(run_seed)
        self.env_index = int(env_index)
        self.episode_counter = 0
        self.buffer = ProprioBuffer(arrays.n_joints)
        self.kp_voc = 0.0
        self.kd_voc = 0.0
        self.state = None

    # -- curriculum hook -----------------------------------------------------
    def set_virtual_gains(self, kp: float, kd: float):
        self.kp_voc = float(kp)
        self.kd_voc = float(kd)

    # -- episode lifecycle ---------------------------------------------------
    def reset(self):
        rng = np.random.default_rng(np.random.SeedSequence(
            [self.run_seed, self.env_index, self.episode_counter]))
        self.episode_counter += 1
        self.traj = self.trajs[int(rng.integers(len(self.trajs)))]
        if self.traj.has_object:
            shape = self.traj.object_shape()
        else:
            shape = box_shape((0.1, 0.1), 1.0)
        self.arrays, self.shape, self.phys, obj_off, self.perturb = randomize(
            self.base_arrays, shape, self.phys0, self.cfg.ranges, rng)
        n = self.traj.n_frames
        if self.cfg.phase_random:
            # leave room for at least one second of episode
            self.t = int(rng.integers(max(1, n - int(self.traj.fps))))
        else:
            self.t = 0
        qpos = self.traj.qpos_at(self.t)
        qvel = (self.traj.qpos_at(min(self.t + 1, n - 1)) - qpos) * self.traj.fps
        if self.traj.has_object:
            obj_pose = np.array([self.traj.obj_pos[self.t, 0],
                                 self.traj.obj_pos[self.t, 1],
                                 self.traj.obj_pitch[self.t]]) + obj_off
            obj_vel = np.array([self.traj.obj_vel[self.t, 0],
                                self.traj.obj_vel[self.t, 1],
                                self.traj.obj_angvel[self.t]])
        else:
            obj_pose = np.array(FAR_OBJECT_POSE)
            obj_vel = np.zeros(3)
        self.state = make_state(self.arrays, self.shape)
        self.state.qpos[:] = qpos
        self.state.qvel[:] = qvel
        self.state.obj_pose[:] = obj_pose
        self.state.obj_vel[:] = obj_vel
        self.counters = fresh_counters(self.arrays)
        self.prev_action = self.traj.joints[self.t].copy()
        self.noise_rng = np.random.default_rng(np.random.SeedSequence(
            [self.run_seed, self.env_index, self.episode_counter, 1]))
        self.buffer.reset(self._noisy_state())
        self.done = False
        return self.observe()

    def _noisy_state(self):
        std = self.cfg.ranges.obs_noise_std
        if std == 0.0:
            return self.state
        noisy = self.state.copy()
        noisy.qpos[2:] += std * self.noise_rng.standard_normal(
            noisy.qpos.shape[0] - 2)
        noisy.qvel[2:] += std * self.noise_rng.standard_normal(
            noisy.qvel.shape[0] - 2)
        return noisy

    # -- observations --------------------------------------------------------
    def observe(self) -> np.ndarray:
        if self.cfg.stage == "gmt" or not self.traj.has_object:
            return build_gmt_obs(self.buffer, self.traj, self.t, self.state)
        if self.cfg.stage == "finetune":
            # the fine-tune baseline keeps the GMT architecture and therefore
            # cannot incorporate explicit object information as input
            return build_gmt_obs(self.buffer, self.traj, self.t, self.state)
        return build_residual_obs(self.buffer, self.traj, self.t, self.state)

    def gmt_observe(self) -> np.ndarray:
        """GMT-layout observation (used by the frozen base in residual mode)."""
        return build_gmt_obs(self.buffer, self.traj, self.t, self.state)

    # -- dynamics ------------------------------------------------------------
    def _wrench(self) -> np.ndarray:
        if self.cfg.stage not in ("residual", "scratch") \
                or not self.traj.has_object \
                or (self.kp_voc == 0.0 and self.kd_voc == 0.0):
            return np.zeros(3)
        t = self.t
        return virtual_wrench(self.state.obj_pose, self.state.obj_vel,
                              self.traj.obj_pos[t], self.traj.obj_pitch[t],
                              self.traj.obj_vel[t], self.traj.obj_angvel[t],
                              self.kp_voc, self.kd_voc,
                              self.cfg.torque_ratio)

    def object_points(self, current: bool = True) -> np.ndarray:
        """World-frame surface sample points of the (current|reference) object."""
        t = self.t
        pose = tuple(self.state.obj_pose) if current else (
            self.traj.obj_pos[t, 0], self.traj.obj_pos[t, 1],
            self.traj.obj_pitch[t])
        return transform_points(self.traj.surface_points, pose)

    def step_env(self, action):
        """Apply joint targets; returns (obs, StepReward, done, info)."""
        if self.done:
            raise ValueError("episode is done; call reset()")
        action = np.asarray(action, dtype=np.float64)
        torques = pd_torques(action, self.state.qpos[3:], self.state.qvel[3:],
                             self.arrays)
        self.state, contacts = step(self.state, action, self._wrench(),
                                    self.phys, self.arrays, self.shape)
        self.t = min(self.t + 1, self.traj.n_frames - 1)
        ref = self.traj.frame(self.t)
        r_m, breakdown = motion_reward(self.state, ref, self.prev_action,
                                       action, torques, self.cfg.reward,
                                       self.arrays)
        r_o = r_c = 0.0
        P = P_hat = None
        c_flags = None
        if self.cfg.stage != "gmt" and self.traj.has_object:
            P = self.object_points(current=True)
            P_hat = self.object_points(current=False)
            c_flags = self.traj.contacts[self.t]
            if self.cfg.reward.use_pose_reward:
                r_o = pose_object_reward(self.state.obj_pose,
                                         self.traj.obj_pos[self.t],
                                         self.traj.obj_pitch[self.t],
                                         self.cfg.reward)
            else:
                r_o = object_reward(P, P_hat, self.cfg.reward.lambda_o)
            if self.cfg.reward.w_contact > 0:
                r_c = self.cfg.reward.w_contact * contact_reward(
                    contacts, c_flags, self.cfg.reward.contact_lambda,
                    self.arrays)
        reason, self.counters = check_termination(
            self.state, ref, P, P_hat, contacts, c_flags, self.counters,
            self.cfg.reward, self.cfg.stage, self.arrays)
        self.prev_action = action.copy()
        self.buffer.push(self._noisy_state(), action)
        at_end = self.t >= self.traj.n_frames - 1
        self.done = reason is not None or at_end
        info = {
            "termination": reason,
            "at_end": at_end and reason is None,
            "t": self.t,
            "contacts": contacts,
            "torso_force": float(per_link_object_forces(contacts,
                                                        self.arrays)[0]),
        }
        reward = StepReward(r_m=r_m, r_o=r_o, r_c=r_c, breakdown=breakdown)
        return self.observe(), reward, self.done, info
