"""Observation construction and the GMT / residual policy heads.

Observation layout (per the two-stage design):

  GMT observation      = [proprio window t-10:t] + [action history, 10 steps]
                         + [reference window (p_hat, theta_hat, q_hat), t-10:t+10]
  residual observation = GMT observation + [object state s^o_t]
                         + [object reference window, t-10:t+10]

All translations (reference roots, object positions) are expressed in the
robot's current base frame (shifted by -base position, rotated by -pitch), so
observations are invariant to rigid world translation.  Window indices beyond
the trajectory are clamped to the first/last frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import rot2, wrap_angle
from .net import MlpParams, forward
from .refgen import ReferenceTrajectory
from .robot import ModelArrays

#: proprio/reference history length (current step + 10 past)
HIST = 11
#: action history length
ACT_HIST = 10
#: future reference horizon; the window covers t-10 .. t+10
FUTURE = 10
WINDOW = HIST + FUTURE  # 21 reference frames per observation

#: residual action clamp (rad per joint)
DELTA_MAX = 0.3


def proprio_dim(n_joints: int) -> int:
    return 2 + 2 * n_joints  # pitch, pitch rate, q, qdot


def gmt_obs_dim(n_joints: int) -> int:
    return (HIST * proprio_dim(n_joints) + ACT_HIST * n_joints
            + WINDOW * (3 + n_joints))


def residual_obs_dim(n_joints: int) -> int:
    return gmt_obs_dim(n_joints) + 6 + WINDOW * 6


def observation_manifest(n_joints: int, stage: str) -> list:
    """(name, offset, length) rows documenting the observation layout."""
    rows = []
    off = 0

    def add(name, length):
        nonlocal off
        rows.append((name, off, length))
        off += length

    add("proprio_window", HIST * proprio_dim(n_joints))
    add("action_history", ACT_HIST * n_joints)
    add("ref_robot_window", WINDOW * (3 + n_joints))
    if stage in ("residual", "scratch"):
        add("object_state", 6)
        add("ref_object_window", WINDOW * 6)
    return rows


@dataclass
class ProprioBuffer:
    """Ring buffer of recent proprioception and actions.

    Entry 0 is the oldest.  `reset` seeds every proprio slot with the initial
    state (frame-0 padding, so there are no fictitious velocity spikes) and
    zeroes the action history (no action has been taken yet).
    """

    n_joints: int
    proprio: np.ndarray = None  # (HIST, 2 + 2J)
    actions: np.ndarray = None  # (ACT_HIST, J)

    def reset(self, state):
        p = self._proprio(state)
        self.proprio = np.tile(p, (HIST, 1))
        self.actions = np.zeros((ACT_HIST, self.n_joints))

    def push(self, state, action):
        """Record the state observed after applying `action`."""
        if self.proprio is None:
            raise ValueError("buffer must be reset before use")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.n_joints,):
            raise ValueError(f"expected {self.n_joints} action values, "
                             f"got shape {action.shape}")
        self.proprio = np.vstack([self.proprio[1:], self._proprio(state)])
        self.actions = np.vstack([self.actions[1:], action[None]])

    def _proprio(self, state) -> np.ndarray:
        return np.concatenate(([state.qpos[2], state.qvel[2]],
                               state.qpos[3:], state.qvel[3:]))

    def copy(self) -> "ProprioBuffer":
        out = ProprioBuffer(self.n_joints)
        out.proprio = None if self.proprio is None else self.proprio.copy()
        out.actions = None if self.actions is None else self.actions.copy()
        return out


def _window_indices(t: int, n_frames: int) -> np.ndarray:
    return np.clip(np.arange(t - FUTURE, t + FUTURE + 1), 0, n_frames - 1)


def _robot_ref_block(traj: ReferenceTrajectory, t, base_pos, pitch):
    R = rot2(-pitch)
    idx = _window_indices(t, traj.n_frames)
    rel = (traj.root_pos[idx] - base_pos) @ R.T
    dpitch = wrap_angle(traj.root_pitch[idx] - pitch)
    return np.concatenate([np.column_stack([rel, dpitch, traj.joints[idx]])
                          .ravel()])


def build_gmt_obs(buffer: ProprioBuffer, traj: ReferenceTrajectory, t: int,
                  state) -> np.ndarray:
    """Flattened GMT observation at reference index t."""
    if traj.n_frames < 1:
        raise ValueError("empty reference trajectory")
    if buffer.proprio is None:
        raise ValueError("buffer must be reset before use")
    base_pos = state.qpos[:2]
    pitch = float(state.qpos[2])
    return np.concatenate([
        buffer.proprio.ravel(),
        buffer.actions.ravel(),
        _robot_ref_block(traj, t, base_pos, pitch),
    ])


def build_residual_obs(buffer: ProprioBuffer, traj: ReferenceTrajectory,
                       t: int, state) -> np.ndarray:
    """GMT observation extended with object state and object reference."""
    if not traj.has_object:
        raise ValueError("trajectory lacks object references")
    base_pos = state.qpos[:2]
    pitch = float(state.qpos[2])
    R = rot2(-pitch)
    obj_state = np.concatenate([
        R @ (state.obj_pose[:2] - base_pos),
        [wrap_angle(state.obj_pose[2] - pitch)],
        R @ state.obj_vel[:2],
        [state.obj_vel[2]],
    ])
    idx = _window_indices(t, traj.n_frames)
    rel = (traj.obj_pos[idx] - base_pos) @ R.T
    dpitch = wrap_angle(traj.obj_pitch[idx] - pitch)
    vel = traj.obj_vel[idx] @ R.T
    obj_ref = np.column_stack([rel, dpitch, vel, traj.obj_angvel[idx]]).ravel()
    return np.concatenate([build_gmt_obs(buffer, traj, t, state),
                           obj_state, obj_ref])


# ---------------------------------------------------------------------------
# policy heads

def act_gmt(params: MlpParams, obs, arrays: ModelArrays,
            mode: str = "mean", rng=None) -> np.ndarray:
    """GMT action (joint PD targets), clamped to joint limits."""
    if mode not in ("mean", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    a = forward(params, obs)
    if mode == "stochastic":
        if params.log_std is None:
            raise ValueError("policy has no log_std for stochastic mode")
        a = a + np.exp(params.log_std) * rng.standard_normal(a.shape[0])
    return np.clip(a, arrays.q_lo, arrays.q_hi)


def act_residual(params: MlpParams, obs, mode: str = "mean", rng=None,
                 delta_max: float = DELTA_MAX) -> np.ndarray:
    """Residual action delta, clamped to +-delta_max."""
    if mode not in ("mean", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    da = forward(params, obs)
    if mode == "stochastic":
        if params.log_std is None:
            raise ValueError("policy has no log_std for stochastic mode")
        da = da + np.exp(params.log_std) * rng.standard_normal(da.shape[0])
    return np.clip(da, -delta_max, delta_max)


def compose(a_gmt, da_res, arrays: ModelArrays,
            delta_max: float = DELTA_MAX) -> np.ndarray:
    """Final action a_t = a^gmt + clip(delta a^res), clamped to joint limits."""
    a_gmt = np.asarray(a_gmt, dtype=np.float64)
    da_res = np.asarray(da_res, dtype=np.float64)
    if a_gmt.shape != da_res.shape:
        raise ValueError(f"action shape mismatch: {a_gmt.shape} vs "
                         f"{da_res.shape}")
    da = np.clip(da_res, -delta_max, delta_max)
    return np.clip(a_gmt + da, arrays.q_lo, arrays.q_hi)
