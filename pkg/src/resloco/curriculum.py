"""Virtual object controller curriculum and domain randomization.

The virtual object controller applies an assistive PD wrench driving the
object toward its reference; its gains hold at full strength early in
training and then decay linearly to a floor, weaning the policy off the
assistance.  Domain randomization perturbs masses, friction, PD gains, and
the initial object pose once per episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ObjectShape, wrap_angle
from .physics import PhysicsConfig
from .robot import ModelArrays


@dataclass(frozen=True)
class CurriculumSchedule:
    kp0: float = 200.0  # N/m (force branch)
    kd0: float = 49.0  # N.s/m; ~2*sqrt(kp0 * object mass) for a 3 kg object
    hold: int = 200  # iterations at full gains
    decay: int = 800  # iterations of linear decay
    floor: float = 0.0  # fraction of full gains retained after decay
    torque_ratio: float = 0.1  # torque-branch gains as a fraction of force

    def __post_init__(self):
        if self.kp0 < 0 or self.kd0 < 0:
            raise ValueError("gains must be >= 0")
        if self.hold < 0 or self.decay < 0:
            raise ValueError("hold/decay must be >= 0")
        if not (0.0 <= self.floor <= 1.0):
            raise ValueError("floor must be in [0, 1]")


def gains_at(schedule: CurriculumSchedule, iteration: int):
    """(kp, kd) at a training iteration: hold, then linear decay to floor."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if iteration < schedule.hold or schedule.decay == 0:
        frac = 1.0 if iteration < schedule.hold else schedule.floor
    elif iteration >= schedule.hold + schedule.decay:
        frac = schedule.floor
    else:
        t = (iteration - schedule.hold) / schedule.decay
        frac = 1.0 + t * (schedule.floor - 1.0)
    return schedule.kp0 * frac, schedule.kd0 * frac


def virtual_wrench(obj_pose, obj_vel, ref_pos, ref_pitch, ref_vel, ref_angvel,
                   kp: float, kd: float, torque_ratio: float = 0.1):
    """Assistive PD wrench (F, T) applied at the object's center of mass.

    F = kp (p_hat - p) - kd (v - v_hat); the torque branch uses the same
    scalar gains scaled by torque_ratio, with the angle error wrapped.
    """
    obj_pose = np.asarray(obj_pose, dtype=np.float64)
    obj_vel = np.asarray(obj_vel, dtype=np.float64)
    F = kp * (np.asarray(ref_pos) - obj_pose[:2]) \
        - kd * (obj_vel[:2] - np.asarray(ref_vel))
    T = torque_ratio * (kp * wrap_angle(ref_pitch - obj_pose[2])
                        - kd * (obj_vel[2] - ref_angvel))
    return np.concatenate([F, [T]])


@dataclass(frozen=True)
class RandomizationRanges:
    link_mass: tuple = (0.9, 1.1)  # multiplicative
    object_mass: tuple = (0.8, 1.2)
    friction: tuple = (0.8, 1.2)
    pd_gains: tuple = (0.9, 1.1)
    obj_pos: float = 0.05  # additive, +- m
    obj_pitch: float = 0.1  # additive, +- rad
    obs_noise_std: float = 0.01

    def __post_init__(self):
        for name in ("link_mass", "object_mass", "friction", "pd_gains"):
            lo, hi = getattr(self, name)
            if not (lo <= 1.0 <= hi):
                raise ValueError(f"{name} range must contain 1")
        if self.obj_pos < 0 or self.obj_pitch < 0 or self.obs_noise_std < 0:
            raise ValueError("additive ranges and noise std must be >= 0")

    @classmethod
    def disabled(cls) -> "RandomizationRanges":
        return cls(link_mass=(1.0, 1.0), object_mass=(1.0, 1.0),
                   friction=(1.0, 1.0), pd_gains=(1.0, 1.0),
                   obj_pos=0.0, obj_pitch=0.0, obs_noise_std=0.0)


def randomize(arrays: ModelArrays, shape: ObjectShape, cfg: PhysicsConfig,
              ranges: RandomizationRanges, rng):
    """One episode's perturbation of (model, object, physics) plus the object
    initial-pose offset; deterministic given the rng state."""
    m_link = rng.uniform(*ranges.link_mass)
    m_obj = rng.uniform(*ranges.object_mass)
    mu = rng.uniform(*ranges.friction)
    g_pd = rng.uniform(*ranges.pd_gains)
    dpos = rng.uniform(-ranges.obj_pos, ranges.obj_pos, size=2)
    dpitch = rng.uniform(-ranges.obj_pitch, ranges.obj_pitch)
    new_arrays = replace(arrays, mass=arrays.mass * m_link,
                         inertia=arrays.inertia * m_link,
                         kp=arrays.kp * g_pd, kd=arrays.kd * g_pd)
    new_shape = replace(shape, mass=shape.mass * m_obj,
                        inertia=shape.inertia * m_obj)
    new_cfg = replace(cfg, friction=float(np.clip(cfg.friction * mu, 0.0, 2.0)))
    log = {"link_mass": float(m_link), "object_mass": float(m_obj),
           "friction": float(mu), "pd_gains": float(g_pd),
           "obj_dx": float(dpos[0]), "obj_dz": float(dpos[1]),
           "obj_dpitch": float(dpitch)}
    return new_arrays, new_shape, new_cfg, np.array([dpos[0], dpos[1], dpitch]), log
