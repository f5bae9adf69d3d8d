"""Planar rigid-body engine API: world state, physics configs, stepping, queries.

The heavy lifting lives in the numba kernels (`_kernel`); this module owns the
typed surface used by the rest of the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel as K
from .geometry import ObjectShape, rot2, shape_signed_distance
from .robot import ModelArrays

DIVERGENCE_LIMIT = 1e6

PHYSICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PhysicsConfig:
    dt: float = 0.002
    decimation: int = 10
    gravity: float = -9.81
    contact_stiffness: float = 1e4
    contact_damping: float = 500.0
    friction: float = 0.8
    joint_damping: float = 0.5
    label: str = "train"

    def __post_init__(self):
        if not (0.0 < self.dt <= 0.01):
            raise ValueError("dt must be in (0, 0.01]")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if self.contact_stiffness < 0 or self.contact_damping < 0:
            raise ValueError("contact stiffness/damping must be >= 0")
        if not (0.0 <= self.friction <= 2.0):
            raise ValueError("friction must be in [0, 2]")

    @property
    def control_dt(self) -> float:
        return self.dt * self.decimation


#: The two solver configurations: policies train under "train" and are
#: additionally evaluated under the stiffer, more slippery "transfer" physics.
NAMED_CONFIGS = {
    "train": PhysicsConfig(label="train"),
    "transfer": PhysicsConfig(dt=0.0025, decimation=8, contact_stiffness=3e4,
                              friction=0.6, label="transfer"),
}


def physics_config(label: str) -> PhysicsConfig:
    if label not in NAMED_CONFIGS:
        raise KeyError(f"unknown physics config {label!r}; "
                       f"known: {sorted(NAMED_CONFIGS)}")
    return NAMED_CONFIGS[label]


_PHYS_FIELDS = {"version", "dt", "decimation", "gravity", "contact_stiffness",
                "contact_damping", "friction", "joint_damping", "label"}


def physics_from_dict(d: dict) -> PhysicsConfig:
    unknown = set(d) - _PHYS_FIELDS
    if unknown:
        raise ValueError(f"unknown physics fields: {sorted(unknown)}")
    if d.get("version", PHYSICS_SCHEMA_VERSION) != PHYSICS_SCHEMA_VERSION:
        raise ValueError(f"unsupported physics schema version {d.get('version')!r}")
    kw = {k: v for k, v in d.items() if k != "version"}
    return PhysicsConfig(**kw)


def load_physics(path) -> PhysicsConfig:
    with open(path) as f:
        return physics_from_dict(json.load(f))


@dataclass
class WorldState:
    """Full simulator snapshot.

    qpos = [base_x, base_z, base_pitch, joints...], qvel likewise;
    obj_pose = [x, z, theta], obj_vel = [vx, vz, omega].

    The friction anchors (stick/slip state of every potential contact) are
    part of the snapshot; nan marks an inactive contact.
    """

    qpos: np.ndarray
    qvel: np.ndarray
    obj_pose: np.ndarray
    obj_vel: np.ndarray
    anc_ground: np.ndarray  # (P,)
    anc_obj: np.ndarray  # (P, R) object-frame tangent coordinates
    anc_corner: np.ndarray  # (4R,)
    time: float = 0.0
    diverged: bool = False

    def copy(self) -> "WorldState":
        return WorldState(self.qpos.copy(), self.qvel.copy(),
                          self.obj_pose.copy(), self.obj_vel.copy(),
                          self.anc_ground.copy(), self.anc_obj.copy(),
                          self.anc_corner.copy(), self.time, self.diverged)

    @property
    def base_pos(self) -> np.ndarray:
        return self.qpos[:2]

    @property
    def base_pitch(self) -> float:
        return float(self.qpos[2])

    @property
    def joint_angles(self) -> np.ndarray:
        return self.qpos[3:]

    @property
    def joint_velocities(self) -> np.ndarray:
        return self.qvel[3:]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.qpos)) and np.all(np.isfinite(self.qvel))
                    and np.all(np.isfinite(self.obj_pose))
                    and np.all(np.isfinite(self.obj_vel)))


@dataclass(frozen=True)
class Contact:
    link: int  # -1 for the object's own ground contacts
    counterpart: str  # "ground" | "object"
    point: tuple
    normal_force: float
    tangent_force: float
    penetration: float


def fresh_anchors(arrays: ModelArrays, shape: ObjectShape):
    P = arrays.cp_local.shape[0]
    R = shape.n_rects
    return (np.full(P, np.nan), np.full((P, R), np.nan), np.full(4 * R, np.nan))


def make_state(arrays: ModelArrays, shape: ObjectShape,
               base_pos=(0.0, 0.80), obj_pose=(0.6, 0.12, 0.0)) -> WorldState:
    qpos = np.zeros(arrays.ndof)
    qpos[0], qpos[1] = base_pos
    ag, ao, ac = fresh_anchors(arrays, shape)
    return WorldState(qpos=qpos, qvel=np.zeros(arrays.ndof),
                      obj_pose=np.asarray(obj_pose, dtype=np.float64).copy(),
                      obj_vel=np.zeros(3),
                      anc_ground=ag, anc_obj=ao, anc_corner=ac)


def _records_to_contacts(rec, nrec):
    out = []
    for k in range(nrec):
        out.append(Contact(
            link=int(rec[k, K.C_LINK]),
            counterpart="object" if rec[k, K.C_KIND] == 1.0 else "ground",
            point=(float(rec[k, K.C_PX]), float(rec[k, K.C_PZ])),
            normal_force=float(rec[k, K.C_FN]),
            tangent_force=float(rec[k, K.C_FT]),
            penetration=float(rec[k, K.C_DEPTH]),
        ))
    return out


def pd_torques(q_target, q, qd, arrays: ModelArrays) -> np.ndarray:
    q_target = np.asarray(q_target, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    if not (q_target.shape == q.shape == qd.shape == (arrays.n_joints,)):
        raise ValueError(f"expected {arrays.n_joints} joint values, got shapes "
                         f"{q_target.shape}, {q.shape}, {qd.shape}")
    tau = arrays.kp * (q_target - q) - arrays.kd * qd
    return np.clip(tau, -arrays.tau_lim, arrays.tau_lim)


def step(state: WorldState, joint_targets, object_wrench, cfg: PhysicsConfig,
         arrays: ModelArrays, shape: ObjectShape):
    """Advance one control step (cfg.decimation substeps of cfg.dt).

    Pure: the input state is not mutated.  Returns (new_state, contacts) where
    contacts come from the final substep.  On state explosion the returned
    state has `diverged` set for the caller to terminate the episode.
    """
    targets = np.asarray(joint_targets, dtype=np.float64)
    if targets.shape != (arrays.n_joints,):
        raise ValueError(f"expected {arrays.n_joints} joint targets, "
                         f"got shape {targets.shape}")
    wrench = np.asarray(object_wrench, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(targets)) and np.all(np.isfinite(wrench))):
        raise ValueError("non-finite joint targets or object wrench")
    if not state.is_finite():
        raise ValueError("non-finite world state")
    new = state.copy()
    diverged, rec, nrec, link_fn = K.step_kernel(
        new.qpos, new.qvel, new.obj_pose, new.obj_vel,
        new.anc_ground, new.anc_obj, new.anc_corner, targets, wrench,
        arrays.parent, arrays.anchor, arrays.com, arrays.mass, arrays.inertia,
        arrays.kp, arrays.kd, arrays.tau_lim, arrays.q_lo, arrays.q_hi,
        arrays.cp_local, arrays.cp_link,
        shape.rect_offsets, shape.rect_half_extents,
        shape.mass, shape.inertia,
        cfg.dt, cfg.decimation, cfg.gravity, cfg.contact_stiffness,
        cfg.contact_damping, cfg.friction, cfg.joint_damping)
    new.time = state.time + cfg.control_dt
    new.diverged = bool(diverged)
    return new, _records_to_contacts(rec, nrec)


def contact_query(state: WorldState, arrays: ModelArrays, cfg: PhysicsConfig,
                  shape: ObjectShape):
    """Contacts for the given state without stepping."""
    if not state.is_finite():
        raise ValueError("non-finite world state")
    pos, ang, _ = K.fk_links(state.qpos, arrays.parent, arrays.anchor, arrays.com)
    _, _, rec, nrec = K.compute_contacts(
        pos, ang, arrays.cp_local, arrays.cp_link, state.obj_pose,
        shape.rect_offsets, shape.rect_half_extents,
        cfg.contact_stiffness, cfg.friction,
        state.anc_ground.copy(), state.anc_obj.copy(), state.anc_corner.copy())
    return _records_to_contacts(rec, nrec)


def link_world_points(qpos, arrays: ModelArrays):
    """World positions of all collision points for a configuration."""
    pos, ang, _ = K.fk_links(np.asarray(qpos, dtype=np.float64),
                             arrays.parent, arrays.anchor, arrays.com)
    return K.point_world(pos, ang, arrays.cp_local, arrays.cp_link)


def link_positions(qpos, arrays: ModelArrays):
    """World link-frame origins (used by the link-position tracking metric)."""
    pos, _, _ = K.fk_links(np.asarray(qpos, dtype=np.float64),
                           arrays.parent, arrays.anchor, arrays.com)
    return pos


def link_object_distance_q(qpos, obj_pose, link_index: int,
                           arrays: ModelArrays, shape: ObjectShape) -> float:
    """Min signed distance from a link's collision points to the object surface."""
    if not (0 <= link_index < arrays.n_links):
        raise ValueError(f"invalid link index {link_index}")
    mask = arrays.cp_link == link_index
    if not np.any(mask):
        raise ValueError(f"link {link_index} has no collision points")
    pts = link_world_points(qpos, arrays)[mask]
    Rinv = rot2(-obj_pose[2])
    local = (pts - np.asarray(obj_pose[:2])) @ Rinv.T
    return min(shape_signed_distance(p, shape) for p in local)


def link_object_distance(state: WorldState, link_index: int,
                         arrays: ModelArrays, shape: ObjectShape) -> float:
    return link_object_distance_q(state.qpos, state.obj_pose, link_index,
                                  arrays, shape)


def link_object_forces(contacts, n_links: int) -> np.ndarray:
    """Summed object-contact normal force per link."""
    fn = np.zeros(n_links)
    for c in contacts:
        if c.counterpart == "object" and c.link >= 0:
            fn[c.link] += c.normal_force
    return fn
