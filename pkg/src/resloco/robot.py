"""Planar articulated humanoid model: link/joint description and JSON I/O.

The kinematic tree is rooted at a floating base (x, z, pitch).  Every non-base
link is driven by one revolute joint whose anchor is fixed in the parent frame;
the link frame sits at the joint, rotated by the joint angle relative to the
parent frame.  Generalized coordinates: [x, z, pitch, q_0 ... q_{J-1}].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    inertia: float
    length: float
    collision_points: list  # local 2D coordinates

    def __post_init__(self):
        if self.mass <= 0 or self.inertia <= 0:
            raise ValueError(f"link {self.name}: mass and inertia must be positive")


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    anchor_in_parent: tuple  # parent-frame offset of the joint
    lo: float
    hi: float
    torque_limit: float
    kp: float
    kd: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"joint {self.name}: need lo < hi")
        if self.kp <= 0 or self.kd <= 0 or self.torque_limit <= 0:
            raise ValueError(f"joint {self.name}: gains and torque limit must be positive")


@dataclass(frozen=True)
class RobotModel:
    links: list  # list[LinkSpec]; index 0 is the base
    joints: list  # list[JointSpec]; joint j drives link j+1
    com_offsets: dict  # link name -> local COM
    foot_links: list
    contact_links: list  # contact-eligible (object interaction + contact reward)

    def __post_init__(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ValueError("duplicate link names")
        if len(self.joints) != len(self.links) - 1:
            raise ValueError("need exactly one joint per non-base link")
        seen = {names[0]}
        for j, joint in enumerate(self.joints):
            if joint.parent not in seen:
                raise ValueError(f"joint {joint.name}: parent {joint.parent} not "
                                 "yet defined (joints must be in tree order)")
            if joint.child != names[j + 1]:
                raise ValueError(f"joint {joint.name}: child must be link {j + 1}")
            seen.add(joint.child)
        for name in self.foot_links + self.contact_links:
            if name not in names:
                raise ValueError(f"unknown link {name}")

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def ndof(self) -> int:
        return 3 + self.n_joints

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class ModelArrays:
    """Flat-array compilation of a RobotModel for the physics kernel."""

    parent: np.ndarray  # int32 (L,), -1 for base
    anchor: np.ndarray  # (L, 2) in parent frame (row 0 unused)
    com: np.ndarray  # (L, 2) in own frame
    mass: np.ndarray  # (L,)
    inertia: np.ndarray  # (L,)
    kp: np.ndarray  # (J,)
    kd: np.ndarray
    tau_lim: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    cp_local: np.ndarray  # (P, 2) collision points, local
    cp_link: np.ndarray  # int32 (P,)
    is_foot: np.ndarray  # bool (L,)
    contact_link_ids: np.ndarray  # int32 (K,) contact-eligible links
    link_names: tuple = ()

    @property
    def n_links(self) -> int:
        return self.parent.shape[0]

    @property
    def n_joints(self) -> int:
        return self.parent.shape[0] - 1

    @property
    def ndof(self) -> int:
        return self.parent.shape[0] + 2


def compile_model(model: RobotModel) -> ModelArrays:
    L = model.n_links
    names = [l.name for l in model.links]
    parent = np.empty(L, dtype=np.int32)
    parent[0] = -1
    anchor = np.zeros((L, 2))
    for j, joint in enumerate(model.joints):
        parent[j + 1] = names.index(joint.parent)
        anchor[j + 1] = joint.anchor_in_parent
    com = np.array([model.com_offsets.get(n, (0.0, 0.0)) for n in names])
    cp_local, cp_link = [], []
    for i, l in enumerate(model.links):
        for p in l.collision_points:
            cp_local.append(p)
            cp_link.append(i)
    return ModelArrays(
        parent=parent,
        anchor=anchor,
        com=com,
        mass=np.array([l.mass for l in model.links]),
        inertia=np.array([l.inertia for l in model.links]),
        kp=np.array([j.kp for j in model.joints]),
        kd=np.array([j.kd for j in model.joints]),
        tau_lim=np.array([j.torque_limit for j in model.joints]),
        q_lo=np.array([j.lo for j in model.joints]),
        q_hi=np.array([j.hi for j in model.joints]),
        cp_local=np.array(cp_local) if cp_local else np.zeros((0, 2)),
        cp_link=np.array(cp_link, dtype=np.int32) if cp_link else np.zeros(0, np.int32),
        is_foot=np.array([l.name in model.foot_links for l in model.links]),
        contact_link_ids=np.array([names.index(n) for n in model.contact_links],
                                  dtype=np.int32),
        link_names=tuple(names),
    )


def default_humanoid() -> RobotModel:
    """Sagittal-plane humanoid: floating pelvis, torso, two legs, one arm.

    9 actuated joints: torso, 2x(hip, knee, ankle), shoulder, elbow.
    Standing neutral pose is q = 0 with the pelvis at z ~ 0.80.
    """
    thigh, shank = 0.35, 0.35
    links = [
        LinkSpec("pelvis", 8.0, 0.08, 0.20, []),
        LinkSpec("torso", 17.0, 0.45, 0.45,
                 [[0.10, 0.00], [0.10, 0.08], [0.10, 0.20], [0.10, 0.32]]),
        LinkSpec("l_thigh", 5.0, 0.06, thigh, []),
        LinkSpec("l_shank", 3.0, 0.04, shank, []),
        LinkSpec("l_foot", 1.0, 0.012, 0.36,
                 [[-0.18, -0.05], [-0.09, -0.05], [0.09, -0.05], [0.18, -0.05]]),
        LinkSpec("r_thigh", 5.0, 0.06, thigh, []),
        LinkSpec("r_shank", 3.0, 0.04, shank, []),
        LinkSpec("r_foot", 1.0, 0.012, 0.36,
                 [[-0.18, -0.05], [-0.09, -0.05], [0.09, -0.05], [0.18, -0.05]]),
        LinkSpec("upper_arm", 2.0, 0.02, 0.30, []),
        LinkSpec("forearm", 1.5, 0.015, 0.30,
                 [[0.04, -0.12], [0.04, -0.21], [0.04, -0.28], [0.0, -0.30]]),
    ]
    leg = dict(lo=-2.2, hi=2.2, torque_limit=250.0, kp=600.0, kd=30.0)
    ankle = dict(lo=-1.0, hi=1.0, torque_limit=160.0, kp=700.0, kd=25.0)
    joints = [
        JointSpec("torso", "pelvis", "torso", (0.0, 0.10),
                  lo=-1.2, hi=1.2, torque_limit=300.0, kp=600.0, kd=30.0),
        JointSpec("l_hip", "pelvis", "l_thigh", (0.0, -0.05), **leg),
        JointSpec("l_knee", "l_thigh", "l_shank", (0.0, -thigh),
                  lo=-2.4, hi=0.02, torque_limit=250.0, kp=600.0, kd=30.0),
        JointSpec("l_ankle", "l_shank", "l_foot", (0.0, -shank), **ankle),
        JointSpec("r_hip", "pelvis", "r_thigh", (0.0, -0.05), **leg),
        JointSpec("r_knee", "r_thigh", "r_shank", (0.0, -thigh),
                  lo=-2.4, hi=0.02, torque_limit=250.0, kp=600.0, kd=30.0),
        JointSpec("r_ankle", "r_shank", "r_foot", (0.0, -shank), **ankle),
        JointSpec("shoulder", "torso", "upper_arm", (0.06, 0.38),
                  lo=-2.8, hi=2.8, torque_limit=90.0, kp=120.0, kd=6.0),
        JointSpec("elbow", "upper_arm", "forearm", (0.0, -0.30),
                  lo=-0.02, hi=2.4, torque_limit=60.0, kp=80.0, kd=4.0),
    ]
    com = {
        "pelvis": (0.0, 0.0),
        "torso": (-0.02, 0.22),
        "l_thigh": (0.0, -0.175), "l_shank": (0.0, -0.175), "l_foot": (0.0, -0.03),
        "r_thigh": (0.0, -0.175), "r_shank": (0.0, -0.175), "r_foot": (0.0, -0.03),
        "upper_arm": (0.0, -0.15), "forearm": (0.0, -0.15),
    }
    return RobotModel(links=links, joints=joints, com_offsets=com,
                      foot_links=["l_foot", "r_foot"],
                      contact_links=["torso", "forearm"])


_LINK_FIELDS = {"name", "mass", "inertia", "length", "collision_points"}
_JOINT_FIELDS = {"name", "parent", "child", "anchor_in_parent", "lo", "hi",
                 "torque_limit", "kp", "kd"}
_TOP_FIELDS = {"version", "links", "joints", "com_offsets", "foot_links",
               "contact_links"}


def _check_fields(d: dict, allowed: set, what: str):
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown {what} fields: {sorted(unknown)}")


def model_to_dict(model: RobotModel) -> dict:
    return {
        "version": MODEL_SCHEMA_VERSION,
        "links": [{"name": l.name, "mass": l.mass, "inertia": l.inertia,
                   "length": l.length, "collision_points": list(map(list, l.collision_points))}
                  for l in model.links],
        "joints": [{"name": j.name, "parent": j.parent, "child": j.child,
                    "anchor_in_parent": list(j.anchor_in_parent), "lo": j.lo,
                    "hi": j.hi, "torque_limit": j.torque_limit,
                    "kp": j.kp, "kd": j.kd}
                   for j in model.joints],
        "com_offsets": {k: list(v) for k, v in model.com_offsets.items()},
        "foot_links": list(model.foot_links),
        "contact_links": list(model.contact_links),
    }


def model_from_dict(d: dict) -> RobotModel:
    _check_fields(d, _TOP_FIELDS, "model")
    if d.get("version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {d.get('version')!r}")
    links = []
    for ld in d["links"]:
        _check_fields(ld, _LINK_FIELDS, "link")
        links.append(LinkSpec(ld["name"], ld["mass"], ld["inertia"], ld["length"],
                              ld["collision_points"]))
    joints = []
    for jd in d["joints"]:
        _check_fields(jd, _JOINT_FIELDS, "joint")
        joints.append(JointSpec(jd["name"], jd["parent"], jd["child"],
                                tuple(jd["anchor_in_parent"]), jd["lo"], jd["hi"],
                                jd["torque_limit"], jd["kp"], jd["kd"]))
    return RobotModel(links=links, joints=joints,
                      com_offsets={k: tuple(v) for k, v in d["com_offsets"].items()},
                      foot_links=list(d["foot_links"]),
                      contact_links=list(d["contact_links"]))


def save_model(model: RobotModel, path):
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=1)


def load_model(path) -> RobotModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
