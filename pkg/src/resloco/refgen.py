"""Procedural reference trajectories: GMT corpus, task scripts, artifacts.

All references are kinematic scripts at the policy rate (50 Hz): smooth
keyframe interpolations for the robot plus, for manipulation tasks, an object
path that is attached to the robot's contact frames during the carry phase.
Retargeting-style imperfections (reference penetration / floating contact) can
be injected afterwards, mimicking imperfect human-to-robot motion data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ObjectShape, box_shape, l_shape, rot2, shape_surface_points
from .physics import link_object_distance_q, link_world_points
from .robot import ModelArrays

TRAJ_SCHEMA_VERSION = 1

#: Base height of the settled neutral stance under the default physics.
NEUTRAL_BASE_Z = 0.794

#: Default contact-indicator threshold sigma_c (m).
SIGMA_C = 0.02

GMT_FAMILIES = ("stand", "squat", "lean", "reach", "walk-in-place", "walk")
TASKS = ("squat-lift", "carry-walk", "push", "chair-lift")

_OBJECT_KINDS = {"box", "l"}


@dataclass(frozen=True)
class ReferenceFrame:
    """Single-frame view of a trajectory (robot reference + optional object)."""

    root_pos: np.ndarray  # (2,)
    root_pitch: float
    joints: np.ndarray  # (J,)
    obj_pos: np.ndarray = None  # (2,) or None
    obj_pitch: float = 0.0
    obj_vel: np.ndarray = None
    obj_angvel: float = 0.0
    contacts: np.ndarray = None  # (K,) 0/1 per contact-eligible link


@dataclass
class ReferenceTrajectory:
    """Time-ordered reference at the policy rate.

    Object fields are None for robot-only (GMT) motions.  `contacts` has one
    column per contact-eligible link, ordered as model.contact_links.
    """

    task: str
    fps: float
    root_pos: np.ndarray  # (T, 2)
    root_pitch: np.ndarray  # (T,)
    joints: np.ndarray  # (T, J)
    obj_pos: np.ndarray = None  # (T, 2)
    obj_pitch: np.ndarray = None  # (T,)
    obj_vel: np.ndarray = None  # (T, 2)
    obj_angvel: np.ndarray = None  # (T,)
    contacts: np.ndarray = None  # (T, K) int8
    surface_points: np.ndarray = None  # (N, 2) object-local samples
    object_kind: str = ""
    object_params: dict = field(default_factory=dict)
    artifact_pen: float = 0.0
    artifact_float: float = 0.0

    def __post_init__(self):
        self.root_pos = np.atleast_2d(np.asarray(self.root_pos, dtype=np.float64))
        self.root_pitch = np.asarray(self.root_pitch, dtype=np.float64)
        self.joints = np.atleast_2d(np.asarray(self.joints, dtype=np.float64))
        T = self.root_pos.shape[0]
        if T < 30:
            raise ValueError(f"trajectory must have >= 30 frames, got {T}")
        if self.root_pitch.shape != (T,) or self.joints.shape[0] != T:
            raise ValueError("frame-count mismatch between reference fields")
        arrays = [self.root_pos, self.root_pitch, self.joints]
        if self.has_object:
            for name in ("obj_pos", "obj_pitch", "obj_vel", "obj_angvel",
                         "contacts"):
                a = getattr(self, name)
                if a is None or np.asarray(a).shape[0] != T:
                    raise ValueError(f"object field {name} missing or wrong length")
            self.obj_pos = np.asarray(self.obj_pos, dtype=np.float64)
            self.obj_pitch = np.asarray(self.obj_pitch, dtype=np.float64)
            self.obj_vel = np.asarray(self.obj_vel, dtype=np.float64)
            self.obj_angvel = np.asarray(self.obj_angvel, dtype=np.float64)
            self.contacts = np.asarray(self.contacts, dtype=np.int8)
            arrays += [self.obj_pos, self.obj_pitch, self.obj_vel, self.obj_angvel]
            if self.object_kind not in _OBJECT_KINDS:
                raise ValueError(f"unknown object kind {self.object_kind!r}")
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite values in reference trajectory")

    @property
    def n_frames(self) -> int:
        return self.root_pos.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]

    @property
    def has_object(self) -> bool:
        return self.obj_pos is not None

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def frame(self, t: int) -> ReferenceFrame:
        t = min(max(t, 0), self.n_frames - 1)
        if not self.has_object:
            return ReferenceFrame(self.root_pos[t], float(self.root_pitch[t]),
                                  self.joints[t])
        return ReferenceFrame(self.root_pos[t], float(self.root_pitch[t]),
                              self.joints[t], self.obj_pos[t],
                              float(self.obj_pitch[t]), self.obj_vel[t],
                              float(self.obj_angvel[t]), self.contacts[t])

    def object_shape(self) -> ObjectShape:
        if not self.has_object:
            raise ValueError("robot-only trajectory has no object")
        if self.object_kind == "box":
            return box_shape(tuple(self.object_params["half_extents"]),
                             mass=self.object_params.get("mass", 2.0))
        return l_shape(mass=self.object_params.get("mass", 4.0))

    def qpos_at(self, t: int) -> np.ndarray:
        f = self.frame(t)
        return np.concatenate(([f.root_pos[0], f.root_pos[1], f.root_pitch],
                               f.joints))

    def copy(self) -> "ReferenceTrajectory":
        def cp(a):
            return None if a is None else np.array(a, copy=True)
        return ReferenceTrajectory(
            task=self.task, fps=self.fps, root_pos=cp(self.root_pos),
            root_pitch=cp(self.root_pitch), joints=cp(self.joints),
            obj_pos=cp(self.obj_pos), obj_pitch=cp(self.obj_pitch),
            obj_vel=cp(self.obj_vel), obj_angvel=cp(self.obj_angvel),
            contacts=cp(self.contacts), surface_points=cp(self.surface_points),
            object_kind=self.object_kind, object_params=dict(self.object_params),
            artifact_pen=self.artifact_pen, artifact_float=self.artifact_float)


# ---------------------------------------------------------------------------
# keyframe interpolation

def cubic_keyframes(times, values, sample_times) -> np.ndarray:
    """Catmull-Rom interpolation of (K, D) keyframes at the given times.

    End tangents are clamped to zero, so motions start and stop smoothly.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] != times.shape[0]:
        raise ValueError("keyframe count mismatch")
    if np.any(np.diff(times) <= 0):
        raise ValueError("keyframe times must be strictly increasing")
    K, D = values.shape
    tang = np.zeros((K, D))
    for k in range(1, K - 1):
        tang[k] = (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1])
    out = np.empty((len(sample_times), D))
    for i, t in enumerate(np.asarray(sample_times, dtype=np.float64)):
        t = min(max(t, times[0]), times[-1])
        k = min(int(np.searchsorted(times, t, side="right")) - 1, K - 2)
        h = times[k + 1] - times[k]
        s = (t - times[k]) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        out[i] = (h00 * values[k] + h10 * h * tang[k]
                  + h01 * values[k + 1] + h11 * h * tang[k + 1])
    return out


def _clamp_joints(joints, arrays: ModelArrays) -> np.ndarray:
    return np.clip(joints, arrays.q_lo, arrays.q_hi)


def _squat_leg(depth: float):
    """Symmetric crouch angles (hip, knee, ankle) lowering the base by depth."""
    alpha = float(np.arccos(np.clip(1.0 - depth / 0.7, -1.0, 1.0)))
    return alpha, -2.0 * alpha, alpha


def _finite_difference(path, dt):
    """Central-difference velocity along axis 0 (one-sided at the ends)."""
    path = np.asarray(path, dtype=np.float64)
    v = np.empty_like(path)
    v[1:-1] = (path[2:] - path[:-2]) / (2.0 * dt)
    v[0] = (path[1] - path[0]) / dt
    v[-1] = (path[-1] - path[-2]) / dt
    return v


# ---------------------------------------------------------------------------
# GMT corpus (robot-only motion families)

def _gmt_family(family, arrays: ModelArrays, rng, fps: float):
    J = arrays.n_joints
    dt = 1.0 / fps

    def frames(duration):
        n = max(30, int(round(duration * fps)) + 1)
        return np.arange(n) * dt, n

    neutral = np.zeros(J)
    if family == "stand":
        ts, n = frames(rng.uniform(2.0, 4.0))
        joints = np.tile(neutral, (n, 1))
        root = np.tile([0.0, NEUTRAL_BASE_Z], (n, 1))
        return root, np.zeros(n), joints
    if family == "squat":
        depth = rng.uniform(0.1, 0.5)
        hold = rng.uniform(0.4, 1.0)
        down = rng.uniform(0.8, 1.5)
        hip, knee, ankle = _squat_leg(depth)
        crouch = neutral.copy()
        crouch[[1, 4]] = hip
        crouch[[2, 5]] = knee
        crouch[[3, 6]] = ankle
        key_t = [0.0, down, down + hold, 2 * down + hold]
        key_q = np.stack([neutral, crouch, crouch, neutral])
        key_z = np.array([[NEUTRAL_BASE_Z], [NEUTRAL_BASE_Z - depth],
                          [NEUTRAL_BASE_Z - depth], [NEUTRAL_BASE_Z]])
        ts, n = frames(key_t[-1])
        joints = cubic_keyframes(key_t, key_q, ts)
        z = cubic_keyframes(key_t, key_z, ts)[:, 0]
        root = np.column_stack([np.zeros(n), z])
        return root, np.zeros(n), joints
    if family == "lean":
        amp = rng.uniform(0.2, 0.7)
        period = rng.uniform(1.5, 3.0)
        ts, n = frames(2 * period)
        joints = np.tile(neutral, (n, 1))
        joints[:, 0] = amp * np.sin(2 * np.pi * ts / period) \
            * np.minimum(1.0, ts / 0.5) * np.minimum(1.0, (ts[-1] - ts) / 0.5)
        root = np.tile([0.0, NEUTRAL_BASE_Z], (n, 1))
        return root, np.zeros(n), joints
    if family == "reach":
        amp = rng.uniform(0.6, 1.8)
        period = rng.uniform(1.5, 3.0)
        ts, n = frames(2 * period)
        joints = np.tile(neutral, (n, 1))
        env_ = np.minimum(1.0, ts / 0.5) * np.minimum(1.0, (ts[-1] - ts) / 0.5)
        joints[:, 7] = amp * np.sin(2 * np.pi * ts / period) * env_
        joints[:, 8] = 0.3 * amp * (1 - np.cos(2 * np.pi * ts / period)) * env_
        root = np.tile([0.0, NEUTRAL_BASE_Z], (n, 1))
        return root, np.zeros(n), joints
    if family == "walk-in-place":
        freq = rng.uniform(1.0, 1.8)
        lift = rng.uniform(0.2, 0.5)
        ts, n = frames(rng.uniform(2.5, 4.0))
        joints = np.tile(neutral, (n, 1))
        ph = 2 * np.pi * freq * ts
        env_ = np.minimum(1.0, ts / 0.5) * np.minimum(1.0, (ts[-1] - ts) / 0.5)
        for side, off in ((0, 0.0), (1, np.pi)):
            sw = np.maximum(0.0, np.sin(ph + off)) * env_
            joints[:, 1 + 3 * side] = lift * sw           # hip flexion
            joints[:, 2 + 3 * side] = -2.0 * lift * sw    # knee bend
        root = np.tile([0.0, NEUTRAL_BASE_Z], (n, 1))
        return root, np.zeros(n), joints
    if family == "walk":
        speed = rng.uniform(0.2, 0.6)
        freq = rng.uniform(1.2, 1.8)
        ts, n = frames(rng.uniform(3.0, 5.0))
        joints = np.tile(neutral, (n, 1))
        ph = 2 * np.pi * freq * ts
        env_ = np.minimum(1.0, ts / 0.6) * np.minimum(1.0, (ts[-1] - ts) / 0.6)
        swing = 0.55 * speed / 0.6
        for side, off in ((0, 0.0), (1, np.pi)):
            joints[:, 1 + 3 * side] = swing * np.sin(ph + off) * env_
            joints[:, 2 + 3 * side] = -swing * np.maximum(
                0.0, np.sin(ph + off + 0.5 * np.pi)) * env_
            joints[:, 3 + 3 * side] = -swing * 0.3 * np.sin(ph + off) * env_
        x = speed * np.concatenate([[0.0], np.cumsum(env_[1:] * (ts[1] - ts[0]))])
        z = NEUTRAL_BASE_Z - 0.01 * (1 - np.cos(2 * ph)) / 2 * env_
        root = np.column_stack([x, z])
        return root, np.zeros(n), joints
    raise ValueError(f"unknown motion family {family!r}")


def generate_gmt_corpus(arrays: ModelArrays, count: int, seed: int,
                        fps: float = 50.0):
    """Robot-only reference motions cycling through the GMT families."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        family = GMT_FAMILIES[i % len(GMT_FAMILIES)]
        root, pitch, joints = _gmt_family(family, arrays, rng, fps)
        out.append(ReferenceTrajectory(
            task=f"gmt:{family}", fps=fps, root_pos=root, root_pitch=pitch,
            joints=_clamp_joints(joints, arrays)))
    return out


# ---------------------------------------------------------------------------
# task references (robot + object)

def _arm_ik(shoulder, target, l1=0.30, l2=0.24):
    """World angles (upper-arm, forearm) placing the wrist-point at target.

    Angles measure each segment's direction from straight down; elbow bends
    forward (toward +x).
    """
    dx = target[0] - shoulder[0]
    dz = target[1] - shoulder[1]
    d = float(np.hypot(dx, dz))
    d = min(d, l1 + l2 - 1e-6)
    cos_e = (d * d - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    elbow = float(np.arccos(np.clip(cos_e, -1.0, 1.0)))
    base_ang = float(np.arctan2(dx, -dz))  # 0 = straight down
    inner = float(np.arctan2(l2 * np.sin(elbow), l1 + l2 * np.cos(elbow)))
    a1 = base_ang - inner
    a2 = a1 + elbow
    return a1, a2


def _task_object(task):
    if task in ("squat-lift", "carry-walk"):
        return "box", {"half_extents": [0.12, 0.32], "mass": 3.0}
    if task == "push":
        return "box", {"half_extents": [0.35, 0.22], "mass": 3.0}
    if task == "chair-lift":
        return "l", {"mass": 4.0}
    raise ValueError(f"unknown task {task!r}")


#: clearance between reference contact surfaces in clean (artifact-free) data
_GRIP_GAP = 0.004


def _crouched_pose(arrays: ModelArrays, crouch_depth, torso_lean):
    """Symmetric crouch with a torso-joint lean (negative = forward)."""
    hip, knee, ankle = _squat_leg(crouch_depth)
    q = np.zeros(arrays.n_joints)
    q[0] = torso_lean
    q[[1, 4]] = hip
    q[[2, 5]] = knee
    q[[3, 6]] = ankle
    q = np.clip(q, arrays.q_lo, arrays.q_hi)
    return np.concatenate(([0.0, NEUTRAL_BASE_Z - crouch_depth, 0.0], q))


def _torso_front_x(arrays: ModelArrays, qpos) -> float:
    pts = link_world_points(qpos, arrays)
    return float(pts[arrays.cp_link == 1][:, 0].max())


def _refine_box_x(arrays: ModelArrays, qpos, shape, box_x, rest_z, gap):
    """Slide the object in x until the torso clears it by gap."""
    torso = int(arrays.contact_link_ids[0])
    for _ in range(12):
        pose = np.array([box_x, rest_z, 0.0])
        d = link_object_distance_q(qpos, pose, torso, arrays, shape)
        if abs(d - gap) < 1e-4:
            break
        box_x -= (d - gap)
    return box_x


def _shoulder_world(arrays: ModelArrays, qpos):
    from . import _kernel as K
    pos, ang, _ = K.fk_links(qpos, arrays.parent, arrays.anchor, arrays.com)
    return pos[1] + rot2(ang[1]) @ np.array([0.06, 0.38]), float(ang[1])


def _place_forearm(arrays: ModelArrays, qpos, target):
    """Shoulder/elbow angles putting the forearm pad region at target."""
    sh, torso_ang = _shoulder_world(arrays, qpos)
    if np.hypot(*(np.asarray(target) - sh)) > 0.53:
        raise ValueError(f"arm target {np.round(target, 3)} beyond reach")
    a1, a2 = _arm_ik(sh, target)
    qpos = qpos.copy()
    qpos[3 + 7] = a1 - torso_ang
    qpos[3 + 8] = a2 - a1
    qpos[3 + 7:3 + 9] = np.clip(qpos[3 + 7:3 + 9], arrays.q_lo[7:9],
                                arrays.q_hi[7:9])
    return qpos


def _refine_arm(arrays: ModelArrays, qpos, shape, obj_pose, target, gap,
                side=-1.0):
    """Slide the arm target in x until the forearm clears the object by gap.

    `side` is the direction (in world x) that moves the forearm toward the
    object: -1 when the forearm presses a face from the +x side (grips),
    +1 when it presses the object's -x face (pushes).
    """
    forearm = int(arrays.contact_link_ids[-1])
    target = np.asarray(target, dtype=np.float64).copy()
    for _ in range(12):
        qpos = _place_forearm(arrays, qpos, target)
        d = link_object_distance_q(qpos, obj_pose, forearm, arrays, shape)
        if abs(d - gap) < 1e-4:
            break
        target[0] += side * (d - gap)
    return qpos


def _blend_arm(arrays: ModelArrays, qpos, shape, obj_pose, arm_in, arm_out,
               gap):
    """Arm angles on the blend path from arm_in (inside `gap`) to arm_out
    (clear of it) at which the forearm clears the object by exactly `gap`."""
    forearm = int(arrays.contact_link_ids[-1])
    arm_in = np.asarray(arm_in, dtype=np.float64)
    arm_out = np.asarray(arm_out, dtype=np.float64)
    q = qpos.copy()
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        q[10:12] = (1 - mid) * arm_in + mid * arm_out
        d = link_object_distance_q(q, obj_pose, forearm, arrays, shape)
        lo, hi = (mid, hi) if d < gap else (lo, mid)
    q[10:12] = (1 - hi) * arm_in + hi * arm_out
    return q


def _approach_arm_path(arrays: ModelArrays, qpos_base, shape, obj_pose,
                       arm_from, arm_to, gaps):
    """Arm-pose sequence whose forearm clearance follows the `gaps` schedule.

    Marches from arm_from toward arm_to; each step takes the pose nearest the
    previous one along the remaining straight segment whose clearance equals
    the scheduled gap.  Clearance is not monotone along the segment, so the
    nearest-crossing continuation is what keeps consecutive poses close.
    """
    forearm = int(arrays.contact_link_ids[-1])
    q = qpos_base.copy()

    def dist(arm):
        q[10:12] = arm
        return link_object_distance_q(q, obj_pose, forearm, arrays, shape)

    arm_to = np.asarray(arm_to, dtype=np.float64)
    arm = np.asarray(arm_from, dtype=np.float64).copy()
    out = [arm.copy()]
    for g in gaps[1:]:
        seg = arm_to - arm
        mus = np.linspace(0.0, 1.0, 51)
        hit = None
        for k in range(1, 51):
            if dist(arm + mus[k] * seg) < g:
                hit = (mus[k - 1], mus[k])
                break
        if hit is None:  # whole segment clears the scheduled gap already
            arm = arm_to.copy()
        else:
            lo, hi = hit  # dist(lo) >= g > dist(hi)
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if dist(arm + mid * seg) < g else (mid, hi)
            arm = arm + lo * seg
        out.append(arm.copy())
    return np.array(out)


def _overlay_walk(qpos_frames, fps, i0, i1, freq=1.5):
    """Add a stepping leg pattern to frames [i0, i1) of a sampled trajectory.

    Root translation in a reference is only trackable when paired with leg
    motion the PD controller can actually execute.  Step amplitude follows the
    frame-to-frame root velocity of the sampled spline, so the legs swing
    exactly as fast as the root actually moves.
    """
    if i1 <= i0 + 1:
        return
    joints = qpos_frames[:, 3:]
    ts = (np.arange(i0, i1) - i0) / fps
    dur = ts[-1]
    env = np.clip(np.minimum(ts / 0.4, (dur - ts) / 0.4), 0.0, 1.0)
    ph = 2 * np.pi * freq * ts
    speed = np.gradient(qpos_frames[i0:i1, 0]) * fps
    kern = np.ones(9) / 9.0
    speed = np.convolve(np.pad(speed, 4, mode="edge"), kern, mode="valid")
    swing = 0.55 * np.abs(speed) / 0.6
    # foot clearance must not vanish at low speed or the legs scissor in
    # place; stepping continues in place while the root slows to a stop
    lift = np.maximum(swing, 0.35)
    for side, off in ((0, 0.0), (1, np.pi)):
        joints[i0:i1, 1 + 3 * side] += swing * np.sin(ph + off) * env
        joints[i0:i1, 2 + 3 * side] += -lift * np.maximum(
            0.0, np.sin(ph + off + 0.5 * np.pi)) * env
        joints[i0:i1, 3 + 3 * side] += -0.3 * swing * np.sin(ph + off) * env


def _enforce_arm_gap(arrays: ModelArrays, qpos_frames, shape, obj_pose, upto,
                     safe_arm):
    """Project frames where spline overshoot drives a link into the object.

    Before the scripted grab, torso violations are cured by backing the base
    off in -x (distance is monotone under rigid translation) and forearm
    violations by blending shoulder/elbow toward `safe_arm` (the pre-grip arm
    pose, which clears by construction).  Each is a minimal bisection
    projection, so clean frames are untouched and projected frames move
    continuously with the violation depth.
    """
    from . import _kernel as K
    torso = int(arrays.contact_link_ids[0])
    forearm = int(arrays.contact_link_ids[-1])
    tol = _GRIP_GAP - 1e-6
    torso_tol = 1e-3  # torso only needs to stay out of the object

    def dist(q, link):
        return link_object_distance_q(q, obj_pose, link, arrays, shape)

    for t in range(upto):
        q = qpos_frames[t]
        if dist(q, torso) < torso_tol:
            x0 = q[0]
            lo, hi = 0.0, 0.05
            for _ in range(24):
                mid = 0.5 * (lo + hi)
                q[0] = x0 - mid
                lo, hi = (mid, hi) if dist(q, torso) < torso_tol else (lo, mid)
            q[0] = x0 - hi
        if dist(q, forearm) < tol:
            arm0 = q[10:12].copy()
            q[10:12] = safe_arm
            tgt = safe_arm
            if dist(q, forearm) < tol:
                # the base backed off past the safe pose's margin; raise the
                # wrist until the pads clear and blend toward that instead
                q[10:12] = arm0
                pos, ang, _ = K.fk_links(q, arrays.parent, arrays.anchor,
                                         arrays.com)
                wrist = pos[forearm] + rot2(ang[forearm]) @ np.array([0.0, -0.24])
                tgt = None
                for k in range(1, 26):
                    qt = _place_forearm(arrays, q, (wrist[0], wrist[1] + 0.01 * k))
                    if dist(qt, forearm) >= tol:
                        tgt = qt[10:12].copy()
                        break
                if tgt is None:
                    raise ValueError("cannot project forearm clear of the object")
            lo, hi = 0.0, 1.0
            for _ in range(24):
                mid = 0.5 * (lo + hi)
                q[10:12] = (1 - mid) * arm0 + mid * tgt
                lo, hi = (mid, hi) if dist(q, forearm) < tol else (lo, mid)
            q[10:12] = (1 - hi) * arm0 + hi * tgt


def _attach_object(arrays: ModelArrays, qpos_frames, grab_qpos, grab_obj_pose):
    """Object poses rigidly attached to the torso frame, keyed at grab time."""
    from . import _kernel as K
    pos0, ang0, _ = K.fk_links(grab_qpos, arrays.parent, arrays.anchor, arrays.com)
    rel_p = rot2(-ang0[1]) @ (np.asarray(grab_obj_pose[:2]) - pos0[1])
    rel_a = grab_obj_pose[2] - ang0[1]
    out = np.empty((len(qpos_frames), 3))
    for i, qp in enumerate(qpos_frames):
        pos, ang, _ = K.fk_links(qp, arrays.parent, arrays.anchor, arrays.com)
        p = pos[1] + rot2(ang[1]) @ rel_p
        out[i, :2] = p
        out[i, 2] = ang[1] + rel_a
    return out


def generate_task_reference(task: str, arrays: ModelArrays, seed: int = 0,
                            params: dict = None, fps: float = 50.0,
                            n_surface_points: int = 32) -> ReferenceTrajectory:
    """Scripted robot+object reference for one loco-manipulation task."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; known: {sorted(TASKS)}")
    params = dict(params or {})
    kind, obj_params = _task_object(task)
    if "mass" in params:
        obj_params["mass"] = float(params["mass"])
    rng = np.random.default_rng(np.random.SeedSequence([seed, TASKS.index(task)]))
    dt = 1.0 / fps

    if task in ("squat-lift", "carry-walk", "chair-lift"):
        lift = float(params.get("lift_height", 0.2 + rng.uniform(-0.03, 0.03)))
        if not (0.02 <= lift <= 0.4):
            raise ValueError(f"lift height {lift} beyond reach (0.02..0.4 m)")
        depth = float(params.get("crouch_depth", 0.28 + rng.uniform(-0.02, 0.02)))
        lean = float(params.get("torso_lean", -0.35))
        carry_dist = float(params.get("distance", 0.3 + rng.uniform(-0.1, 0.1)))
        shape = box_shape(tuple(obj_params["half_extents"]), obj_params["mass"]) \
            if kind == "box" else l_shape(obj_params["mass"])
        qpos_grip = _crouched_pose(arrays, depth, lean)
        front = _torso_front_x(arrays, qpos_grip)
        if kind == "box":
            hx, hz = obj_params["half_extents"]
            rest_z = hz
            box_x = _refine_box_x(arrays, qpos_grip, shape,
                                  front + hx + _GRIP_GAP, rest_z, _GRIP_GAP)
            press_x = box_x + hx  # forearm squeezes the +x face
            grip_z = rest_z + 0.75 * hz
        else:  # chair: torso against the backrest's -x face, forearm on its +x
            rest_z = 0.06  # seat half-height; seat bottom on the ground
            box_x = _refine_box_x(arrays, qpos_grip, shape,
                                  front + 0.22 + _GRIP_GAP, rest_z, _GRIP_GAP)
            press_x = box_x - 0.12
            grip_z = 0.45
        obj0 = np.array([box_x, rest_z, 0.0])
        qpos_hover = qpos_grip  # crouched, arm not yet placed
        top_z = rest_z + float(np.max(shape.rect_offsets[:, 1]
                                      + shape.rect_half_extents[:, 1]))
        qpos_hover = _place_forearm(arrays, qpos_hover,
                                    (press_x + 0.05, top_z + 0.20))
        qpos_pre = _refine_arm(arrays, qpos_grip.copy(), shape, obj0,
                               (press_x + 0.04, grip_z), 0.02)
        forearm = int(arrays.contact_link_ids[-1])
        if link_object_distance_q(qpos_pre, obj0, forearm, arrays,
                                  shape) < 0.02 - 1e-4:
            qpos_pre = _blend_arm(arrays, qpos_pre, shape, obj0,
                                  qpos_pre[10:12], qpos_hover[10:12], 0.02)
        qpos_grip = _refine_arm(arrays, qpos_grip, shape, obj0,
                                (press_x + 0.04, grip_z), _GRIP_GAP)
        if link_object_distance_q(qpos_grip, obj0, forearm, arrays,
                                  shape) < _GRIP_GAP - 1e-4:
            # the x-slide refinement is not monotone at every pose; fall back
            # to bisecting between the too-deep pose and the clear pre pose
            qpos_grip = _blend_arm(arrays, qpos_grip, shape, obj0,
                                   qpos_grip[10:12], qpos_pre[10:12],
                                   _GRIP_GAP)
        t_close = 0.4  # duration of the pre -> grip gap-closing segment
        n_close = int(round(t_close * fps)) + 1
        s = 0.5 - 0.5 * np.cos(np.pi * np.linspace(0.0, 1.0, n_close))
        arm_path = _approach_arm_path(arrays, qpos_grip, shape, obj0,
                                      qpos_pre[10:12], qpos_grip[10:12],
                                      0.02 + s * (_GRIP_GAP - 0.02))
        qpos_grip[10:12] = arm_path[-1]
        neutral = np.concatenate(([0.0, NEUTRAL_BASE_Z, 0.0],
                                  np.zeros(arrays.n_joints)))
        rise = min(lift, depth)
        qpos_lift = qpos_grip.copy()
        qpos_lift[1] += rise
        hip, knee, ankle = _squat_leg(depth - rise)
        qpos_lift[[3 + 1, 3 + 4]] = hip
        qpos_lift[[3 + 2, 3 + 5]] = knee
        qpos_lift[[3 + 3, 3 + 6]] = ankle

        # fold the forearm up while half-crouched, carry it over the object's
        # top, then drop it behind the far face and close the grip
        qpos_fold = _crouched_pose(arrays, 0.5 * depth, 0.5 * lean)
        qpos_fold[3 + 7] = -0.3
        qpos_fold[3 + 8] = 2.3
        key_t = list(np.cumsum([0.0, 1.0, 0.8, 0.4, 0.7, t_close, 0.5, 1.2, 1.0]))
        keys = np.stack([neutral, qpos_fold, qpos_hover, qpos_hover, qpos_pre,
                         qpos_grip, qpos_grip, qpos_lift, qpos_lift])
        if task == "carry-walk":
            t_walk = max(1.4, carry_dist / 0.15)
            key_t += [key_t[-1] + t_walk, key_t[-1] + t_walk + 1.0]
            qpos_walk = qpos_lift.copy()
            qpos_walk[0] += carry_dist
            keys = np.vstack([keys, qpos_walk[None], qpos_walk[None]])
        ts = np.arange(int(round(key_t[-1] * fps)) + 1) * dt
        qpos_frames = cubic_keyframes(key_t, keys, ts)
        n = len(ts)
        if task == "carry-walk":
            # pin the settle hold so the spline cannot overshoot the endpoint
            walk_i = int(round(key_t[-2] * fps))
            qpos_frames[walk_i:] = qpos_walk
            _overlay_walk(qpos_frames, fps, int(round(key_t[-3] * fps)), n)
        grab_i = int(round(key_t[6] * fps))  # end of grip-close settle
        # the spline overshoots between the pre/grip keys, so script the final
        # approach explicitly from the precomputed clearance-scheduled path
        pre_i = int(round(key_t[4] * fps))
        hold_i = int(round(key_t[5] * fps))
        qpos_frames[pre_i:grab_i + 1, :10] = qpos_grip[:10]  # keys share these
        qpos_frames[pre_i:hold_i + 1, 10:12] = arm_path
        qpos_frames[hold_i:grab_i + 1, 10:12] = qpos_grip[10:12]
        _enforce_arm_gap(arrays, qpos_frames, shape, obj0, grab_i,
                         qpos_pre[10:12])
        obj = np.tile(obj0, (n, 1))
        attached = _attach_object(arrays, qpos_frames[grab_i:], qpos_frames[grab_i],
                                  obj0)
        obj[grab_i:] = attached
        if task == "carry-walk":
            # pin the scripted endpoint displacement exactly
            obj[-1, 0] = obj0[0] + carry_dist
        contacts = np.zeros((n, arrays.contact_link_ids.shape[0]), dtype=np.int8)
        contacts[grab_i:, :] = 1
    else:  # push
        dist = float(params.get("distance", 0.6 + rng.uniform(-0.15, 0.15)))
        if not (0.1 <= dist <= 3.0):
            raise ValueError(f"push distance {dist} out of range (0.1..3.0 m)")
        hx, hz = obj_params["half_extents"]
        rest_z = hz
        lean = float(params.get("torso_lean", -0.40))
        push_z = 0.35  # below the tipping height hx / mu for both configs
        shape = box_shape((hx, hz), obj_params["mass"])
        qpos_push = None
        # deepen the crouch until the push point is within arm reach
        for crouch in np.arange(0.20, 0.46, 0.02):
            cand = _crouched_pose(arrays, crouch, lean)
            back_x = _torso_front_x(arrays, cand) + 0.12  # box's -x face
            box_x0 = back_x + hx
            try:
                qpos_push = _refine_arm(arrays, cand, shape,
                                        np.array([box_x0, rest_z, 0.0]),
                                        (back_x - 0.04, push_z), _GRIP_GAP,
                                        side=+1.0)
                break
            except ValueError:
                continue
        if qpos_push is None:
            raise ValueError("push pose unreachable for this arm geometry")
        neutral = np.concatenate(([0.0, NEUTRAL_BASE_Z, 0.0],
                                  np.zeros(arrays.n_joints)))
        t_reach, t_settle, t_push = 1.2, 0.4, max(1.5, dist / 0.3)
        key_t = [0.0, t_reach, t_reach + t_settle, t_reach + t_settle + t_push]
        qpos_end = qpos_push.copy()
        qpos_end[0] += dist
        keys = np.stack([neutral, qpos_push, qpos_push, qpos_end])
        ts = np.arange(int(round(key_t[-1] * fps)) + 1) * dt
        qpos_frames = cubic_keyframes(key_t, keys, ts)
        n = len(ts)
        push_i = int(round((t_reach + t_settle) * fps))
        _overlay_walk(qpos_frames, fps, push_i, n)
        obj = np.tile([box_x0, rest_z, 0.0], (n, 1))
        obj[push_i:, 0] = box_x0 + (qpos_frames[push_i:, 0]
                                    - qpos_frames[push_i, 0])
        obj[:, 1] = rest_z  # ground-plane constraint for the whole push
        contacts = np.zeros((n, arrays.contact_link_ids.shape[0]), dtype=np.int8)
        contacts[push_i:, 1] = 1  # forearm only

    joints = _clamp_joints(qpos_frames[:, 3:], arrays)
    obj_vel = _finite_difference(obj[:, :2], dt)
    obj_angvel = _finite_difference(obj[:, 2], dt)
    shape = box_shape(tuple(obj_params["half_extents"]), obj_params["mass"]) \
        if kind == "box" else l_shape(obj_params["mass"])
    surface = shape_surface_points(shape, n_surface_points, seed)
    return ReferenceTrajectory(
        task=task, fps=fps, root_pos=qpos_frames[:, :2],
        root_pitch=qpos_frames[:, 2], joints=joints,
        obj_pos=obj[:, :2], obj_pitch=obj[:, 2], obj_vel=obj_vel,
        obj_angvel=obj_angvel, contacts=contacts, surface_points=surface,
        object_kind=kind, object_params=obj_params)


# ---------------------------------------------------------------------------
# artifacts and oracle contacts

def _min_contact_distance(traj, arrays: ModelArrays, shape, t):
    """Min signed distance over contact-eligible links at frame t."""
    qpos = traj.qpos_at(t)
    obj_pose = np.array([traj.obj_pos[t, 0], traj.obj_pos[t, 1],
                         traj.obj_pitch[t]])
    return min(link_object_distance_q(qpos, obj_pose, int(li), arrays, shape)
               for li in arrays.contact_link_ids)


def inject_retarget_artifacts(traj: ReferenceTrajectory, arrays: ModelArrays,
                              penetration: float = 0.0,
                              float_offset: float = 0.0) -> ReferenceTrajectory:
    """Shift the object reference into (or away from) the robot's contact links.

    Mimics retargeting error in imperfect interaction data: with `penetration`
    the reference object overlaps the robot by that depth during contact
    phases; with `float_offset` it hovers that far away.  Only object fields
    of contact-phase frames are changed.
    """
    if penetration < 0 or float_offset < 0:
        raise ValueError("offsets must be >= 0")
    if penetration > 0 and float_offset > 0:
        raise ValueError("at most one of penetration/float may be nonzero")
    if not traj.has_object:
        raise ValueError("robot-only trajectory has no object reference")
    out = traj.copy()
    if penetration == 0 and float_offset == 0:
        return out
    target = -penetration if penetration > 0 else float_offset
    shape = traj.object_shape()
    for t in range(traj.n_frames):
        if not np.any(traj.contacts[t]):
            continue
        qpos = traj.qpos_at(t)
        # closest contact-eligible collision point defines the shift direction
        pts = link_world_points(qpos, arrays)
        best = None
        for li in arrays.contact_link_ids:
            for p in pts[arrays.cp_link == li]:
                d = float(np.hypot(*(p - out.obj_pos[t])))
                if best is None or d < best[0]:
                    best = (d, p)
        direction = best[1] - out.obj_pos[t]
        nd = float(np.hypot(*direction))
        direction = direction / nd if nd > 1e-12 else np.array([1.0, 0.0])

        def dist_at(s):
            obj_pose = np.array([out.obj_pos[t, 0] + s * direction[0],
                                 out.obj_pos[t, 1] + s * direction[1],
                                 out.obj_pitch[t]])
            return min(link_object_distance_q(qpos, obj_pose, int(li), arrays,
                                              shape)
                       for li in arrays.contact_link_ids)

        lo, hi = -0.8, 0.8
        for _ in range(60):  # bisection: distance decreases toward the link
            mid = 0.5 * (lo + hi)
            if dist_at(mid) > target:
                lo = mid
            else:
                hi = mid
        s = 0.5 * (lo + hi)
        out.obj_pos[t] += s * direction
    out.obj_vel = _finite_difference(out.obj_pos, traj.dt)
    out.obj_angvel = _finite_difference(out.obj_pitch, traj.dt)
    out.artifact_pen = penetration
    out.artifact_float = float_offset
    return out


def oracle_contacts_from_geometry(traj: ReferenceTrajectory,
                                  arrays: ModelArrays,
                                  sigma_c: float = SIGMA_C) -> ReferenceTrajectory:
    """Recompute contact flags from reference geometry: 1(|d| < sigma_c).

    Distance is the signed link-object distance clamped at zero, so a
    penetrating reference still counts as contact.
    """
    if sigma_c <= 0:
        raise ValueError("sigma_c must be > 0")
    if not traj.has_object:
        raise ValueError("robot-only trajectory has no object reference")
    out = traj.copy()
    shape = traj.object_shape()
    for t in range(traj.n_frames):
        qpos = traj.qpos_at(t)
        obj_pose = np.array([traj.obj_pos[t, 0], traj.obj_pos[t, 1],
                             traj.obj_pitch[t]])
        for k, li in enumerate(arrays.contact_link_ids):
            d = link_object_distance_q(qpos, obj_pose, int(li), arrays, shape)
            out.contacts[t, k] = 1 if max(d, 0.0) < sigma_c else 0
    return out


# ---------------------------------------------------------------------------
# JSON persistence

_TRAJ_FIELDS = {"version", "task", "fps", "root_pos", "root_pitch", "joints",
                "obj_pos", "obj_pitch", "obj_vel", "obj_angvel", "contacts",
                "surface_points", "object_kind", "object_params",
                "artifact_pen", "artifact_float"}


def trajectory_to_dict(traj: ReferenceTrajectory) -> dict:
    def arr(a):
        return None if a is None else np.asarray(a).tolist()
    return {
        "version": TRAJ_SCHEMA_VERSION,
        "task": traj.task,
        "fps": traj.fps,
        "root_pos": arr(traj.root_pos),
        "root_pitch": arr(traj.root_pitch),
        "joints": arr(traj.joints),
        "obj_pos": arr(traj.obj_pos),
        "obj_pitch": arr(traj.obj_pitch),
        "obj_vel": arr(traj.obj_vel),
        "obj_angvel": arr(traj.obj_angvel),
        "contacts": arr(traj.contacts),
        "surface_points": arr(traj.surface_points),
        "object_kind": traj.object_kind,
        "object_params": traj.object_params,
        "artifact_pen": traj.artifact_pen,
        "artifact_float": traj.artifact_float,
    }


def trajectory_from_dict(d: dict) -> ReferenceTrajectory:
    unknown = set(d) - _TRAJ_FIELDS
    if unknown:
        raise ValueError(f"unknown trajectory fields: {sorted(unknown)}")
    if d.get("version") != TRAJ_SCHEMA_VERSION:
        raise ValueError(f"unsupported trajectory version {d.get('version')!r}")
    def arr(x, dtype=np.float64):
        return None if x is None else np.asarray(x, dtype=dtype)
    return ReferenceTrajectory(
        task=d["task"], fps=d["fps"], root_pos=arr(d["root_pos"]),
        root_pitch=arr(d["root_pitch"]), joints=arr(d["joints"]),
        obj_pos=arr(d.get("obj_pos")), obj_pitch=arr(d.get("obj_pitch")),
        obj_vel=arr(d.get("obj_vel")), obj_angvel=arr(d.get("obj_angvel")),
        contacts=arr(d.get("contacts"), np.int8),
        surface_points=arr(d.get("surface_points")),
        object_kind=d.get("object_kind", ""),
        object_params=d.get("object_params", {}),
        artifact_pen=d.get("artifact_pen", 0.0),
        artifact_float=d.get("artifact_float", 0.0))


def save_trajectory(traj: ReferenceTrajectory, path):
    with open(path, "w") as f:
        json.dump(trajectory_to_dict(traj), f)


def load_trajectory(path) -> ReferenceTrajectory:
    with open(path) as f:
        text = f.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt trajectory file at offset {e.pos}: {e.msg}")
    return trajectory_from_dict(d)
