"""Independent brute-force reference implementations for testing.

Everything here is deliberately slow and simple: explicit Python loops,
dense sampling, central finite differences.  No code is shared with the
main-path modules; forward kinematics, transforms, and reward formulas are
re-derived from scratch so agreement is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleReport:
    quantity: str
    main_value: float
    oracle_value: float
    tolerance: float

    @property
    def abs_error(self) -> float:
        return abs(self.main_value - self.oracle_value)

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.oracle_value), 1e-300)
        return self.abs_error / denom

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance


def report(quantity, main_value, oracle_value, tolerance) -> OracleReport:
    return OracleReport(quantity, float(main_value), float(oracle_value),
                        float(tolerance))


# ---------------------------------------------------------------------------
# rewards

def oracle_object_reward(P, P_hat, lambda_o):
    total = 0.0
    for i in range(len(P)):
        dx = P[i][0] - P_hat[i][0]
        dz = P[i][1] - P_hat[i][1]
        total += math.sqrt(dx * dx + dz * dz)
    return math.exp(-lambda_o * total)


def oracle_contact_reward(contacts, c_flags, lam, contact_link_ids):
    forces = {}
    for c in contacts:
        if c.counterpart == "object" and c.link >= 0:
            forces[c.link] = forces.get(c.link, 0.0) + c.normal_force
    r = 0.0
    for k in range(len(contact_link_ids)):
        if not c_flags[k]:
            continue
        f = forces.get(int(contact_link_ids[k]), 0.0)
        if f > 0.0:
            r += math.exp(-lam / f)
    return r


# ---------------------------------------------------------------------------
# forward kinematics (independent re-derivation) and metrics

def oracle_fk_positions(qpos, parent, anchor):
    """World link-frame origins by walking the tree with scalar trig."""
    L = len(parent)
    xs = [0.0] * L
    zs = [0.0] * L
    angs = [0.0] * L
    xs[0], zs[0], angs[0] = qpos[0], qpos[1], qpos[2]
    for i in range(1, L):
        p = parent[i]
        ca, sa = math.cos(angs[p]), math.sin(angs[p])
        ax, az = anchor[i][0], anchor[i][1]
        xs[i] = xs[p] + ca * ax - sa * az
        zs[i] = zs[p] + sa * ax + ca * az
        angs[i] = angs[p] + qpos[3 + i - 1]
    return xs, zs, angs


def oracle_metrics(qpos_seq, obj_pose_seq, ref_indices, traj, arrays):
    """(E_o, E_m, E_j) by direct summation with scalar loops."""
    T = len(qpos_seq)
    e_o = e_m = e_j = 0.0
    parent = [int(p) for p in arrays.parent]
    anchor = [list(a) for a in arrays.anchor]
    for k in range(T):
        t = int(ref_indices[k])
        rq = [traj.root_pos[t][0], traj.root_pos[t][1], traj.root_pitch[t]] \
            + list(traj.joints[t])
        xs, zs, _ = oracle_fk_positions(qpos_seq[k], parent, anchor)
        rxs, rzs, _ = oracle_fk_positions(rq, parent, anchor)
        for i in range(len(parent)):
            e_m += math.sqrt((xs[i] - rxs[i]) ** 2 + (zs[i] - rzs[i]) ** 2)
        s = 0.0
        for j in range(len(traj.joints[t])):
            s += (qpos_seq[k][3 + j] - traj.joints[t][j]) ** 2
        e_j += math.sqrt(s)
        if traj.has_object and obj_pose_seq is not None:
            x, z, th = obj_pose_seq[k]
            rx, rz = traj.obj_pos[t]
            rth = traj.obj_pitch[t]
            for p in traj.surface_points:
                px = x + math.cos(th) * p[0] - math.sin(th) * p[1]
                pz = z + math.sin(th) * p[0] + math.cos(th) * p[1]
                hx = rx + math.cos(rth) * p[0] - math.sin(rth) * p[1]
                hz = rz + math.sin(rth) * p[0] + math.cos(rth) * p[1]
                e_o += math.sqrt((px - hx) ** 2 + (pz - hz) ** 2)
    return e_o / T, e_m / T, e_j / T


# ---------------------------------------------------------------------------
# GAE

def oracle_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Nested-sum evaluation: A_t = sum_k (gamma*lam)^k * delta_{t+k},
    truncated at the first done."""
    T = len(rewards)
    deltas = []
    for t in range(T):
        next_v = bootstrap if t == T - 1 else values[t + 1]
        mask = 0.0 if dones[t] else 1.0
        deltas.append(rewards[t] + gamma * next_v * mask - values[t])
    adv = []
    for t in range(T):
        a = 0.0
        coef = 1.0
        for k in range(t, T):
            a += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
        adv.append(a)
    returns = [adv[t] + values[t] for t in range(T)]
    return adv, returns


# ---------------------------------------------------------------------------
# geometry

def oracle_rect_distance(point, half_extents, n=10000):
    """Signed distance to one rectangle via dense boundary sampling."""
    hx, hz = half_extents
    per = 4.0 * (hx + hz)
    best = float("inf")
    for i in range(n):
        d = per * i / n
        if d < 2 * hx:
            bx, bz = hx - d, hz
        elif d < 2 * hx + 2 * hz:
            bx, bz = -hx, hz - (d - 2 * hx)
        elif d < 4 * hx + 2 * hz:
            bx, bz = -hx + (d - 2 * hx - 2 * hz), -hz
        else:
            bx, bz = hx, -hz + (d - 4 * hx - 2 * hz)
        dist = math.sqrt((point[0] - bx) ** 2 + (point[1] - bz) ** 2)
        best = min(best, dist)
    inside = abs(point[0]) < hx and abs(point[1]) < hz
    return -best if inside else best


def oracle_shape_distance(point, rect_offsets, rect_half_extents, n=10000):
    best = float("inf")
    for r in range(len(rect_offsets)):
        local = (point[0] - rect_offsets[r][0], point[1] - rect_offsets[r][1])
        d = oracle_rect_distance(local, rect_half_extents[r], n)
        best = min(best, d)
    return best


# ---------------------------------------------------------------------------
# gradients

def oracle_fd_gradient(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


# ---------------------------------------------------------------------------
# termination

def oracle_termination_scan(frames, sigma_o, patience, root_deviation):
    """First terminating frame of a recorded episode, or None.

    `frames` is a list of dicts with keys: mean_dev (mean per-point object
    deviation), root_err, flagged_zero_force (list of bool per eligible
    link: flagged-in-reference AND zero measured force), diverged,
    bad_ground_contact.
    """
    counts = None
    for t, fr in enumerate(frames):
        flz = fr.get("flagged_zero_force", [])
        if counts is None:
            counts = [0] * len(flz)
        for k in range(len(flz)):
            counts[k] = counts[k] + 1 if flz[k] else 0
        if fr.get("diverged"):
            return t, "diverged"
        if fr.get("bad_ground_contact"):
            return t, "ground-contact"
        if fr.get("root_err", 0.0) > root_deviation:
            return t, "root-deviation"
        if fr.get("mean_dev", 0.0) > sigma_o:
            return t, "object-deviation"
        for k in range(len(flz)):
            if counts[k] > patience:
                return t, "contact-lost"
    return None, ""
