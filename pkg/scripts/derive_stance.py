"""Derive the standing fixed point of the default humanoid.

Solves the static balance residual r(q) = Q_contact(q) - h(q, 0) = 0 by
Newton iteration, with PD targets equal to the joint angles (zero actuation)
and relaxed friction anchors (zero tangential force).  The base-x equation is
identically zero under relaxed anchors and is dropped.  The result is the
configuration at which `physics.step` with targets = joint angles is an exact
fixed point; the printed constants are frozen into the test suite.

Usage: python3 scripts/derive_stance.py
"""

import numpy as np

from resloco import _kernel as K
from resloco.geometry import box_shape
from resloco.physics import NAMED_CONFIGS, fresh_anchors, make_state, step
from resloco.robot import compile_model, default_humanoid

CFG = NAMED_CONFIGS["train"]
FAR_OBJECT = np.array([50.0, 0.12, 0.0])  # out of reach of every link


def residual(x, arrays, shape):
    """Static balance residual over [z, pitch, joints] (base x dropped)."""
    qpos = np.concatenate(([0.0], x))
    pos, ang, cw = K.fk_links(qpos, arrays.parent, arrays.anchor, arrays.com)
    vel = np.zeros((arrays.n_links, 2))
    omg = np.zeros(arrays.n_links)
    h = K.bias_forces(arrays.parent, pos, ang, cw, vel, omg,
                      arrays.mass, arrays.inertia, CFG.gravity)
    ag, ao, ac = fresh_anchors(arrays, shape)  # relaxed: zero friction
    pf, _, _, _ = K.compute_contacts(
        pos, ang, arrays.cp_local, arrays.cp_link, FAR_OBJECT,
        shape.rect_offsets, shape.rect_half_extents,
        CFG.contact_stiffness, CFG.friction, ag, ao, ac)
    cp_world = K.point_world(pos, ang, arrays.cp_local, arrays.cp_link)
    Q = K.apply_point_forces(arrays.parent, pos, pf, arrays.cp_link,
                             cp_world, arrays.ndof)
    return (Q - h)[1:]


def solve_stance(arrays, shape, verbose=True):
    x = np.concatenate(([0.794, 0.0], np.zeros(arrays.n_joints)))
    n = x.shape[0]
    for it in range(60):
        r = residual(x, arrays, shape)
        if verbose:
            print(f"  newton iter {it:2d}  |r| = {np.linalg.norm(r):.3e}")
        if np.linalg.norm(r) < 1e-10:
            break
        J = np.empty((n, n))
        eps = 1e-7
        for i in range(n):
            xp = x.copy()
            xp[i] += eps
            J[:, i] = (residual(xp, arrays, shape) - r) / eps
        dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        m = np.max(np.abs(dx))
        if m > 0.05:
            dx *= 0.05 / m
        x = x + dx
    return np.concatenate(([0.0], x))


def main():
    arrays = compile_model(default_humanoid())
    shape = box_shape((0.12, 0.35), 3.0)
    qpos = solve_stance(arrays, shape)
    print("\nstance qpos (x z pitch joints...):")
    np.set_printoptions(precision=12, suppress=False)
    print(repr(qpos))

    # verify: exact fixed point of the full stepper
    state = make_state(arrays, shape, base_pos=(0.0, qpos[1]),
                       obj_pose=tuple(FAR_OBJECT))
    state.qpos[:] = qpos
    targets = qpos[3:].copy()
    for _ in range(100):
        state, _ = step(state, targets, np.zeros(3), CFG, arrays, shape)
    print(f"\nafter 100 control steps: max |qvel| = {np.abs(state.qvel).max():.3e}"
          f"  drift |dq| = {np.abs(state.qpos - qpos).max():.3e}")


if __name__ == "__main__":
    main()
