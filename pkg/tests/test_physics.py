"""Engine contracts: integrator, PD torques, contacts, distances, determinism."""

from dataclasses import replace

import numpy as np
import pytest

from resloco.geometry import box_shape
from resloco.physics import (NAMED_CONFIGS, Contact, PhysicsConfig,
                             contact_query, link_object_distance,
                             link_object_distance_q, link_object_forces,
                             link_positions, make_state, pd_torques,
                             physics_config, physics_from_dict, step)
from resloco.oracles import oracle_fk_positions

CFG = NAMED_CONFIGS["train"]
FAR = (50.0, 0.12, 0.0)

# [DERIVED] standing fixed point of the default humanoid under "train"
# physics, solved by Newton iteration on the static balance residual
# (scripts/derive_stance.py); verified |qvel| < 1e-15 after 100 steps.
STANCE_BASE_Z = 0.7942979375
STANCE_TORSO = -0.02563540852168
STANCE_SHOULDER = 0.02563540852168


def stance_qpos(arrays):
    qpos = np.zeros(arrays.ndof)
    qpos[1] = STANCE_BASE_Z
    qpos[3] = STANCE_TORSO
    qpos[10] = STANCE_SHOULDER
    return qpos


class TestPhysicsConfig:
    def test_named_configs(self):
        assert physics_config("train").contact_stiffness == 1e4
        tr = physics_config("transfer")
        assert tr.contact_stiffness == 3e4
        assert tr.friction == 0.6
        assert tr.dt == 0.0025

    def test_unknown_label_rejected(self):
        with pytest.raises(KeyError, match="unknown physics config"):
            physics_config("mars")

    def test_invalid_dt_rejected(self):
        with pytest.raises(ValueError, match="dt"):
            PhysicsConfig(dt=0.02)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown physics fields"):
            physics_from_dict({"dt": 0.002, "wind": 1.0})


class TestIntegrator:
    def test_airborne_object_closed_form(self, arrays, box):
        """Free-falling object matches semi-implicit Euler to 1e-12."""
        state = make_state(arrays, box, base_pos=(0.0, 5.0), obj_pose=(8.0, 6.0, 0.1))
        state.obj_vel[:] = (0.3, 0.2, -0.4)
        new, contacts = step(state, np.zeros(arrays.n_joints), np.zeros(3),
                             CFG, arrays, box)
        z, vz = 6.0, 0.2
        x, vx = 8.0, 0.3
        th, om = 0.1, -0.4
        for _ in range(CFG.decimation):
            vz += CFG.gravity * CFG.dt
            z += vz * CFG.dt
            x += vx * CFG.dt
            th += om * CFG.dt
        assert new.obj_pose[1] == pytest.approx(z, abs=1e-12)
        assert new.obj_pose[0] == pytest.approx(x, abs=1e-12)
        assert new.obj_pose[2] == pytest.approx(th, abs=1e-12)
        assert new.obj_vel[1] == pytest.approx(vz, abs=1e-12)
        assert not any(c.counterpart == "object" for c in contacts)

    def test_step_is_pure(self, arrays, box):
        state = make_state(arrays, box)
        snap = state.copy()
        step(state, np.zeros(arrays.n_joints), np.zeros(3), CFG, arrays, box)
        np.testing.assert_array_equal(state.qpos, snap.qpos)
        np.testing.assert_array_equal(state.qvel, snap.qvel)
        np.testing.assert_array_equal(state.obj_pose, snap.obj_pose)

    def test_determinism_bitwise(self, arrays, box):
        state = make_state(arrays, box, base_pos=(0.0, STANCE_BASE_Z))
        state.qpos[:] = stance_qpos(arrays)
        tgt = state.qpos[3:] + 0.05
        a, ca = step(state, tgt, np.zeros(3), CFG, arrays, box)
        b, cb = step(state, tgt, np.zeros(3), CFG, arrays, box)
        np.testing.assert_array_equal(a.qpos, b.qpos)
        np.testing.assert_array_equal(a.qvel, b.qvel)
        np.testing.assert_array_equal(a.obj_pose, b.obj_pose)
        assert len(ca) == len(cb)
        for x, y in zip(ca, cb):
            assert x == y


class TestStance:
    def test_standing_fixed_point(self, arrays, box):
        """[DERIVED] stance constants: |qvel| < 1e-6 after 100 steps."""
        state = make_state(arrays, box, base_pos=(0.0, STANCE_BASE_Z),
                           obj_pose=FAR)
        state.qpos[:] = stance_qpos(arrays)
        targets = state.qpos[3:].copy()
        for _ in range(100):
            state, _ = step(state, targets, np.zeros(3), CFG, arrays, box)
        assert np.abs(state.qvel).max() < 1e-6
        assert abs(state.qpos[1] - STANCE_BASE_Z) < 1e-6

    def test_stance_supports_weight(self, arrays, box):
        state = make_state(arrays, box, base_pos=(0.0, STANCE_BASE_Z),
                           obj_pose=FAR)
        state.qpos[:] = stance_qpos(arrays)
        _, contacts = step(state, state.qpos[3:].copy(), np.zeros(3), CFG,
                           arrays, box)
        total_weight = float(np.sum(arrays.mass)) * -CFG.gravity
        fn = sum(c.normal_force for c in contacts
                 if c.counterpart == "ground" and c.link >= 0)
        assert fn == pytest.approx(total_weight, rel=0.02)


class TestRestingObject:
    def test_penetration_matches_spring_balance(self, arrays, box):
        """Steady penetration within 5% of m*g/(n*k) for n supporting corners."""
        state = make_state(arrays, box, base_pos=(0.0, 5.0),
                          obj_pose=(8.0, 0.349, 0.0))
        contacts = []
        for _ in range(300):
            state, contacts = step(state, np.zeros(arrays.n_joints),
                                   np.zeros(3), CFG, arrays, box)
        ground = [c for c in contacts if c.counterpart == "ground" and c.link < 0]
        assert len(ground) == 2  # the box rests on its two bottom corners
        analytic = box.mass * -CFG.gravity / (2 * CFG.contact_stiffness)
        for c in ground:
            assert c.penetration == pytest.approx(analytic, rel=0.05)

    def test_coulomb_bound_on_resting_contacts(self, arrays, box):
        state = make_state(arrays, box, base_pos=(0.0, 5.0),
                          obj_pose=(8.0, 0.30, 0.3))
        for _ in range(400):
            state, contacts = step(state, np.zeros(arrays.n_joints),
                                   np.zeros(3), CFG, arrays, box)
            for c in contacts:
                assert c.normal_force >= 0
                assert abs(c.tangent_force) <= CFG.friction * c.normal_force + 1e-9


class TestPdTorques:
    def test_zero_error_zero_torque(self, arrays):
        q = np.zeros(arrays.n_joints)
        np.testing.assert_array_equal(
            pd_torques(q, q, np.zeros_like(q), arrays), np.zeros_like(q))

    def test_arithmetic(self, arrays):
        tiny = replace(arrays, kp=np.full(arrays.n_joints, 10.0),
                       kd=np.full(arrays.n_joints, 1.0),
                       tau_lim=np.full(arrays.n_joints, 100.0))
        q = np.zeros(arrays.n_joints)
        tau = pd_torques(q + 0.5, q, np.ones_like(q), tiny)
        np.testing.assert_allclose(tau, 4.0)  # 10*0.5 - 1*1

    def test_clamped_at_limit(self, arrays):
        q = np.zeros(arrays.n_joints)
        tau = pd_torques(q + 100.0, q, np.zeros_like(q), arrays)
        np.testing.assert_array_equal(tau, arrays.tau_lim)

    def test_length_mismatch_rejected(self, arrays):
        with pytest.raises(ValueError, match="joint values"):
            pd_torques(np.zeros(3), np.zeros(arrays.n_joints),
                       np.zeros(arrays.n_joints), arrays)


class TestContactQuery:
    def test_airborne_empty(self, arrays, box):
        state = make_state(arrays, box, base_pos=(0.0, 5.0),
                          obj_pose=(8.0, 5.0, 0.0))
        assert contact_query(state, arrays, CFG, box) == []

    def test_penetration_force_arithmetic(self, arrays, box):
        # f = k * depth per point, and lowering the base by 0.01 m deepens
        # every foot contact by exactly 0.01 m
        def ground_contacts(base_z):
            state = make_state(arrays, box, base_pos=(0.0, base_z),
                               obj_pose=FAR)
            state.qpos[3] = STANCE_TORSO
            state.qpos[10] = STANCE_SHOULDER
            contacts = contact_query(state, arrays, CFG, box)
            return [c for c in contacts
                    if c.counterpart == "ground" and c.link >= 0]

        before = ground_contacts(STANCE_BASE_Z)
        after = ground_contacts(STANCE_BASE_Z - 0.01)
        assert len(before) == 8  # 4 points per foot
        assert len(after) == 8
        for b, c in zip(before, after):
            assert c.normal_force == pytest.approx(
                CFG.contact_stiffness * c.penetration)
            assert c.penetration - b.penetration == pytest.approx(0.01,
                                                                  abs=1e-9)


class TestLinkObjectDistance:
    def test_invalid_link_rejected(self, arrays, box):
        state = make_state(arrays, box)
        with pytest.raises(ValueError, match="invalid link"):
            link_object_distance(state, 99, arrays, box)

    def test_link_without_points_rejected(self, arrays, box):
        state = make_state(arrays, box)
        with pytest.raises(ValueError, match="no collision points"):
            link_object_distance(state, 0, arrays, box)  # pelvis

    def test_far_object_distance_large(self, arrays, box):
        state = make_state(arrays, box, obj_pose=FAR)
        torso = int(arrays.contact_link_ids[0])
        assert link_object_distance(state, torso, arrays, box) > 40.0

    def test_signed_when_penetrating(self, arrays, box):
        qpos = np.zeros(arrays.ndof)
        qpos[1] = STANCE_BASE_Z
        torso = int(arrays.contact_link_ids[0])
        # object centered on the torso collision points
        d = link_object_distance_q(qpos, (0.10, 1.0, 0.0), torso, arrays, box)
        assert d < 0


class TestForwardKinematics:
    def test_matches_scalar_oracle(self, arrays, rng):
        for _ in range(50):
            qpos = np.concatenate([rng.uniform(-1, 1, 3),
                                   rng.uniform(arrays.q_lo, arrays.q_hi)])
            pos = link_positions(qpos, arrays)
            xs, zs, _ = oracle_fk_positions(
                qpos, [int(p) for p in arrays.parent],
                [list(a) for a in arrays.anchor])
            np.testing.assert_allclose(pos[:, 0], xs, atol=1e-12)
            np.testing.assert_allclose(pos[:, 1], zs, atol=1e-12)


class TestJointLimitsAndDivergence:
    def test_joint_limits_after_steps(self, arrays, box):
        state = make_state(arrays, box, base_pos=(0.0, STANCE_BASE_Z),
                           obj_pose=FAR)
        rng = np.random.default_rng(9)
        for _ in range(50):
            tgt = rng.uniform(arrays.q_lo, arrays.q_hi)
            state, _ = step(state, tgt, np.zeros(3), CFG, arrays, box)
            assert np.all(state.qpos[3:] >= arrays.q_lo - 1e-12)
            assert np.all(state.qpos[3:] <= arrays.q_hi + 1e-12)

    def test_divergence_flagged_not_raised(self, arrays, box):
        state = make_state(arrays, box)
        state.qvel[0] = 2e6
        new, _ = step(state, np.zeros(arrays.n_joints), np.zeros(3), CFG,
                      arrays, box)
        assert new.diverged

    def test_non_finite_input_rejected(self, arrays, box):
        state = make_state(arrays, box)
        bad = np.zeros(arrays.n_joints)
        bad[0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            step(state, bad, np.zeros(3), CFG, arrays, box)

    def test_wrong_target_length_rejected(self, arrays, box):
        state = make_state(arrays, box)
        with pytest.raises(ValueError, match="joint targets"):
            step(state, np.zeros(3), np.zeros(3), CFG, arrays, box)


class TestLinkObjectForces:
    def test_aggregates_only_object_contacts(self):
        contacts = [
            Contact(1, "object", (0, 0), 5.0, 0.0, 0.001),
            Contact(1, "object", (0, 0), 7.0, 0.0, 0.001),
            Contact(1, "ground", (0, 0), 100.0, 0.0, 0.001),
            Contact(-1, "ground", (0, 0), 50.0, 0.0, 0.001),
            Contact(9, "object", (0, 0), 3.0, 0.0, 0.001),
        ]
        fn = link_object_forces(contacts, 10)
        assert fn[1] == pytest.approx(12.0)
        assert fn[9] == pytest.approx(3.0)
        assert fn.sum() == pytest.approx(15.0)
