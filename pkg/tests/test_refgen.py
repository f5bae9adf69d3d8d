"""Reference generation: corpus, task scripts, artifacts, contacts, JSON I/O."""

import json

import numpy as np
import pytest

from resloco.physics import link_object_distance_q
from resloco.refgen import (GMT_FAMILIES, SIGMA_C, TASKS, _finite_difference,
                            generate_gmt_corpus, generate_task_reference,
                            inject_retarget_artifacts, load_trajectory,
                            oracle_contacts_from_geometry, save_trajectory,
                            trajectory_from_dict, trajectory_to_dict)

NEUTRAL_Z = 0.794


def min_contact_dist(traj, arrays, t):
    shape = traj.object_shape()
    obj_pose = np.array([traj.obj_pos[t, 0], traj.obj_pos[t, 1],
                         traj.obj_pitch[t]])
    return min(link_object_distance_q(traj.qpos_at(t), obj_pose, int(li),
                                      arrays, shape)
               for li in arrays.contact_link_ids)


@pytest.fixture(scope="module")
def pen_traj(arrays, squat_traj):
    return inject_retarget_artifacts(squat_traj, arrays, penetration=0.03)


@pytest.fixture(scope="module")
def float_traj(arrays, squat_traj):
    return inject_retarget_artifacts(squat_traj, arrays, float_offset=0.05)


class TestGmtCorpus:
    def test_cycles_families(self, arrays):
        trajs = generate_gmt_corpus(arrays, 12, seed=0)
        assert [t.task for t in trajs[:6]] == \
            [f"gmt:{f}" for f in GMT_FAMILIES]
        assert all(not t.has_object for t in trajs)

    def test_stand_is_constant_neutral(self, arrays):
        stand = generate_gmt_corpus(arrays, 1, seed=0)[0]
        assert stand.task == "gmt:stand"
        np.testing.assert_array_equal(stand.joints, np.zeros_like(stand.joints))
        np.testing.assert_allclose(stand.root_pos[:, 1], NEUTRAL_Z)
        np.testing.assert_array_equal(stand.root_pos, np.tile(
            stand.root_pos[0], (stand.n_frames, 1)))

    def test_joint_limits_respected(self, arrays):
        for traj in generate_gmt_corpus(arrays, 18, seed=3):
            assert np.all(traj.joints >= arrays.q_lo - 1e-12)
            assert np.all(traj.joints <= arrays.q_hi + 1e-12)

    def test_velocity_bounded(self, arrays):
        for traj in generate_gmt_corpus(arrays, 18, seed=3):
            v = _finite_difference(traj.joints, traj.dt)
            assert np.abs(v).max() < 10.0

    def test_deterministic(self, arrays):
        a = generate_gmt_corpus(arrays, 6, seed=7)
        b = generate_gmt_corpus(arrays, 6, seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.joints, y.joints)
            np.testing.assert_array_equal(x.root_pos, y.root_pos)

    def test_minimum_length(self, arrays):
        for traj in generate_gmt_corpus(arrays, 12, seed=1):
            assert traj.n_frames >= 30


class TestTaskReferences:
    def test_squat_lift_object_phases(self, arrays, squat_traj):
        traj = squat_traj
        hz = traj.object_params["half_extents"][1]
        # starts resting on the ground
        assert traj.obj_pos[0, 1] == pytest.approx(hz)
        # first frame: no contact flags; carry phase: torso + forearm flagged
        assert not traj.contacts[0].any()
        assert traj.contacts[-1, 0] == 1 and traj.contacts[-1, 1] == 1
        # ends lifted above the rest height
        assert traj.obj_pos[-1, 1] > hz + 0.05

    def test_push_object_z_constant(self, arrays):
        traj = generate_task_reference("push", arrays, seed=0)
        np.testing.assert_allclose(traj.obj_pos[:, 1], traj.obj_pos[0, 1],
                                   atol=1e-12)
        # forearm only is flagged during the push
        assert traj.contacts[-1, 1] == 1 and traj.contacts[-1, 0] == 0

    def test_carry_walk_endpoint_displacement(self, arrays):
        dist = 0.3
        traj = generate_task_reference("carry-walk", arrays, seed=0,
                                       params={"distance": dist})
        assert traj.obj_pos[-1, 0] - traj.obj_pos[0, 0] == \
            pytest.approx(dist, abs=1e-9)

    def test_chair_lift_uses_l_shape(self, arrays):
        traj = generate_task_reference("chair-lift", arrays, seed=0)
        assert traj.object_kind == "l"
        assert traj.object_shape().n_rects == 2

    def test_all_tasks_respect_limits(self, arrays):
        for task in TASKS:
            traj = generate_task_reference(task, arrays, seed=1)
            assert np.all(traj.joints >= arrays.q_lo - 1e-12)
            assert np.all(traj.joints <= arrays.q_hi + 1e-12)

    def test_invalid_task_rejected(self, arrays):
        with pytest.raises(ValueError, match="unknown task"):
            generate_task_reference("fly", arrays)

    def test_unreachable_lift_rejected(self, arrays):
        with pytest.raises(ValueError, match="beyond reach"):
            generate_task_reference("squat-lift", arrays,
                                    params={"lift_height": 1.5})

    def test_deterministic(self, arrays, squat_traj):
        again = generate_task_reference("squat-lift", arrays, seed=0)
        np.testing.assert_array_equal(squat_traj.joints, again.joints)
        np.testing.assert_array_equal(squat_traj.obj_pos, again.obj_pos)
        np.testing.assert_array_equal(squat_traj.contacts, again.contacts)

    def test_clean_reference_keeps_clearance(self, arrays, squat_traj):
        # contact-phase frames keep a small positive grip gap (no penetration)
        contact_ts = np.flatnonzero(squat_traj.contacts.any(axis=1))
        for t in contact_ts[:: max(1, len(contact_ts) // 10)]:
            assert min_contact_dist(squat_traj, arrays, int(t)) > 0.0


class TestArtifacts:
    def test_zero_offsets_identity(self, arrays, squat_traj):
        out = inject_retarget_artifacts(squat_traj, arrays)
        np.testing.assert_array_equal(out.obj_pos, squat_traj.obj_pos)
        np.testing.assert_array_equal(out.joints, squat_traj.joints)

    def test_both_nonzero_rejected(self, arrays, squat_traj):
        with pytest.raises(ValueError, match="at most one"):
            inject_retarget_artifacts(squat_traj, arrays, penetration=0.01,
                                      float_offset=0.01)

    def test_penetration_depth(self, arrays, squat_traj, pen_traj):
        contact_ts = np.flatnonzero(squat_traj.contacts.any(axis=1))
        dmin = min(min_contact_dist(pen_traj, arrays, int(t))
                   for t in contact_ts)
        assert dmin == pytest.approx(-0.03, abs=1e-6)

    def test_float_offset_distance(self, arrays, squat_traj, float_traj):
        contact_ts = np.flatnonzero(squat_traj.contacts.any(axis=1))
        dmin = min(min_contact_dist(float_traj, arrays, int(t))
                   for t in contact_ts)
        assert dmin == pytest.approx(0.05, abs=1e-6)

    def test_only_object_contact_frames_changed(self, arrays, squat_traj,
                                                pen_traj):
        np.testing.assert_array_equal(pen_traj.joints, squat_traj.joints)
        np.testing.assert_array_equal(pen_traj.root_pos, squat_traj.root_pos)
        free = ~squat_traj.contacts.any(axis=1).astype(bool)
        np.testing.assert_array_equal(pen_traj.obj_pos[free],
                                      squat_traj.obj_pos[free])
        assert pen_traj.artifact_pen == 0.03

    def test_robot_only_rejected(self, arrays):
        stand = generate_gmt_corpus(arrays, 1, seed=0)[0]
        with pytest.raises(ValueError, match="robot-only"):
            inject_retarget_artifacts(stand, arrays, penetration=0.01)


class TestOracleContacts:
    def test_flags_match_bruteforce_scan(self, arrays, squat_traj):
        out = oracle_contacts_from_geometry(squat_traj, arrays)
        shape = squat_traj.object_shape()
        for t in range(0, squat_traj.n_frames, 7):
            obj_pose = np.array([squat_traj.obj_pos[t, 0],
                                 squat_traj.obj_pos[t, 1],
                                 squat_traj.obj_pitch[t]])
            for k, li in enumerate(arrays.contact_link_ids):
                d = link_object_distance_q(squat_traj.qpos_at(t), obj_pose,
                                           int(li), arrays, shape)
                assert out.contacts[t, k] == (1 if max(d, 0.0) < SIGMA_C else 0)

    def test_penetrating_reference_counts_as_contact(self, arrays, pen_traj):
        out = oracle_contacts_from_geometry(pen_traj, arrays)
        # the penetration-injected carry phase must still be flagged
        assert out.contacts[-1].all()

    def test_strict_threshold(self, arrays, squat_traj):
        # sigma_c tiny: clean references with a finite grip gap lose all flags
        out = oracle_contacts_from_geometry(squat_traj, arrays, sigma_c=1e-9)
        assert not out.contacts.any()

    def test_invalid_sigma_rejected(self, arrays, squat_traj):
        with pytest.raises(ValueError, match="sigma_c"):
            oracle_contacts_from_geometry(squat_traj, arrays, sigma_c=0.0)


class TestTrajectoryIO:
    def test_round_trip_lossless(self, squat_traj, tmp_path):
        path = tmp_path / "traj.json"
        save_trajectory(squat_traj, path)
        again = load_trajectory(path)
        np.testing.assert_array_equal(again.joints, squat_traj.joints)
        np.testing.assert_array_equal(again.obj_pos, squat_traj.obj_pos)
        np.testing.assert_array_equal(again.contacts, squat_traj.contacts)
        np.testing.assert_array_equal(again.surface_points,
                                      squat_traj.surface_points)
        assert again.task == squat_traj.task
        assert again.fps == squat_traj.fps

    def test_truncated_file_names_offset(self, squat_traj, tmp_path):
        path = tmp_path / "traj.json"
        save_trajectory(squat_traj, path)
        text = path.read_text()[:200]
        path.write_text(text)
        with pytest.raises(ValueError, match="offset"):
            load_trajectory(path)

    def test_unknown_version_rejected(self, squat_traj):
        d = trajectory_to_dict(squat_traj)
        d["version"] = 99
        with pytest.raises(ValueError, match="version"):
            trajectory_from_dict(d)

    def test_unknown_field_rejected(self, squat_traj):
        d = trajectory_to_dict(squat_traj)
        d["notes"] = "hello"
        with pytest.raises(ValueError, match="unknown trajectory fields"):
            trajectory_from_dict(d)

    def test_non_finite_rejected(self, squat_traj):
        d = trajectory_to_dict(squat_traj)
        d["root_pitch"][0] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            trajectory_from_dict(d)

    def test_too_short_rejected(self, squat_traj):
        d = trajectory_to_dict(squat_traj)
        for key in ("root_pos", "root_pitch", "joints", "obj_pos", "obj_pitch",
                    "obj_vel", "obj_angvel", "contacts"):
            d[key] = d[key][:10]
        with pytest.raises(ValueError, match=">= 30 frames"):
            trajectory_from_dict(d)
