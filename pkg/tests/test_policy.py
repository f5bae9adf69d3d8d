"""Observation construction, rebasing invariance, and policy heads."""

import numpy as np
import pytest

from resloco.net import init_mlp
from resloco.policy import (ACT_HIST, DELTA_MAX, HIST, WINDOW, ProprioBuffer,
                            act_gmt, act_residual, build_gmt_obs,
                            build_residual_obs, compose, gmt_obs_dim,
                            observation_manifest, proprio_dim,
                            residual_obs_dim)
from resloco.physics import make_state
from resloco.refgen import generate_gmt_corpus
from resloco.trainer import RESIDUAL_ACTOR_HIDDEN, RESIDUAL_FINAL_GAIN


def fresh_buffer(arrays, state):
    buf = ProprioBuffer(arrays.n_joints)
    buf.reset(state)
    return buf


def shifted_traj(traj, dx):
    out = traj.copy()
    out.root_pos[:, 0] += dx
    if out.has_object:
        out.obj_pos[:, 0] += dx
    return out


class TestDims:
    def test_layout_arithmetic(self, arrays):
        J = arrays.n_joints
        assert proprio_dim(J) == 2 + 2 * J
        assert gmt_obs_dim(J) == (HIST * (2 + 2 * J) + ACT_HIST * J
                                  + WINDOW * (3 + J))
        assert gmt_obs_dim(9) == 562
        assert residual_obs_dim(9) == 562 + 6 + WINDOW * 6

    def test_manifest_covers_layout(self, arrays):
        J = arrays.n_joints
        rows = observation_manifest(J, "residual")
        assert rows[0][1] == 0
        for (_, off, length), (_, off2, _) in zip(rows, rows[1:]):
            assert off + length == off2
        assert rows[-1][1] + rows[-1][2] == residual_obs_dim(J)
        gmt_rows = observation_manifest(J, "gmt")
        assert gmt_rows[-1][1] + gmt_rows[-1][2] == gmt_obs_dim(J)


class TestProprioBuffer:
    def test_reset_pads_with_current_state(self, arrays, box):
        state = make_state(arrays, box)
        state.qpos[2] = 0.1
        buf = fresh_buffer(arrays, state)
        assert buf.proprio.shape == (HIST, proprio_dim(arrays.n_joints))
        np.testing.assert_array_equal(buf.proprio, np.tile(buf.proprio[0],
                                                           (HIST, 1)))
        np.testing.assert_array_equal(buf.actions, 0.0)

    def test_push_rolls_window(self, arrays, box):
        state = make_state(arrays, box)
        buf = fresh_buffer(arrays, state)
        a = np.full(arrays.n_joints, 0.25)
        state.qpos[2] = 0.5
        buf.push(state, a)
        assert buf.proprio[-1][0] == 0.5
        np.testing.assert_array_equal(buf.actions[-1], a)
        np.testing.assert_array_equal(buf.actions[:-1], 0.0)

    def test_push_before_reset_rejected(self, arrays, box):
        state = make_state(arrays, box)
        with pytest.raises(ValueError, match="reset"):
            ProprioBuffer(arrays.n_joints).push(state,
                                                np.zeros(arrays.n_joints))

    def test_wrong_action_shape_rejected(self, arrays, box):
        state = make_state(arrays, box)
        buf = fresh_buffer(arrays, state)
        with pytest.raises(ValueError, match="action"):
            buf.push(state, np.zeros(3))


class TestGmtObservation:
    def test_stand_reference_blocks_identical(self, arrays, box):
        stand = generate_gmt_corpus(arrays, 1, seed=0)[0]
        state = make_state(arrays, box, base_pos=(0.0, 0.794))
        buf = fresh_buffer(arrays, state)
        obs = build_gmt_obs(buf, stand, 0, state)
        assert obs.shape == (gmt_obs_dim(arrays.n_joints),)
        J = arrays.n_joints
        start = HIST * proprio_dim(J) + ACT_HIST * J
        block = obs[start:].reshape(WINDOW, 3 + J)
        # constant motion + boundary clamping: all 21 sub-blocks identical
        np.testing.assert_array_equal(block, np.tile(block[0], (WINDOW, 1)))

    def test_translation_invariance(self, arrays, box, squat_traj):
        state = make_state(arrays, box, base_pos=(0.1, 0.794))
        state.qpos[2] = 0.05
        state.obj_pose[:] = (0.5, 0.3, 0.02)
        buf = fresh_buffer(arrays, state)
        obs_a = build_gmt_obs(buf, squat_traj, 40, state)

        shifted = state.copy()
        shifted.qpos[0] += 5.0
        shifted.obj_pose[0] += 5.0
        buf2 = fresh_buffer(arrays, shifted)
        obs_b = build_gmt_obs(buf2, shifted_traj(squat_traj, 5.0), 40, shifted)
        np.testing.assert_allclose(obs_a, obs_b, atol=1e-12)

    def test_window_clamps_at_ends(self, arrays, box, squat_traj):
        state = make_state(arrays, box)
        buf = fresh_buffer(arrays, state)
        T = squat_traj.n_frames
        obs_last = build_gmt_obs(buf, squat_traj, T - 1, state)
        J = arrays.n_joints
        start = HIST * proprio_dim(J) + ACT_HIST * J
        block = obs_last[start:].reshape(WINDOW, 3 + J)
        # future indices clamp to the final frame
        np.testing.assert_array_equal(block[10], block[-1])


class TestResidualObservation:
    def test_object_on_reference_error_block_zero(self, arrays, box,
                                                  squat_traj):
        t = 50
        state = make_state(arrays, box)
        state.qpos[:2] = squat_traj.root_pos[t]
        state.qpos[2] = squat_traj.root_pitch[t]
        state.obj_pose[:] = (squat_traj.obj_pos[t, 0], squat_traj.obj_pos[t, 1],
                             squat_traj.obj_pitch[t])
        buf = fresh_buffer(arrays, state)
        obs = build_residual_obs(buf, squat_traj, t, state)
        J = arrays.n_joints
        obj_state = obs[gmt_obs_dim(J):gmt_obs_dim(J) + 6]
        ref_mid = obs[gmt_obs_dim(J) + 6:].reshape(WINDOW, 6)[10]
        # current object block matches the window's centre reference block
        np.testing.assert_allclose(obj_state[:3], ref_mid[:3], atol=1e-12)

    def test_translation_invariance(self, arrays, box, squat_traj):
        state = make_state(arrays, box, base_pos=(0.2, 0.7))
        state.qpos[2] = -0.08
        state.obj_pose[:] = (0.6, 0.4, 0.1)
        state.obj_vel[:] = (0.1, -0.2, 0.3)
        buf = fresh_buffer(arrays, state)
        obs_a = build_residual_obs(buf, squat_traj, 80, state)

        shifted = state.copy()
        shifted.qpos[0] += 5.0
        shifted.obj_pose[0] += 5.0
        buf2 = fresh_buffer(arrays, shifted)
        obs_b = build_residual_obs(buf2, shifted_traj(squat_traj, 5.0), 80,
                                   shifted)
        np.testing.assert_allclose(obs_a, obs_b, atol=1e-12)

    def test_robot_only_trajectory_rejected(self, arrays, box):
        stand = generate_gmt_corpus(arrays, 1, seed=0)[0]
        state = make_state(arrays, box)
        buf = fresh_buffer(arrays, state)
        with pytest.raises(ValueError, match="object"):
            build_residual_obs(buf, stand, 0, state)


class TestPolicyHeads:
    def test_mean_mode_deterministic(self, arrays, rng):
        p = init_mlp([gmt_obs_dim(arrays.n_joints), 32, arrays.n_joints],
                     seed=0, log_std_init=np.log(0.2))
        obs = rng.standard_normal(p.in_dim)
        a = act_gmt(p, obs, arrays)
        b = act_gmt(p, obs, arrays)
        np.testing.assert_array_equal(a, b)

    def test_stochastic_small_std_converges_to_mean(self, arrays, rng):
        p = init_mlp([gmt_obs_dim(arrays.n_joints), 32, arrays.n_joints],
                     seed=0, log_std_init=-40.0)
        obs = rng.standard_normal(p.in_dim)
        a = act_gmt(p, obs, arrays, mode="stochastic", rng=rng)
        np.testing.assert_allclose(a, act_gmt(p, obs, arrays), atol=1e-12)

    def test_gmt_output_within_limits(self, arrays, rng):
        p = init_mlp([gmt_obs_dim(arrays.n_joints), 32, arrays.n_joints],
                     seed=0, log_std_init=np.log(0.5))
        for _ in range(500):
            a = act_gmt(p, 10 * rng.standard_normal(p.in_dim), arrays,
                        mode="stochastic", rng=rng)
            assert np.all(a >= arrays.q_lo) and np.all(a <= arrays.q_hi)

    def test_residual_clamped(self, arrays, rng):
        p = init_mlp([residual_obs_dim(arrays.n_joints), 16, arrays.n_joints],
                     final_layer_gain=10.0, seed=0, log_std_init=0.0)
        for _ in range(200):
            da = act_residual(p, 100 * rng.standard_normal(p.in_dim),
                              mode="stochastic", rng=rng)
            assert np.all(np.abs(da) <= DELTA_MAX)

    def test_unknown_mode_rejected(self, arrays):
        p = init_mlp([8, arrays.n_joints], seed=0)
        with pytest.raises(ValueError, match="mode"):
            act_gmt(p, np.zeros(8), arrays, mode="sample")


class TestCompose:
    def test_zero_residual_identity(self, arrays, rng):
        a = rng.uniform(arrays.q_lo, arrays.q_hi)
        np.testing.assert_array_equal(
            compose(a, np.zeros_like(a), arrays), a)

    def test_saturated_residual(self, arrays):
        a = np.zeros(arrays.n_joints)
        out = compose(a, np.full(arrays.n_joints, 10.0), arrays)
        np.testing.assert_array_equal(
            out, np.minimum(a + DELTA_MAX, arrays.q_hi))

    def test_length_mismatch_rejected(self, arrays):
        with pytest.raises(ValueError, match="mismatch"):
            compose(np.zeros(arrays.n_joints), np.zeros(3), arrays)

    def test_small_gain_init_produces_tiny_deltas(self, arrays, rng):
        """[DERIVED] small-gain residual init: mean |da| < 1e-3 rad."""
        J = arrays.n_joints
        p = init_mlp([residual_obs_dim(J), *RESIDUAL_ACTOR_HIDDEN, J],
                     final_layer_gain=RESIDUAL_FINAL_GAIN, seed=0,
                     log_std_init=np.log(0.05))
        total = 0.0
        for _ in range(1000):
            da = act_residual(p, rng.standard_normal(p.in_dim))
            total += float(np.mean(np.abs(da)))
        assert total / 1000 < 1e-3
