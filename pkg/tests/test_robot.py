"""Robot model validation, compilation, and JSON round trips."""

import numpy as np
import pytest

from resloco.robot import (JointSpec, LinkSpec, RobotModel, compile_model,
                           default_humanoid, load_model, model_from_dict,
                           model_to_dict, save_model)


class TestDefaultHumanoid:
    def test_structure(self, model, arrays):
        assert model.n_links == 10
        assert model.n_joints == 9
        assert arrays.ndof == 12
        assert tuple(arrays.link_names)[:2] == ("pelvis", "torso")

    def test_tree_rooted_at_base(self, arrays):
        assert arrays.parent[0] == -1
        # every parent precedes its child (tree order)
        for i in range(1, arrays.n_links):
            assert 0 <= arrays.parent[i] < i

    def test_limits_ordered(self, arrays):
        assert np.all(arrays.q_lo < arrays.q_hi)

    def test_positive_dynamics_parameters(self, arrays):
        assert np.all(arrays.mass > 0)
        assert np.all(arrays.inertia > 0)
        assert np.all(arrays.kp > 0)
        assert np.all(arrays.kd > 0)
        assert np.all(arrays.tau_lim > 0)

    def test_contact_links_are_torso_and_forearm(self, model, arrays):
        names = [model.links[i].name for i in arrays.contact_link_ids]
        assert names == ["torso", "forearm"]

    def test_feet_flagged(self, model, arrays):
        assert [model.links[i].name
                for i in np.flatnonzero(arrays.is_foot)] == ["l_foot", "r_foot"]


class TestValidation:
    def test_nonpositive_mass_rejected(self):
        with pytest.raises(ValueError, match="mass"):
            LinkSpec("x", 0.0, 0.1, 0.1, [])

    def test_bad_joint_limits_rejected(self):
        with pytest.raises(ValueError, match="lo < hi"):
            JointSpec("j", "a", "b", (0, 0), lo=1.0, hi=1.0,
                      torque_limit=1.0, kp=1.0, kd=1.0)

    def test_duplicate_link_names_rejected(self, model):
        links = list(model.links) + [model.links[1]]
        with pytest.raises(ValueError, match="duplicate"):
            RobotModel(links=links, joints=list(model.joints),
                       com_offsets=model.com_offsets,
                       foot_links=model.foot_links,
                       contact_links=model.contact_links)

    def test_unknown_foot_link_rejected(self, model):
        with pytest.raises(ValueError, match="unknown link"):
            RobotModel(links=list(model.links), joints=list(model.joints),
                       com_offsets=model.com_offsets,
                       foot_links=["no_such_link"],
                       contact_links=model.contact_links)


class TestSerialization:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "model.json"
        save_model(model, path)
        again = load_model(path)
        a = compile_model(model)
        b = compile_model(again)
        np.testing.assert_array_equal(a.mass, b.mass)
        np.testing.assert_array_equal(a.anchor, b.anchor)
        np.testing.assert_array_equal(a.cp_local, b.cp_local)
        assert a.link_names == b.link_names

    def test_unknown_top_field_rejected(self, model):
        d = model_to_dict(model)
        d["surprise"] = 1
        with pytest.raises(ValueError, match="unknown model fields"):
            model_from_dict(d)

    def test_unknown_link_field_rejected(self, model):
        d = model_to_dict(model)
        d["links"][0]["color"] = "red"
        with pytest.raises(ValueError, match="unknown link fields"):
            model_from_dict(d)

    def test_version_mismatch_rejected(self, model):
        d = model_to_dict(model)
        d["version"] = 99
        with pytest.raises(ValueError, match="version"):
            model_from_dict(d)
