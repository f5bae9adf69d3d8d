"""Shared fixtures: the default model, compiled arrays, and task references."""

import numpy as np
import pytest

from resloco.geometry import box_shape
from resloco.refgen import generate_task_reference
from resloco.robot import compile_model, default_humanoid


@pytest.fixture(scope="session")
def model():
    return default_humanoid()


@pytest.fixture(scope="session")
def arrays(model):
    return compile_model(model)


@pytest.fixture(scope="session")
def box():
    return box_shape((0.12, 0.35), mass=3.0)


@pytest.fixture(scope="session")
def squat_traj(arrays):
    return generate_task_reference("squat-lift", arrays, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
