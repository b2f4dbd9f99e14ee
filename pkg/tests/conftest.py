import os

import pytest

from simulation.scene import make_scene

SCENES_DIR = os.path.join(os.path.dirname(__file__), "..", "scenes")


@pytest.fixture
def scenes_dir():
    return os.path.abspath(SCENES_DIR)


@pytest.fixture
def empty_scene():
    return make_scene(5.0)


@pytest.fixture
def one_disk():
    return make_scene(5.0, balls=[((0.0, 0.0), 1.0)])


@pytest.fixture
def two_disks():
    return make_scene(5.0, balls=[((-2.0, 0.0), 1.0), ((2.0, 0.0), 1.0)])


@pytest.fixture
def sphere_pair():
    return make_scene(1.2, balls=[((-0.4, 0.0), 0.2), ((0.4, 0.0), 0.2)], kind="sphere", kappa=1.0)


@pytest.fixture
def ball_3d():
    return make_scene(5.0, balls=[((0.0, 0.0, 0.0), 1.0)], dim=3)
