"""Shared fixtures: a coarse configuration that keeps simulations fast."""

import pytest
import yaml

from nbv_planner.config import config_from_flat
from nbv_planner.loop import episode_scenario
from nbv_planner.models import ToolkitConfig
from nbv_planner.oracle import prepare_scenario
from nbv_planner.scene import box_mesh, generate_demo_object

SMALL = {
    "scene.image_width": 32,
    "scene.image_height": 32,
    "scene.object_scale": 0.1,
    "scene.sample_spacing": 0.01,
    "metric.gap": 0.01,
    "metric.leaf": 0.005,
    "grid.edge": 8,
    "reconstruction.max_iter": 6,
}


@pytest.fixture(scope="session")
def small_config() -> ToolkitConfig:
    return config_from_flat(SMALL)


@pytest.fixture(scope="session")
def box_scenario(small_config):
    mesh = box_mesh([0.1, 0.08, 0.06])
    return prepare_scenario(mesh, small_config.scene, small_config.reconstruction, 0, 2)


@pytest.fixture(scope="session")
def lshape_scenario(small_config):
    mesh = generate_demo_object("lshape", 3, small_config.scene.object_scale)
    return prepare_scenario(mesh, small_config.scene, small_config.reconstruction, 1, 2)


@pytest.fixture(scope="session")
def box_episode_scenario(small_config):
    mesh = box_mesh([0.1, 0.08, 0.06])
    return episode_scenario(mesh, small_config.scene, small_config.reconstruction, 0, 2)


@pytest.fixture
def config_file(tmp_path):
    """Write SMALL as a flat YAML config and return its path."""
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)
