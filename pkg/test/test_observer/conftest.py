import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))

from gpmap_mcp.architect import config

# Two overlapping disks on a coarse grid; a run takes well under a second.
SMALL = """
[run]
steps = 3
seed = 5

[domain]
lower = [-4.0, -4.0]
upper = [4.0, 4.0]
grid_resolution = 11

[protocol]
budget = 2
targets = 4
quadrature_resolution = 10

[agents.1]
center = [-1.0, 0.0]
radius = 2.0
length_scale = 0.9
signal_scale = 1.0
noise_std = 0.08

[agents.2]
center = [1.0, 0.0]
radius = 2.0
length_scale = 1.1
signal_scale = 0.9
noise_std = 0.1
"""

# Disjoint from both agents above.
ISLAND = """
[agents.3]
center = [3.0, 3.0]
radius = 1.0
length_scale = 1.0
signal_scale = 1.0
noise_std = 0.1
"""


@pytest.fixture
def small_config():
    return config.parse_config(SMALL)


@pytest.fixture
def island_config():
    text = SMALL.replace(
        "quadrature_resolution = 10",
        "quadrature_resolution = 10\nedges = [[1, 2], [2, 1], [1, 3], [3, 1]]",
    )
    return config.parse_config(text + ISLAND)


@pytest.fixture
def small_scenario_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL, encoding="utf-8")
    return path


@pytest.fixture
def implicit_island_config():
    return config.parse_config(SMALL + ISLAND)
