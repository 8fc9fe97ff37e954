import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))

from gpmap_mcp.architect.geometry import Box, Disk, grid_nodes, intersect, quadrature, target_set
from gpmap_mcp.errors import DegenerateOverlap


def test_shapes_validate_their_parameters():
    with pytest.raises(ValueError):
        Disk((0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        Box((0.0, 1.0), (1.0, 0.5))
    with pytest.raises(ValueError):
        Box((0.0,), (1.0, 1.0))


def test_identical_disks_overlap_is_the_disk():
    d = Disk((1.0, 2.0), 1.5)
    region = intersect(d, d)
    assert region is not None
    lo, hi = region.bounding_box
    np.testing.assert_array_equal(lo, [-0.5, 0.5])
    np.testing.assert_array_equal(hi, [2.5, 3.5])
    pts = np.random.default_rng(0).uniform(-1, 4, size=(200, 2))
    np.testing.assert_array_equal(region.contains(pts), d.contains(pts))


def test_four_disk_neighbours_overlap():
    a = Disk((-3.0, -2.6), 4.4)
    b = Disk((2.5, -2.8), 4.4)
    assert intersect(a, b) is not None


def test_far_apart_disks_do_not_overlap():
    assert intersect(Disk((0.0, 0.0), 1.0), Disk((2.5, 0.0), 1.0)) is None
    # Bounding boxes meet at the corner but the disks do not.
    assert intersect(Disk((0.0, 0.0), 1.0), Disk((1.9, 1.9), 1.0)) is None


def test_disk_box_overlap_and_disjointness():
    box = Box((1.0, 1.0), (3.0, 3.0))
    assert intersect(Disk((0.0, 0.0), 1.0), box) is None
    region = intersect(Disk((0.0, 0.0), 2.0), box)
    assert region is not None and not region.is_box
    assert intersect(box, Box((2.0, 2.0), (4.0, 4.0))).is_box


def test_intersect_membership_is_symmetric():
    rng = np.random.default_rng(1)
    a = Disk((0.0, 0.0), 2.0)
    b = Box((0.5, -1.0), (3.0, 1.5))
    pts = rng.uniform(-3, 3, size=(500, 2))
    np.testing.assert_array_equal(intersect(a, b).contains(pts), intersect(b, a).contains(pts))


def test_grid_nodes_are_cell_centres_in_ij_order():
    nodes = grid_nodes(np.array([0.0, 0.0]), np.array([2.0, 4.0]), 2)
    np.testing.assert_array_equal(nodes, [[0.5, 1.0], [0.5, 3.0], [1.5, 1.0], [1.5, 3.0]])


def test_box_quadrature_weights_sum_to_area():
    unit = Box((0.0, 0.0), (1.0, 1.0))
    grid = quadrature(intersect(unit, unit), 10)
    assert len(grid) == 100
    assert grid.area == pytest.approx(1.0, abs=1e-12)


def test_disk_quadrature_converges_to_area():
    d = Disk((0.0, 0.0), 1.0)
    region = intersect(d, d)
    assert quadrature(region, 64).area == pytest.approx(math.pi, rel=0.02)
    err = [abs(quadrature(region, r).area - math.pi) for r in (32, 64, 128)]
    assert err[0] > err[1] > err[2]


def test_quadrature_rejects_low_resolution():
    unit = Box((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        quadrature(intersect(unit, unit), 1)


def test_tangent_disks_are_degenerate():
    region = intersect(Disk((0.0, 0.0), 1.0), Disk((2.0, 0.0), 1.0))
    assert region is not None
    with pytest.raises(DegenerateOverlap):
        quadrature(region, 16)


def test_single_target_is_the_centroid():
    box = Box((0.0, 0.0), (2.0, 1.0))
    ts = target_set(intersect(box, box), 1)
    np.testing.assert_array_equal(ts.points, [[1.0, 0.5]])
    np.testing.assert_array_equal(ts.weights, [1.0])


def test_nine_targets_on_a_box_form_a_three_by_three_grid():
    box = Box((0.0, 0.0), (3.0, 3.0))
    ts = target_set(intersect(box, box), 9)
    expected = [[x, y] for x in (0.5, 1.5, 2.5) for y in (0.5, 1.5, 2.5)]
    np.testing.assert_allclose(ts.points, expected)
    assert ts.weights.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("q", [2, 5, 16, 30])
def test_target_weights_normalized_and_points_inside(q):
    region = intersect(Disk((-3.0, -2.6), 4.4), Disk((2.5, -2.8), 4.4))
    ts = target_set(region, q)
    assert len(ts) == q
    assert ts.weights.sum() == pytest.approx(1.0)
    assert np.all(region.contains(ts.points))
    assert len(np.unique(ts.points, axis=0)) == q
