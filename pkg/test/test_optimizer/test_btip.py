import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))

from gpmap_mcp.architect.geometry import Box, Disk, intersect, quadrature, target_set
from gpmap_mcp.errors import NotBoxRegion, SingularSystem
from gpmap_mcp.model.gp import AugmentedDataset, Kernel, Measurement
from gpmap_mcp.model.sparse import InducingSet, fit_sparse
from gpmap_mcp.observer.agents import AgentState
from gpmap_mcp.optimizer.btip import (
    BtipProblem,
    EdgeInducingSet,
    btip_closed_form,
    btip_gradient,
    btip_objective,
    build_packet_library,
    c_target,
    select_edge_inducing,
    w_star,
)


def _data_in(rng, region, n, noise=0.01):
    lo, hi = region.bounding_box
    rows = []
    while len(rows) < n:
        x = rng.uniform(lo, hi)
        if region.contains(x[None, :])[0]:
            rows.append(Measurement(x, rng.normal(), noise))
    return AugmentedDataset(rows)


def _box_problem(rng, resolution=32, n_data=5, q=4, budget=3):
    region = intersect(Box((0.0, 0.0), (2.0, 2.0)), Box((0.5, -0.5), (3.0, 1.5)))
    kern = Kernel(rng.uniform(0.8, 1.2), rng.uniform(0.5, 0.8))
    return BtipProblem(
        kern,
        _data_in(rng, region, n_data, noise=rng.uniform(0.01, 0.05)),
        region,
        target_set(region, q),
        budget,
        quadrature(region, resolution),
    )


def _lens_problem(resolution=16, budget=3, seed=0):
    rng = np.random.default_rng(seed)
    region = intersect(Disk((-1.0, 0.0), 2.0), Disk((1.0, 0.0), 2.0))
    return BtipProblem(
        Kernel(1.0, 0.7), _data_in(rng, region, 6, noise=0.02), region, target_set(region, 6), budget,
        quadrature(region, resolution),
    )


def _separated(rng, region, n, min_dist):
    lo, hi = region.bounding_box
    pts = []
    while len(pts) < n:
        x = rng.uniform(lo, hi)
        if region.contains(x[None, :])[0] and all(np.linalg.norm(x - p) >= min_dist for p in pts):
            pts.append(x)
    return np.array(pts)


def test_problem_validation():
    rng = np.random.default_rng(0)
    p = _box_problem(rng)
    with pytest.raises(ValueError):
        BtipProblem(p.sender_kernel, p.sender_data, p.region, p.targets, 0, p.grid)
    with pytest.raises(ValueError):
        BtipProblem(p.sender_kernel, AugmentedDataset(), p.region, p.targets, 2, p.grid)


def test_informative_candidate_beats_far_candidate():
    region = intersect(Box((0.0, 0.0), (1.0, 1.0)), Box((0.0, 0.0), (1.0, 1.0)))
    data = AugmentedDataset([Measurement((0.5, 0.5), 1.0, 0.01)])
    problem = BtipProblem(Kernel(1.0, 0.5), data, region, target_set(region, 1), 1, quadrature(region, 16))
    assert btip_objective(problem, [(0.5, 0.5)]) < btip_objective(problem, [(40.0, 40.0)])


def test_duplicate_candidates_are_singular():
    problem = _lens_problem()
    with pytest.raises(SingularSystem):
        btip_objective(problem, [(0.0, 0.0), (0.0, 0.0)])


def test_normalized_integrand_is_bounded():
    problem = _lens_problem()
    rng = np.random.default_rng(1)
    P = _separated(rng, problem.region, 3, 0.3)
    sp = fit_sparse(problem.sender_kernel, problem.sender_data, InducingSet(tuple(map(tuple, P))))
    _, var = sp.mean_var(problem.grid.nodes)
    ratio = var / problem.sender_kernel.signal_scale
    assert np.all(ratio >= 0.0)
    assert np.all(ratio <= 1.0 + 1e-9)


def test_c_target_infinite_box_limit():
    big = Box((-50.0, -50.0), (50.0, 50.0))
    region = intersect(big, big)
    kern = Kernel(1.0, 0.9)
    problem = BtipProblem(
        kern, AugmentedDataset([Measurement((0.0, 0.0), 0.0, 0.1)]), region, target_set(region, 1), 1,
        quadrature(region, 2),
    )
    assert c_target(problem, closed_form=True) == pytest.approx((math.pi * kern.theta) ** 1.0, rel=1e-12)


def test_closed_form_rejects_disk_overlaps():
    problem = _lens_problem()
    with pytest.raises(NotBoxRegion):
        btip_closed_form(problem, [(0.0, 0.0)])
    with pytest.raises(NotBoxRegion):
        c_target(problem, closed_form=True)


def test_w_star_is_symmetric():
    rng = np.random.default_rng(2)
    problem = _box_problem(rng)
    P = _separated(rng, problem.region, 4, 0.2)
    for closed in (True, False):
        W = w_star(problem, P, closed_form=closed)
        np.testing.assert_array_equal(W, W.T)


@pytest.mark.parametrize("seed", range(20))
def test_closed_form_matches_quadrature(seed):
    rng = np.random.default_rng(100 + seed)
    problem = _box_problem(rng, resolution=128)
    P = _separated(rng, problem.region, int(rng.integers(1, 4)), 0.3)
    quad = btip_objective(problem, P)
    closed = btip_closed_form(problem, P)
    assert closed == pytest.approx(quad, rel=1e-3)
    assert c_target(problem, closed_form=True) == pytest.approx(c_target(problem), rel=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences_on_boxes(seed):
    rng = np.random.default_rng(200 + seed)
    problem = _box_problem(rng)
    pts = _separated(rng, problem.region, 3, 0.3)
    inc, cand = pts[:2], pts[2]
    value, grad = btip_gradient(problem, inc, cand)
    assert value == pytest.approx(btip_closed_form(problem, pts), rel=1e-12)
    h = 1e-5
    fd = np.zeros(2)
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        fd[l] = (btip_gradient(problem, inc, cand + e)[0] - btip_gradient(problem, inc, cand - e)[0]) / (2 * h)
    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_gradient_matches_finite_differences_on_quadrature():
    problem = _lens_problem(resolution=24)
    rng = np.random.default_rng(3)
    pts = _separated(rng, problem.region, 2, 0.4)
    value, grad = btip_gradient(problem, pts[:1], pts[1])
    assert value == pytest.approx(btip_objective(problem, pts), rel=1e-9)
    h = 1e-5
    fd = np.array([
        (btip_gradient(problem, pts[:1], pts[1] + e)[0] - btip_gradient(problem, pts[:1], pts[1] - e)[0]) / (2 * h)
        for e in np.eye(2) * h
    ])
    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_budget_one_returns_the_centroid():
    problem = _lens_problem(budget=1)
    result = select_edge_inducing(problem)
    assert isinstance(result, EdgeInducingSet)
    assert len(result) == 1
    np.testing.assert_allclose(result.points[0], problem.targets.centroid, atol=1e-12)
    assert len(result.objective_trace) == 1


def test_selection_is_deterministic():
    a = select_edge_inducing(_lens_problem(budget=2))
    b = select_edge_inducing(_lens_problem(budget=2))
    assert a == b


@pytest.mark.parametrize("optimizer", ["grid", "gradient"])
def test_selection_fills_the_budget(optimizer):
    problem = _lens_problem(budget=4, resolution=12)
    result = select_edge_inducing(problem, optimizer)
    assert len(result) == 4
    assert len(result.objective_trace) == 4
    assert np.all(problem.region.contains(np.array(result.points)))


def test_trace_entries_are_prefix_objectives():
    problem = _lens_problem(budget=4, resolution=12)
    result = select_edge_inducing(problem, "grid")
    for k, value in enumerate(result.objective_trace):
        assert value == pytest.approx(btip_objective(problem, list(result.points[: k + 1])), rel=1e-6)


def test_gradient_optimizer_on_a_box_is_no_worse_than_grid():
    rng = np.random.default_rng(4)
    problem = _box_problem(rng, resolution=12, budget=3)
    grid = select_edge_inducing(problem, "grid")
    grad = select_edge_inducing(problem, "gradient")
    assert grad.objective_trace[0] == grid.objective_trace[0]
    assert len(grad) == len(grid) == 3
    assert grad.objective_trace[1] <= grid.objective_trace[1] + 1e-12


def test_unknown_optimizer_rejected():
    with pytest.raises(ValueError):
        select_edge_inducing(_lens_problem(), "newton")


def test_grid_result_is_the_argmin_over_nodes():
    problem = _lens_problem(budget=2, resolution=8)
    result = select_edge_inducing(problem, "grid")
    incumbent = [result.points[0]]
    values = []
    for node in problem.grid.nodes:
        try:
            values.append(btip_objective(problem, incumbent + [tuple(node)]))
        except SingularSystem:
            continue
    best = min(values)
    assert len(result) == 2
    assert result.objective_trace[1] == pytest.approx(best, rel=1e-6)
    assert result.objective_trace[1] <= best + 1e-6 * abs(best)


def test_packet_library_reports_sender_posterior():
    kern = Kernel(0.9, 0.85)
    data = AugmentedDataset([Measurement((0.0, 0.0), 0.75, 1e-8), Measurement((1.0, 0.0), -0.2, 1e-8)])
    sender = AgentState(
        id=3, subdomain=Disk((0.0, 0.0), 4.4), kernel=kern, sensor_noise_std=0.08, noise_std=1e-4,
        rng=np.random.default_rng(0), data=data,
    )
    edge_set = EdgeInducingSet(((0.0, 0.0), (1.0, 0.0), (30.0, 30.0), (0.5, 0.5)), (1.0, 0.9, 0.8, 0.7))
    packets = build_packet_library(sender, 1, edge_set, step=5)
    assert len(packets) == 4
    assert all(p.sender_id == 3 and p.step == 5 and p.variance > 0 for p in packets)
    assert packets[0].mean == pytest.approx(0.75, abs=1e-6)
    assert packets[1].mean == pytest.approx(-0.2, abs=1e-6)
    assert packets[0].variance < 1e-6
    assert packets[2].variance == pytest.approx(kern.signal_scale, rel=1e-9)
    assert packets[2].mean == pytest.approx(0.0, abs=1e-12)
