"""Smell tests for scenarios (before a run) and for finished runs.

Every check returns a list of anomaly dicts:

    {"rule": str, "severity": "error" | "warning", "subject": str, "message": str, ...}

Only `error` anomalies make a config invalid; warnings are reported and the
run proceeds.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from gpmap_mcp.architect.config import ScenarioConfig
from gpmap_mcp.architect.geometry import intersect, quadrature
from gpmap_mcp.errors import ConfigInvalid, DegenerateOverlap
from gpmap_mcp.observer.metrics import membership_counts
from gpmap_mcp.observer.stepping import RunArtifacts, communication_edges

LOGGER = logging.getLogger(__name__)

Anomaly = Dict[str, Any]

# Relative slack on the greedy trace before it counts as rising.
_TRACE_REL_TOL = 1e-6


def _check_graph_connected(config: ScenarioConfig) -> List[Anomaly]:
    """The directed communication graph must be strongly connected."""
    ids = list(config.agent_ids)
    if len(ids) < 2:
        return []
    pos = {a: k for k, a in enumerate(ids)}
    edges = communication_edges(config)
    rows = [pos[j] for j, _ in edges]
    cols = [pos[i] for _, i in edges]
    adj = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(len(ids), len(ids)))
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    if n_comp == 1:
        return []
    groups = [[ids[k] for k in np.flatnonzero(labels == c)] for c in range(n_comp)]
    return [{
        "rule": "graph_not_connected",
        "severity": "error",
        "subject": "protocol.edges",
        "message": (
            f"Communication graph has {n_comp} strongly connected components {groups}; "
            f"some agents can never hear from others."
        ),
        "components": groups,
    }]


def _check_edges_overlap(config: ScenarioConfig) -> List[Anomaly]:
    """Explicit edges between agents whose subdomains never meet, and degenerate overlaps."""
    subs = {a.id: a.subdomain() for a in config.agents}
    anomalies: List[Anomaly] = []
    seen = set()
    explicit = config.protocol.edges is not None
    pairs = config.protocol.edges if explicit else [
        (j, i) for j in subs for i in subs if j < i
    ]
    for j, i in pairs:
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        region = intersect(subs[j], subs[i])
        if region is None:
            if explicit:
                anomalies.append({
                    "rule": "edge_without_overlap",
                    "severity": "warning",
                    "subject": f"{j}->{i}",
                    "message": f"Agents {j} and {i} share an edge but their subdomains do not overlap.",
                })
            continue
        try:
            quadrature(region, config.protocol.quadrature_resolution)
        except DegenerateOverlap as exc:
            anomalies.append({
                "rule": "degenerate_overlap",
                "severity": "warning",
                "subject": f"{j}<->{i}",
                "message": f"Overlap of agents {j} and {i} has no quadrature node: {exc}",
            })
    return anomalies


def _check_coverage(config: ScenarioConfig) -> List[Anomaly]:
    grid = config.eval_grid()
    counts = membership_counts([a.subdomain() for a in config.agents], grid)
    uncovered = int(np.sum(counts == 0))
    if not uncovered:
        return []
    return [{
        "rule": "coverage_gap",
        "severity": "warning",
        "subject": "domain",
        "message": f"{uncovered}/{len(grid)} evaluation points lie in no agent's subdomain.",
        "uncovered_points": uncovered,
    }]


def diagnose_config(config: ScenarioConfig) -> List[Anomaly]:
    anomalies: List[Anomaly] = []
    anomalies.extend(_check_graph_connected(config))
    anomalies.extend(_check_edges_overlap(config))
    anomalies.extend(_check_coverage(config))
    for a in anomalies:
        if a["severity"] == "warning":
            LOGGER.warning("%s: %s", a["rule"], a["message"])
    return anomalies


def validate_config(config: ScenarioConfig) -> List[Anomaly]:
    """Raise ConfigInvalid on any error-severity anomaly; return the warnings otherwise."""
    anomalies = diagnose_config(config)
    errors = [f"{a['subject']}: {a['message']}" for a in anomalies if a["severity"] == "error"]
    if errors:
        raise ConfigInvalid(errors)
    return anomalies


def _check_objective_not_decreasing(artifacts: RunArtifacts) -> List[Anomaly]:
    anomalies: List[Anomaly] = []
    for rec in artifacts.shared.history:
        for (j, i), es in sorted(rec.edge_sets.items()):
            trace = es.objective_trace
            bad = [
                k for k in range(len(trace) - 1)
                if trace[k + 1] > trace[k] + max(1e-9, _TRACE_REL_TOL * abs(trace[k]))
            ]
            if bad:
                anomalies.append({
                    "rule": "objective_not_decreasing",
                    "severity": "warning",
                    "subject": f"{j}->{i}@{rec.step}",
                    "message": f"Greedy BTIP trace rose at stage(s) {bad} on edge {j}->{i}, step {rec.step}.",
                    "objective_trace": list(trace),
                })
    return anomalies


def _check_edge_skipped(artifacts: RunArtifacts) -> List[Anomaly]:
    world = artifacts.shared
    if not world.history:
        return []
    used = set()
    for rec in world.history:
        used.update(rec.sent)
    return [{
        "rule": "edge_skipped",
        "severity": "warning",
        "subject": f"{j}->{i}",
        "message": f"Edge {j}->{i} never produced a packet in {len(world.history)} step(s).",
    } for j, i in world.edges if (j, i) not in used]


def _check_shared_worse_than_self(artifacts: RunArtifacts) -> List[Anomaly]:
    if artifacts.baseline is None or not artifacts.shared.history:
        return []
    shared = artifacts.shared.history[-1].metrics.network_overlap_rmse
    alone = artifacts.baseline.history[-1].metrics.network_overlap_rmse
    if shared is None or alone is None or shared <= alone:
        return []
    return [{
        "rule": "shared_worse_than_self",
        "severity": "warning",
        "subject": "network",
        "message": (
            f"Final network overlap RMSE {shared:.4g} is above the self-only baseline's {alone:.4g}."
        ),
        "shared_overlap_rmse": shared,
        "self_overlap_rmse": alone,
    }]


def diagnose_run(artifacts: RunArtifacts) -> List[Anomaly]:
    anomalies: List[Anomaly] = []
    anomalies.extend(_check_objective_not_decreasing(artifacts))
    anomalies.extend(_check_edge_skipped(artifacts))
    anomalies.extend(_check_shared_worse_than_self(artifacts))
    return anomalies
