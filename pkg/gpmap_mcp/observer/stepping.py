"""Synchronized-clock simulation of the sense / send / select / retain protocol.

Each `run_step` is four barrier-separated phases:

  1. every agent samples one measurement into its raw block;
  2. for every directed edge j -> i with a usable overlap, sender j places
     BTIP inducing points and emits one packet per point;
  3. every receiver pools its in-edge packets and picks one;
  4. every receiver retains its pick as a fictitious measurement;

followed by a metric snapshot. Within a phase, agents and edges are
processed in ascending id order and touch only their own state, so the
outcome does not depend on evaluation order.

The self-only baseline is the same world with phases 2-4 skipped. Agent
random streams are seeded from (run seed, agent id) alone, so both worlds
see identical measurement sequences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from gpmap_mcp.architect.config import ScenarioConfig
from gpmap_mcp.architect.geometry import OverlapRegion, QuadratureGrid, TargetSet, intersect, quadrature, target_set
from gpmap_mcp.errors import DegenerateOverlap, EmptyLibrary, SingularSystem
from gpmap_mcp.model.gp import AugmentedDataset, Measurement
from gpmap_mcp.model.sparse import local_inducing_set
from gpmap_mcp.observer.agents import AgentState, sample_measurement
from gpmap_mcp.observer.field import ScalarField
from gpmap_mcp.observer.metrics import MetricSnapshot, evaluate_world
from gpmap_mcp.observer.outputs import write_outputs
from gpmap_mcp.optimizer.btip import BtipProblem, EdgeInducingSet, build_packet_library, select_edge_inducing
from gpmap_mcp.protocol.packets import CandidateLibrary, Packet
from gpmap_mcp.protocol.receiver import AssimilationDecision, select_packet

LOGGER = logging.getLogger(__name__)

Edge = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class EdgeGeometry:
    region: OverlapRegion
    grid: QuadratureGrid
    targets: TargetSet


@dataclass
class StepRecord:
    step: int
    measurements: Dict[int, Measurement] = field(default_factory=dict)
    sent: Dict[Edge, Tuple[Packet, ...]] = field(default_factory=dict)
    edge_sets: Dict[Edge, EdgeInducingSet] = field(default_factory=dict)
    decisions: Dict[int, AssimilationDecision] = field(default_factory=dict)
    skipped_edges: List[Edge] = field(default_factory=list)
    metrics: Optional[MetricSnapshot] = None

    @property
    def retained_count(self) -> int:
        return len(self.decisions)


@dataclass
class World:
    config: ScenarioConfig
    field: ScalarField
    agents: Dict[int, AgentState]
    shared: bool
    edges: Tuple[Edge, ...]
    geometry: Dict[Edge, Optional[EdgeGeometry]]
    eval_grid: np.ndarray
    history: List[StepRecord] = field(default_factory=list)
    step: int = 0


def communication_edges(config: ScenarioConfig) -> Tuple[Edge, ...]:
    """Explicit `protocol.edges`, or every ordered pair of overlapping subdomains."""
    if config.protocol.edges is not None:
        return tuple(sorted(set(config.protocol.edges)))
    subs = {a.id: a.subdomain() for a in config.agents}
    out = []
    for j in sorted(subs):
        for i in sorted(subs):
            if i != j and intersect(subs[j], subs[i]) is not None:
                out.append((j, i))
    return tuple(out)


def edge_geometry(config: ScenarioConfig, edges: Iterable[Edge]) -> Dict[Edge, Optional[EdgeGeometry]]:
    """Overlap region, quadrature grid and target set per edge; None when unusable."""
    subs = {a.id: a.subdomain() for a in config.agents}
    res, q = config.protocol.quadrature_resolution, config.protocol.targets
    cache: Dict[Edge, Optional[EdgeGeometry]] = {}
    out: Dict[Edge, Optional[EdgeGeometry]] = {}
    for j, i in edges:
        key = (min(i, j), max(i, j))
        if key not in cache:
            region = intersect(subs[j], subs[i])
            if region is None:
                LOGGER.warning("edge %d->%d: subdomains do not overlap; edge skipped", j, i)
                cache[key] = None
            else:
                try:
                    cache[key] = EdgeGeometry(region, quadrature(region, res), target_set(region, q))
                except DegenerateOverlap as exc:
                    LOGGER.warning("edge %d->%d: degenerate overlap (%s); edge skipped", j, i, exc)
                    cache[key] = None
        out[(j, i)] = cache[key]
    return out


def build_world(config: ScenarioConfig, shared: bool = True) -> World:
    edges = communication_edges(config)
    in_nb: Dict[int, List[int]] = {a.id: [] for a in config.agents}
    out_nb: Dict[int, List[int]] = {a.id: [] for a in config.agents}
    for j, i in edges:
        out_nb[j].append(i)
        in_nb[i].append(j)

    sparse = config.protocol.local_predictor == "sparse"
    agents: Dict[int, AgentState] = {}
    for a in config.agents:
        sub = a.subdomain()
        agents[a.id] = AgentState(
            id=a.id,
            subdomain=sub,
            kernel=a.kernel(),
            sensor_noise_std=config.field.noise_std,
            noise_std=a.noise_std,
            rng=np.random.default_rng([config.run.seed, a.id]),
            in_neighbors=tuple(sorted(in_nb[a.id])),
            out_neighbors=tuple(sorted(out_nb[a.id])),
            local_inducing=local_inducing_set(sub, config.protocol.local_inducing_resolution) if sparse else None,
        )

    geometry = edge_geometry(config, edges) if shared else {}
    LOGGER.info(
        "built %s world: %d agents, %d edges, seed %d",
        "shared" if shared else "self-only",
        len(agents),
        len(edges),
        config.run.seed,
    )
    return World(config, config.field.build(), agents, shared, edges, geometry, config.eval_grid())


def _send(world: World, record: StepRecord, t: int) -> None:
    proto = world.config.protocol
    for j, i in world.edges:
        geo = world.geometry.get((j, i))
        if geo is None:
            record.skipped_edges.append((j, i))
            continue
        sender = world.agents[j]
        data = sender.data if proto.sender_conditioning == "augmented" else sender.data.raw_only()
        try:
            problem = BtipProblem(sender.kernel, data, geo.region, geo.targets, proto.budget, geo.grid)
            edge_set = select_edge_inducing(problem, proto.optimizer)
        except (DegenerateOverlap, SingularSystem) as exc:
            LOGGER.warning("step %d edge %d->%d skipped: %s", t, j, i, exc)
            record.skipped_edges.append((j, i))
            continue
        record.edge_sets[(j, i)] = edge_set
        record.sent[(j, i)] = tuple(build_packet_library(sender, i, edge_set, step=t, data=data))


def _select(world: World, record: StepRecord, t: int) -> None:
    proto = world.config.protocol
    for i, agent in world.agents.items():
        received = {j: record.sent[(j, i)] for j in agent.in_neighbors if (j, i) in record.sent}
        library = CandidateLibrary.from_edges(received)
        try:
            record.decisions[i] = select_packet(agent, library, proto.alpha, proto.beta, proto.local_predictor)
        except EmptyLibrary as exc:
            LOGGER.warning("step %d: %s; no assimilation", t, exc)


def run_step(world: World, t: int) -> StepRecord:
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    record = StepRecord(step=t)
    for i, agent in world.agents.items():
        record.measurements[i] = sample_measurement(agent, world.field)
    if world.shared:
        _send(world, record, t)
        _select(world, record, t)
        for i, decision in record.decisions.items():
            world.agents[i].retain(t, decision.chosen)
    record.metrics = evaluate_world(world, step=t)
    world.history.append(record)
    world.step = t
    LOGGER.info(
        "step %d/%d: retained=%d skipped_edges=%d",
        t,
        world.config.run.steps,
        record.retained_count,
        len(record.skipped_edges),
    )
    return record


def run_world(config: ScenarioConfig, shared: bool = True) -> World:
    world = build_world(config, shared=shared)
    for t in range(1, config.run.steps + 1):
        run_step(world, t)
    return world


def replay_datasets(records: Iterable[StepRecord], agent_ids: Iterable[int] = ()) -> Dict[int, AugmentedDataset]:
    """Rebuild every agent's augmented dataset from its step history."""
    data: Dict[int, AugmentedDataset] = {i: AugmentedDataset() for i in agent_ids}
    for rec in records:
        for i in sorted(rec.measurements):
            data[i] = data.get(i, AugmentedDataset()).with_raw(rec.measurements[i])
        for i in sorted(rec.decisions):
            p = rec.decisions[i].chosen
            data[i] = data.get(i, AugmentedDataset()).with_fictitious(Measurement(p.location, p.mean, p.variance))
    return data


@dataclass
class RunArtifacts:
    config: ScenarioConfig
    shared: World
    baseline: Optional[World] = None
    files: Dict[str, str] = field(default_factory=dict)


def run_scenario(config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> RunArtifacts:
    """Shared-information run plus, if enabled, the identically seeded self-only baseline."""
    artifacts = RunArtifacts(config, run_world(config, shared=True))
    if config.run.baseline:
        artifacts.baseline = run_world(config, shared=False)
    if out_dir is not None:
        write_outputs(artifacts, out_dir)
    return artifacts
