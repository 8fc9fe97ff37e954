"""RMSE / NLPD over the evaluation grid, per agent and over overlaps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Mapping, Optional, Sequence

import numpy as np

from gpmap_mcp.errors import EmptyEvaluationSet
from gpmap_mcp.observer.agents import AgentState, predict
from gpmap_mcp.observer.field import ScalarField

if TYPE_CHECKING:
    from gpmap_mcp.observer.stepping import World

LOGGER = logging.getLogger(__name__)

NLPD_NOISE_MODES = ("modeled", "true")


def rmse(truth: Sequence[float], means: Sequence[float]) -> float:
    truth = np.asarray(truth, dtype=float)
    means = np.asarray(means, dtype=float)
    if truth.shape != means.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {means.shape}")
    if truth.size == 0:
        raise EmptyEvaluationSet("rmse over zero points")
    return float(np.sqrt(np.mean((means - truth) ** 2)))


def nlpd(truth: Sequence[float], means: Sequence[float], variances: Sequence[float], obs_noise_var: float) -> float:
    """Mean Gaussian negative log predictive density with the observation noise added."""
    truth = np.asarray(truth, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if not (truth.shape == means.shape == variances.shape):
        raise ValueError("truth, means and variances must have the same length")
    if truth.size == 0:
        raise EmptyEvaluationSet("nlpd over zero points")
    if not obs_noise_var > 0:
        raise ValueError(f"obs_noise_var must be positive, got {obs_noise_var}")
    if np.any(variances < 0):
        raise ValueError("predictive variances must be non-negative")
    total = variances + obs_noise_var
    return float(np.mean(0.5 * np.log(2.0 * math.pi * total) + (truth - means) ** 2 / (2.0 * total)))


def membership_counts(subdomains: Sequence, grid: np.ndarray) -> np.ndarray:
    """How many subdomains contain each grid point."""
    grid = np.asarray(grid, dtype=float)
    counts = np.zeros(len(grid), dtype=int)
    for sd in subdomains:
        counts += sd.contains(grid).astype(int)
    return counts


@dataclass(frozen=True)
class MetricSnapshot:
    """Per-agent and network metrics after one step. None marks an empty evaluation set."""

    step: int
    local_rmse: Dict[int, Optional[float]] = field(default_factory=dict)
    local_nlpd: Dict[int, Optional[float]] = field(default_factory=dict)
    overlap_rmse: Dict[int, Optional[float]] = field(default_factory=dict)
    overlap_nlpd: Dict[int, Optional[float]] = field(default_factory=dict)

    @staticmethod
    def _network(values: Mapping[int, Optional[float]]) -> Optional[float]:
        present = [v for v in values.values() if v is not None]
        return float(np.mean(present)) if present else None

    @property
    def network_local_rmse(self) -> Optional[float]:
        return self._network(self.local_rmse)

    @property
    def network_local_nlpd(self) -> Optional[float]:
        return self._network(self.local_nlpd)

    @property
    def network_overlap_rmse(self) -> Optional[float]:
        return self._network(self.overlap_rmse)

    @property
    def network_overlap_nlpd(self) -> Optional[float]:
        return self._network(self.overlap_nlpd)

    def to_dict(self) -> Dict[str, object]:
        return {
            "step": self.step,
            "local_rmse": dict(self.local_rmse),
            "local_nlpd": dict(self.local_nlpd),
            "overlap_rmse": dict(self.overlap_rmse),
            "overlap_nlpd": dict(self.overlap_nlpd),
            "network_local_rmse": self.network_local_rmse,
            "network_local_nlpd": self.network_local_nlpd,
            "network_overlap_rmse": self.network_overlap_rmse,
            "network_overlap_nlpd": self.network_overlap_nlpd,
        }


def _obs_noise(agent: AgentState, mode: str, true_std: float) -> float:
    return agent.noise_variance if mode == "modeled" else true_std ** 2


def evaluate_agents(
    agents: Mapping[int, AgentState],
    field: ScalarField,
    eval_grid: np.ndarray,
    step: int = 0,
    predictor: str = "exact",
    nlpd_noise: str = "modeled",
    true_noise_std: float = 0.0,
) -> MetricSnapshot:
    eval_grid = np.asarray(eval_grid, dtype=float)
    if len(eval_grid) == 0:
        raise EmptyEvaluationSet("evaluation grid is empty")
    if nlpd_noise not in NLPD_NOISE_MODES:
        raise ValueError(f"unknown nlpd_noise mode {nlpd_noise!r}")
    truth = field.evaluate(eval_grid)
    inside = {i: a.subdomain.contains(eval_grid) for i, a in agents.items()}
    counts = np.sum(list(inside.values()), axis=0)

    snap = MetricSnapshot(step)
    for i, agent in agents.items():
        local = inside[i]
        shared = local & (counts >= 2)
        if not local.any():
            LOGGER.warning("agent %d: no evaluation point inside its subdomain", i)
            for d in (snap.local_rmse, snap.local_nlpd, snap.overlap_rmse, snap.overlap_nlpd):
                d[i] = None
            continue
        mean, var = predict(agent, eval_grid[local], predictor)
        noise = _obs_noise(agent, nlpd_noise, true_noise_std)
        snap.local_rmse[i] = rmse(truth[local], mean)
        snap.local_nlpd[i] = nlpd(truth[local], mean, var, noise)
        sub = shared[local]
        if sub.any():
            snap.overlap_rmse[i] = rmse(truth[shared], mean[sub])
            snap.overlap_nlpd[i] = nlpd(truth[shared], mean[sub], var[sub], noise)
        else:
            snap.overlap_rmse[i] = None
            snap.overlap_nlpd[i] = None
    return snap


def evaluate_world(world: "World", field: Optional[ScalarField] = None, eval_grid: Optional[np.ndarray] = None, step: int = 0) -> MetricSnapshot:
    """Snapshot of `world` using its own predictor and NLPD-noise settings."""
    cfg = world.config
    return evaluate_agents(
        world.agents,
        world.field if field is None else field,
        world.eval_grid if eval_grid is None else eval_grid,
        step=step,
        predictor=cfg.protocol.local_predictor,
        nlpd_noise=cfg.metrics.nlpd_noise,
        true_noise_std=cfg.field.noise_std,
    )
