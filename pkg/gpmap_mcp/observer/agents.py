"""Per-agent mutable state and the measurement model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from gpmap_mcp.architect.geometry import Subdomain
from gpmap_mcp.errors import SamplingFailed
from gpmap_mcp.model.gp import AugmentedDataset, GPFactor, Kernel, Measurement
from gpmap_mcp.model.sparse import InducingSet, fit_sparse
from gpmap_mcp.observer.field import ScalarField
from gpmap_mcp.protocol.packets import Packet

LOGGER = logging.getLogger(__name__)

PREDICTORS = ("exact", "sparse")

_MAX_REJECTIONS = 100_000


@dataclass
class AgentState:
    """One agent. `sensor_noise_std` generates data; `noise_std` is what the GP assumes."""

    id: int
    subdomain: Subdomain
    kernel: Kernel
    sensor_noise_std: float
    noise_std: float
    rng: np.random.Generator
    data: AugmentedDataset = field(default_factory=AugmentedDataset)
    in_neighbors: Tuple[int, ...] = ()
    out_neighbors: Tuple[int, ...] = ()
    retained: List[Tuple[int, Packet]] = field(default_factory=list)
    local_inducing: Optional[InducingSet] = None

    @property
    def noise_variance(self) -> float:
        return self.noise_std ** 2

    def retain(self, step: int, packet: Packet) -> None:
        """Append a chosen packet to the fictitious block (noise = packet variance)."""
        self.data = self.data.with_fictitious(Measurement(packet.location, packet.mean, packet.variance))
        self.retained.append((step, packet))


def sample_measurement(agent: AgentState, field: ScalarField) -> Measurement:
    """Draw a uniform location in the subdomain, observe f(x) + noise, append to the raw block."""
    lower, upper = agent.subdomain.bounding_box()
    for _ in range(_MAX_REJECTIONS):
        x = agent.rng.uniform(lower, upper)
        if agent.subdomain.contains(x[None, :])[0]:
            break
    else:
        raise SamplingFailed(f"agent {agent.id}: rejection sampling failed in {agent.subdomain}")
    value = field.evaluate(x) + agent.rng.normal(0.0, agent.sensor_noise_std)
    m = Measurement(tuple(x), value, agent.noise_variance)
    agent.data = agent.data.with_raw(m)
    return m


def _use_sparse(agent: AgentState, predictor: str) -> bool:
    if predictor not in PREDICTORS:
        raise ValueError(f"unknown predictor {predictor!r}; expected one of {PREDICTORS}")
    return predictor == "sparse" and agent.local_inducing is not None and len(agent.data) > 0


def predict(agent: AgentState, xs: np.ndarray, predictor: str = "exact") -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of `agent` at the rows of `xs`."""
    if _use_sparse(agent, predictor):
        return fit_sparse(agent.kernel, agent.data, agent.local_inducing).mean_var(xs)
    return GPFactor.build(agent.kernel, agent.data).mean_var(xs)


def predict_joint(agent: AgentState, xs: np.ndarray, predictor: str = "exact") -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and covariance matrix at the rows of `xs`."""
    if _use_sparse(agent, predictor):
        return fit_sparse(agent.kernel, agent.data, agent.local_inducing).mean_cov(xs)
    return GPFactor.build(agent.kernel, agent.data).mean_cov(xs)
