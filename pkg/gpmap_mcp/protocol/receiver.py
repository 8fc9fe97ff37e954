"""Receiver side: one-point update, overlap-consistency cost and packet choice.

Given the receiver's current posterior (mean mu, covariance Sigma) and a
candidate packet (u, m, s), assimilating it as a fictitious measurement is a
rank-one update:

    mean+(x) = mu(x) + Sigma(x, u) (Sigma(u, u) + s)^-1 (m - mu(u))
    var+(x)  = Sigma(x, x) - Sigma(x, u)^2 / (Sigma(u, u) + s)

The cost of a candidate is how far the updated posterior sits from every
packet in the pooled library:

    J = alpha * sum_v (mean+(v) - m_v)^2 + beta * sum_v (var+(v) - s_v)^2

`select_packet` evaluates J for every candidate from one joint posterior
over the pooled locations and keeps the first minimum in (sender_id, index)
order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, Sequence, Tuple

import numpy as np

from gpmap_mcp.errors import EmptyLibrary
from gpmap_mcp.model.gp import AugmentedDataset, Kernel, PosteriorEvaluation, posterior_joint
from gpmap_mcp.observer.agents import AgentState, predict_joint
from gpmap_mcp.protocol.packets import CandidateLibrary, LibraryKey, Packet

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssimilationDecision:
    chosen: Packet
    key: LibraryKey
    cost: float
    per_candidate_costs: Dict[LibraryKey, float]


def one_point_update(kernel: Kernel, data: AugmentedDataset, packet: Packet, x: Sequence[float]) -> PosteriorEvaluation:
    mu, cov = posterior_joint(kernel, data, [tuple(x), packet.location])
    denom = cov[1, 1] + packet.variance
    mean = mu[0] + cov[0, 1] / denom * (packet.mean - mu[1])
    var = cov[0, 0] - cov[0, 1] ** 2 / denom
    return PosteriorEvaluation(float(mean), float(max(var, 0.0)))


def _costs(
    mu: np.ndarray,
    cov: np.ndarray,
    lib_means: np.ndarray,
    lib_vars: np.ndarray,
    cand_idx: np.ndarray,
    cand_means: np.ndarray,
    cand_vars: np.ndarray,
    alpha: float,
    beta: float,
) -> np.ndarray:
    """J for each candidate; the first len(lib_means) rows of mu/cov are the library locations.

    cand_idx[c] is the row of mu/cov at candidate c's location.
    """
    L = len(lib_means)
    cross = cov[:L][:, cand_idx]  # Sigma(v, u_c)
    denom = cov[cand_idx, cand_idx] + cand_vars
    mean_plus = mu[:L, None] + cross / denom * (cand_means - mu[cand_idx])
    var_plus = np.maximum(np.diag(cov)[:L, None] - cross ** 2 / denom, 0.0)
    return alpha * np.sum((mean_plus - lib_means[:, None]) ** 2, axis=0) + beta * np.sum(
        (var_plus - lib_vars[:, None]) ** 2, axis=0
    )


def receiver_cost(
    kernel: Kernel,
    data: AugmentedDataset,
    candidate: Packet,
    library: CandidateLibrary,
    alpha: float,
    beta: float,
) -> float:
    pooled = [p for _, p in library.pooled()]
    if not pooled:
        raise EmptyLibrary("receiver cost needs a non-empty library")
    locs = [p.location for p in pooled] + [candidate.location]
    mu, cov = posterior_joint(kernel, data, locs)
    J = _costs(
        mu,
        cov,
        np.array([p.mean for p in pooled]),
        np.array([p.variance for p in pooled]),
        np.array([len(pooled)]),
        np.array([candidate.mean]),
        np.array([candidate.variance]),
        alpha,
        beta,
    )
    return float(J[0])


def select_packet(
    agent: AgentState,
    library: CandidateLibrary,
    alpha: float,
    beta: float,
    predictor: str = "exact",
) -> AssimilationDecision:
    """Exact argmin of the receiver cost over the pooled library."""
    entries = library.pooled()
    if not entries:
        raise EmptyLibrary(f"agent {agent.id} received no packets")
    keys = [k for k, _ in entries]
    pkts = [p for _, p in entries]
    means = np.array([p.mean for p in pkts])
    variances = np.array([p.variance for p in pkts])

    mu, cov = predict_joint(agent, np.array([p.location for p in pkts]), predictor)
    idx = np.arange(len(pkts))
    J = _costs(mu, cov, means, variances, idx, means, variances, alpha, beta)

    best = int(np.argmin(J))
    costs = {k: float(j) for k, j in zip(keys, J)}
    LOGGER.debug("agent %d picked %s from %d candidates (J=%.6g)", agent.id, keys[best], len(pkts), J[best])
    return AssimilationDecision(pkts[best], keys[best], float(J[best]), costs)


def network_cost(decisions: Dict[int, AssimilationDecision]) -> float:
    """Sum of the per-agent costs, the separable network-level objective."""
    return float(sum(d.cost for d in decisions.values()))


def brute_force_network_choice(
    costs: Dict[int, Dict[LibraryKey, float]],
) -> Tuple[Dict[int, LibraryKey], float]:
    """Minimize the summed cost over the full product of per-agent choices.

    Exponential in the number of agents; only for checking separability on
    small instances.
    """
    agents = sorted(costs)
    options = [sorted(costs[i]) for i in agents]
    best_choice, best_total = None, np.inf
    for combo in product(*options):
        total = sum(costs[i][k] for i, k in zip(agents, combo))
        if total < best_total:
            best_choice, best_total = dict(zip(agents, combo)), total
    return best_choice, float(best_total)
