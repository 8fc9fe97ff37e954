"""Sender-side batch-targeted inducing-point (BTIP) selection.

For a directed edge j -> i the sender picks inducing points that minimize
the target-weighted, normalized FITC variance integrated over the overlap:

    J(S) = sum_b alpha_b  int_O  kappa(x, z_b) sigma_S^2(x) / nu  dx
         = C_T - tr[(K_S^-1 - Q_S^-1) W*(T)]

`C_T` and `W*` are available two ways: midpoint quadrature on the overlap
grid (any region) and an erf closed form (box regions only). Points are
added greedily starting from the weighted target centroid; the candidate
pool is the quadrature grid, optionally refined with L-BFGS-B on the
analytic gradient.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.optimize import minimize
from scipy.special import erf

from gpmap_mcp.architect.geometry import OverlapRegion, QuadratureGrid, TargetSet
from gpmap_mcp.errors import NotBoxRegion, SingularSystem
from gpmap_mcp.model.gp import AugmentedDataset, GPFactor, Kernel, Point, as_point
from gpmap_mcp.model.sparse import InducingSet, fit_sparse
from gpmap_mcp.protocol.packets import Packet

if TYPE_CHECKING:
    from gpmap_mcp.observer.agents import AgentState

LOGGER = logging.getLogger(__name__)

OPTIMIZERS = ("grid", "gradient")

# Minimum spacing between inducing points, relative to the length scale.
SEPARATION_FACTOR = 1e-3
# Packet variance floor, relative to signal_scale.
VARIANCE_FLOOR = 1e-8
TRACE_TOL = 1e-9
_CHUNK = 256
_GRADIENT_STARTS = 3


@dataclass(frozen=True, eq=False)
class BtipProblem:
    sender_kernel: Kernel
    sender_data: AugmentedDataset
    region: OverlapRegion
    targets: TargetSet
    budget: int
    grid: QuadratureGrid

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if len(self.targets) == 0:
            raise ValueError("BTIP problem needs at least one target")
        if not np.all(self.region.contains(self.targets.points)):
            raise ValueError("every target must lie inside the overlap region")
        if len(self.sender_data) == 0:
            raise ValueError("sender has no measurements to condition on")

    @property
    def separation(self) -> float:
        return SEPARATION_FACTOR * self.sender_kernel.length_scale

    @cached_property
    def inputs(self) -> np.ndarray:
        return self.sender_data.inputs

    @cached_property
    def noise(self) -> np.ndarray:
        return self.sender_data.noise

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quadrature weight times the target weighting omega(x) = sum_b alpha_b kappa(x, z_b)."""
        omega = self.targets.weights @ self.sender_kernel.normalized(self.targets.points, self.grid.nodes)
        return self.grid.weights * omega


@dataclass(frozen=True)
class EdgeInducingSet:
    points: Tuple[Point, ...]
    objective_trace: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------- integrals


def _triple(z, r, s, a, b, theta):
    """1-D integral over [a, b] of exp(-((x-z)^2 + (x-r)^2 + (x-s)^2) / theta).

    Returns the value plus the pieces the s-derivative needs.
    """
    c = (z + r + s) / 3.0
    spread = ((z - r) ** 2 + (z - s) ** 2 + (r - s) ** 2) / 3.0
    g = math.sqrt(3.0 / theta)
    G = 0.5 * math.sqrt(math.pi * theta / 3.0) * (erf(g * (b - c)) - erf(g * (a - c)))
    scale = np.exp(-spread / theta)
    return scale * G, scale, G, c


def _triple_ds(z, r, s, a, b, theta):
    _, scale, G, c = _triple(z, r, s, a, b, theta)
    edge = np.exp(-3.0 * (a - c) ** 2 / theta) - np.exp(-3.0 * (b - c) ** 2 / theta)
    return scale * (-2.0 * (s - c) / theta * G + edge / 3.0)


def _box_bounds(problem: BtipProblem) -> Tuple[np.ndarray, np.ndarray]:
    if not problem.region.is_box:
        raise NotBoxRegion("closed-form BTIP needs a box overlap; use quadrature for disks")
    return problem.region.bounding_box


def c_target(problem: BtipProblem, closed_form: bool = False) -> float:
    """C_T: the objective's value with no inducing points (prior variance everywhere)."""
    if not closed_form:
        return float(problem.node_weights.sum())
    a, b = _box_bounds(problem)
    theta = problem.sender_kernel.theta
    z = problem.targets.points
    sq = math.sqrt(theta)
    per_dim = 0.5 * math.sqrt(math.pi * theta) * (erf((z - a) / sq) - erf((z - b) / sq))
    return float(problem.targets.weights @ np.prod(per_dim, axis=1))


def _w_closed_terms(problem: BtipProblem, P: np.ndarray) -> np.ndarray:
    """Per-target, per-dimension triple integrals, shape (q, p, p, n)."""
    a, b = _box_bounds(problem)
    z = problem.targets.points
    I, _, _, _ = _triple(
        z[:, None, None, :], P[None, :, None, :], P[None, None, :, :], a, b, problem.sender_kernel.theta
    )
    return I


def w_star(problem: BtipProblem, points: Sequence[Sequence[float]], closed_form: bool = False) -> np.ndarray:
    """W*(T)_{rs} = sum_b alpha_b int (1/nu) kappa(x, z_b) k(x, p_r) k(x, p_s) dx."""
    P = np.asarray(points, dtype=float)
    kern = problem.sender_kernel
    if closed_form:
        I = _w_closed_terms(problem, P)
        W = kern.signal_scale * np.einsum("b,brs->rs", problem.targets.weights, np.prod(I, axis=-1))
    else:
        Kg = kern.matrix(problem.grid.nodes, P)
        W = (Kg * problem.node_weights[:, None]).T @ Kg / kern.signal_scale
    return 0.5 * (W + W.T)


# ---------------------------------------------------------------- objective


def _check_distinct(P: np.ndarray, separation: float) -> None:
    if len(P) < 2:
        return
    d = np.sqrt(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1))
    d[np.diag_indices_from(d)] = np.inf
    if d.min() < separation:
        raise SingularSystem(f"candidate inducing points closer than {separation:g}")


def btip_objective(problem: BtipProblem, candidate_set: Sequence[Sequence[float]]) -> float:
    """Quadrature BTIP value of `candidate_set`, via the fitted sparse variance at every node."""
    P = np.atleast_2d(np.asarray(candidate_set, dtype=float))
    if P.size == 0:
        raise ValueError("candidate set is empty")
    _check_distinct(P, problem.separation)
    sp = fit_sparse(problem.sender_kernel, problem.sender_data, InducingSet(tuple(map(tuple, P)), separation=0.0))
    _, var = sp.mean_var(problem.grid.nodes)
    return float(problem.node_weights @ var / problem.sender_kernel.signal_scale)


@dataclass(frozen=True, eq=False)
class _Fitc:
    K: np.ndarray
    Kinv: np.ndarray
    B: np.ndarray
    BKinv: np.ndarray
    active: np.ndarray
    omega: np.ndarray
    Qinv: np.ndarray

    @property
    def S(self) -> np.ndarray:
        return self.Kinv - self.Qinv


def _spd_inverse(A: np.ndarray, what: str) -> np.ndarray:
    try:
        L = cholesky(0.5 * (A + A.T), lower=True)
    except LinAlgError as exc:
        raise SingularSystem(f"{what} is not positive definite: {exc}") from exc
    return cho_solve((L, True), np.eye(len(A)))


def _fitc(problem: BtipProblem, P: np.ndarray) -> _Fitc:
    kern = problem.sender_kernel
    X, R = problem.inputs, problem.noise
    K = kern.matrix(P, P) + kern.jitter * np.eye(len(P))
    Kinv = _spd_inverse(K, "K_pp")
    B = kern.matrix(X, P)
    BK = B @ Kinv
    lam = kern.signal_scale - np.sum(B * BK, axis=1)
    active = lam > 0
    omega = np.where(active, lam, 0.0) + R
    Q = K + B.T @ (B / omega[:, None])
    return _Fitc(K, Kinv, B, BK, active, omega, _spd_inverse(Q, "Q"))


def btip_closed_form(problem: BtipProblem, candidate_set: Sequence[Sequence[float]]) -> float:
    """C_T - tr[(K^-1 - Q^-1) W*] with both terms in closed form (box overlaps only)."""
    _box_bounds(problem)
    P = np.atleast_2d(np.asarray(candidate_set, dtype=float))
    _check_distinct(P, problem.separation)
    f = _fitc(problem, P)
    return c_target(problem, closed_form=True) - float(np.sum(f.S * w_star(problem, P, closed_form=True)))


def btip_gradient(
    problem: BtipProblem, incumbent: Sequence[Sequence[float]], candidate: Sequence[float]
) -> Tuple[float, np.ndarray]:
    """Objective of incumbent + [candidate] and its gradient w.r.t. the candidate.

    Closed-form integrals on box overlaps, quadrature otherwise. Every
    matrix-inverse derivative goes through dA^-1 = -A^-1 dA A^-1, including
    the FITC diagonal's dependence on the candidate.
    """
    c = np.asarray(candidate, dtype=float)
    inc = np.asarray(incumbent, dtype=float).reshape(-1, len(c))
    P = np.vstack([inc, c[None, :]])
    closed = problem.region.is_box
    kern = problem.sender_kernel
    nu, ell2 = kern.signal_scale, kern.length_scale ** 2
    X = problem.inputs

    f = _fitc(problem, P)
    S = f.S
    W = w_star(problem, P, closed_form=closed)
    value = c_target(problem, closed_form=closed) - float(np.sum(S * W))

    if closed:
        a, b = problem.region.bounding_box
        z = problem.targets.points
        I = _w_closed_terms(problem, P)[:, :, -1, :]  # (q, p, n): entries (r, candidate)
    else:
        Kg = kern.matrix(problem.grid.nodes, P)
        KgW = Kg * problem.node_weights[:, None]

    Bo = f.B / f.omega[:, None]
    grad = np.zeros(len(c))
    for l in range(len(c)):
        col = f.K[:, -1] * (P[:, l] - c[l]) / ell2
        dK = np.zeros_like(f.K)
        dK[:, -1] = col
        dK[-1, :] = col
        dB = np.zeros_like(f.B)
        dB[:, -1] = f.B[:, -1] * (X[:, l] - c[l]) / ell2

        dKinv = -f.Kinv @ dK @ f.Kinv
        dlam = -(2.0 * np.sum(dB * f.BKinv, axis=1) + np.sum(f.B * (f.B @ dKinv), axis=1))
        dlam = np.where(f.active, dlam, 0.0)
        d_omega_inv = -dlam / f.omega ** 2
        dQ = dK + dB.T @ Bo + Bo.T @ dB + f.B.T @ (f.B * d_omega_inv[:, None])
        dQinv = -f.Qinv @ dQ @ f.Qinv
        dS = dKinv - dQinv

        if closed:
            others = np.prod(np.delete(I, l, axis=-1), axis=-1)  # (q, p)
            ds = _triple_ds(z[:, None, l], P[None, :, l], c[l], a[l], b[l], kern.theta)
            v = nu * (problem.targets.weights @ (ds * others))
        else:
            dk = Kg[:, -1] * (problem.grid.nodes[:, l] - c[l]) / ell2
            v = KgW.T @ dk / nu
        dW = np.zeros_like(W)
        dW[:, -1] = v
        dW[-1, :] = v
        dW[-1, -1] = 2.0 * v[-1]

        grad[l] = -float(np.sum(dS * W)) - float(np.sum(S * dW))
    return value, grad


def _batch_objective(problem: BtipProblem, incumbent: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Quadrature objective of incumbent + [c] for every row c, in trace form, batched."""
    kern = problem.sender_kernel
    nu = kern.signal_scale
    X, R = problem.inputs, problem.noise
    nodes, nw = problem.grid.nodes, problem.node_weights
    c_quad = float(nw.sum())
    m, n = incumbent.shape
    eye = np.eye(m + 1)
    out = np.empty(len(candidates))
    for start in range(0, len(candidates), _CHUNK):
        C = candidates[start:start + _CHUNK]
        P = np.concatenate([np.broadcast_to(incumbent, (len(C), m, n)), C[:, None, :]], axis=1)
        K = kern.matrix(P, P) + kern.jitter * eye
        Kinv = np.linalg.inv(K)
        B = kern.matrix(X[None], P)
        BK = B @ Kinv
        omega = np.maximum(nu - np.sum(B * BK, axis=-1), 0.0) + R
        Q = K + np.swapaxes(B, -1, -2) @ (B / omega[..., None])
        Qinv = np.linalg.inv(Q)
        Kg = kern.matrix(nodes[None], P)
        W = np.swapaxes(Kg * nw[None, :, None], -1, -2) @ Kg / nu
        out[start:start + len(C)] = c_quad - np.sum((Kinv - Qinv) * W, axis=(-2, -1))
    return out


# ---------------------------------------------------------------- greedy


def _start_point(problem: BtipProblem) -> np.ndarray:
    zc = problem.targets.centroid
    if problem.region.contains(zc[None, :])[0]:
        return zc
    nodes = problem.grid.nodes
    k = int(np.argmin(np.sum((nodes - zc) ** 2, axis=1)))
    LOGGER.debug("target centroid %s outside overlap; projected to node %d", zc, k)
    return nodes[k]


def _min_distance(x: np.ndarray, P: np.ndarray) -> np.ndarray:
    return np.sqrt(np.min(np.sum((x[:, None, :] - P[None, :, :]) ** 2, axis=-1), axis=1))


def _refine(
    problem: BtipProblem,
    incumbent: np.ndarray,
    pool: np.ndarray,
    values: np.ndarray,
    best: Tuple[np.ndarray, float],
) -> Tuple[np.ndarray, float]:
    lower, upper = problem.region.bounding_box
    bounds = list(zip(lower, upper))
    fun: Callable[[np.ndarray], Tuple[float, np.ndarray]] = lambda x: btip_gradient(problem, incumbent, x)
    best_pt, best_val = best
    for k in np.argsort(values, kind="stable")[:_GRADIENT_STARTS]:
        try:
            res = minimize(fun, pool[k], jac=True, method="L-BFGS-B", bounds=bounds)
        except SingularSystem as exc:
            LOGGER.debug("gradient start %d abandoned: %s", k, exc)
            continue
        x = np.clip(res.x, lower, upper)
        if not problem.region.contains(x[None, :])[0]:
            continue
        if _min_distance(x[None, :], incumbent)[0] < problem.separation:
            continue
        v = float(_batch_objective(problem, incumbent, x[None, :])[0])
        if v < best_val:
            best_pt, best_val = x, v
    return best_pt, best_val


def select_edge_inducing(problem: BtipProblem, optimizer: str = "grid") -> EdgeInducingSet:
    """Greedy BTIP placement: centroid first, then the best pool node per stage.

    Always fills the budget unless the pool runs out. FITC variance is not
    monotone in the inducing set, so a stage may raise the objective; the
    trace records it as computed.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {OPTIMIZERS}")
    nodes = problem.grid.nodes
    n = nodes.shape[1]

    first = _start_point(problem)
    selected: List[np.ndarray] = [first]
    trace = [float(_batch_objective(problem, np.zeros((0, n)), first[None, :])[0])]

    while len(selected) < problem.budget:
        inc = np.asarray(selected)
        idx = np.flatnonzero(_min_distance(nodes, inc) >= problem.separation)
        if idx.size == 0:
            LOGGER.debug("candidate pool exhausted after %d points", len(selected))
            break
        values = _batch_objective(problem, inc, nodes[idx])
        k = int(np.argmin(values))
        best = (nodes[idx[k]], float(values[k]))
        if optimizer == "gradient":
            best = _refine(problem, inc, nodes[idx], values, best)
        if best[1] > trace[-1] + TRACE_TOL:
            LOGGER.debug(
                "greedy stage %d raised the objective: %.6g > %.6g", len(selected) + 1, best[1], trace[-1]
            )
        selected.append(np.asarray(best[0], dtype=float))
        trace.append(best[1])
        LOGGER.debug("greedy stage %d: objective %.6g", len(selected), best[1])

    return EdgeInducingSet(tuple(as_point(p) for p in selected), tuple(trace))


def build_packet_library(
    sender: "AgentState",
    receiver_id: int,
    edge_set: EdgeInducingSet,
    step: int = 0,
    data: Optional[AugmentedDataset] = None,
) -> List[Packet]:
    """One packet per selected point: the sender's exact posterior mean and variance there.

    `data` overrides the conditioning set (the sender's full augmented set by default).
    """
    data = sender.data if data is None else data
    factor = GPFactor.build(sender.kernel, data)
    pts = np.asarray(edge_set.points, dtype=float)
    mean, var = factor.mean_var(pts)
    floor = VARIANCE_FLOOR * sender.kernel.signal_scale
    var = np.where(var > 0, var, floor)
    LOGGER.debug("agent %d -> %d: %d packets at step %d", sender.id, receiver_id, len(pts), step)
    return [Packet(tuple(x), mu, s, sender.id, step) for x, mu, s in zip(pts, mean, var)]
