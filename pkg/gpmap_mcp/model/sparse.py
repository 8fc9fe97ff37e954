"""FITC inducing-point approximation of an agent's augmented GP.

With inducing inputs P, training inputs X and diagonal noise R:

    Lambda = diag(K_XX - K_Xp K_pp^-1 K_pX)        (clamped at 0)
    Omega  = Lambda + R
    Q      = K_pp + K_Xp^T Omega^-1 K_Xp
    mean   = k_p(x)^T Q^-1 K_Xp^T Omega^-1 Y
    var    = k(x, x) - k_p(x)^T (K_pp^-1 - Q^-1) k_p(x)

Omega is diagonal, so every N-sized quantity is a vector or an N x p
matrix. No N x N matrix is ever formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from gpmap_mcp.architect.geometry import grid_nodes
from gpmap_mcp.errors import SingularSystem
from gpmap_mcp.model.gp import AugmentedDataset, Kernel, Point, PosteriorEvaluation, as_point

LOGGER = logging.getLogger(__name__)

DEFAULT_SEPARATION = 1e-6


@dataclass(frozen=True)
class InducingSet:
    points: Tuple[Point, ...]
    separation: float = DEFAULT_SEPARATION

    def __post_init__(self):
        pts = tuple(as_point(p) for p in self.points)
        if not pts:
            raise ValueError("an inducing set needs at least one point")
        arr = np.asarray(pts)
        if len(arr) > 1:
            d = np.sqrt(np.sum((arr[:, None, :] - arr[None, :, :]) ** 2, axis=-1))
            d[np.diag_indices_from(d)] = np.inf
            if d.min() < self.separation:
                raise ValueError(
                    f"inducing points closer than {self.separation:g} (min distance {d.min():.3g})"
                )
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)


def _chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return cholesky(A, lower=True)
    except LinAlgError as exc:
        raise SingularSystem(f"{what} is not positive definite: {exc}") from exc


@dataclass(frozen=True)
class SparsePosterior:
    kernel: Kernel
    inducing: np.ndarray
    chol_kpp: np.ndarray = field(repr=False)
    chol_q: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    fitc_diag: np.ndarray = field(repr=False)

    def _whiten(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        Kp = self.kernel.matrix(self.inducing, xs)
        Vk = solve_triangular(self.chol_kpp, Kp, lower=True)
        Vq = solve_triangular(self.chol_q, Kp, lower=True)
        return Kp, Vk, Vq

    def mean_var(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        Kp, Vk, Vq = self._whiten(xs)
        var = self.kernel.diag(xs) - np.sum(Vk * Vk, axis=0) + np.sum(Vq * Vq, axis=0)
        return Kp.T @ self.weights, np.maximum(var, 0.0)

    def mean_cov(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        Kp, Vk, Vq = self._whiten(xs)
        cov = self.kernel.matrix(xs, xs) - Vk.T @ Vk + Vq.T @ Vq
        idx = np.diag_indices_from(cov)
        cov[idx] = np.maximum(cov[idx], 0.0)
        return Kp.T @ self.weights, cov


def fit_sparse(kernel: Kernel, data: AugmentedDataset, inducing: InducingSet) -> SparsePosterior:
    if len(data) == 0:
        raise ValueError("fit_sparse needs at least one measurement")
    X, Y, R = data.inputs, data.values, data.noise
    P = inducing.array
    p = len(P)

    Kpp = kernel.matrix(P, P) + kernel.jitter * np.eye(p)
    Lk = _chol(Kpp, "K_pp")
    B = kernel.matrix(X, P)
    V = solve_triangular(Lk, B.T, lower=True)
    lam = kernel.signal_scale - np.sum(V * V, axis=0)
    if lam.min() < -1e-9 * kernel.signal_scale:
        LOGGER.debug("FITC diagonal correction dipped to %.3g before clamping", lam.min())
    lam = np.maximum(lam, 0.0)
    omega = lam + R

    Bw = B / omega[:, None]
    Q = Kpp + B.T @ Bw
    Lq = _chol(0.5 * (Q + Q.T), "Q")
    w = cho_solve((Lq, True), Bw.T @ Y)
    return SparsePosterior(kernel, P, Lk, Lq, w, lam)


def sparse_posterior_at(sp: SparsePosterior, x_star: Sequence[float]) -> PosteriorEvaluation:
    mean, var = sp.mean_var(np.asarray(x_star, dtype=float)[None, :])
    return PosteriorEvaluation(float(mean[0]), float(var[0]))


def sparse_posterior_joint(sp: SparsePosterior, xs: Sequence[Sequence[float]]) -> Tuple[np.ndarray, np.ndarray]:
    """FITC predictive mean and covariance k(x,x') - k_p(x)^T (K_pp^-1 - Q^-1) k_p(x')."""
    return sp.mean_cov(np.asarray(xs, dtype=float))


def local_inducing_set(subdomain, resolution: int) -> InducingSet:
    """Cell-centre grid of `subdomain` used as the agent's own inducing inputs.

    Refines the grid until at least one node falls inside the subdomain.
    """
    lower, upper = subdomain.bounding_box()
    r = max(1, int(resolution))
    while True:
        nodes = grid_nodes(lower, upper, r)
        nodes = nodes[subdomain.contains(nodes)]
        if len(nodes):
            return InducingSet(tuple(map(tuple, nodes)))
        r += 1
