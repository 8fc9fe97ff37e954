"""Exact GP regression over an agent's augmented information set.

An agent conditions on two blocks of observations: its own raw sensor
measurements and the fictitious measurements it retained from neighbours'
packets. Both enter the same zero-mean GP with a squared-exponential kernel;
the only difference is the per-row noise variance on the diagonal of R.

Everything here is an immutable value or a pure function of one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from gpmap_mcp.errors import SingularSystem

LOGGER = logging.getLogger(__name__)

# Relative to signal_scale; below every tolerance the tests use.
JITTER = 1e-10

Point = Tuple[float, ...]


def as_point(x: Iterable[float]) -> Point:
    return tuple(float(v) for v in x)


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential kernel k(x, x') = signal_scale * exp(-|x - x'|^2 / (2 length_scale^2)).

    `signal_scale` is the value of k(x, x) (the process variance nu).
    """

    signal_scale: float
    length_scale: float

    def __post_init__(self):
        if not (self.signal_scale > 0 and math.isfinite(self.signal_scale)):
            raise ValueError(f"signal_scale must be positive, got {self.signal_scale}")
        if not (self.length_scale > 0 and math.isfinite(self.length_scale)):
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")

    @property
    def theta(self) -> float:
        """2 * length_scale^2, the denominator of the normalized kernel."""
        return 2.0 * self.length_scale ** 2

    @property
    def jitter(self) -> float:
        return JITTER * self.signal_scale

    def matrix(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """Cross-covariance between row sets; broadcasts over leading axes.

        xa: (..., N, n), xb: (..., M, n) -> (..., N, M).
        """
        xa = np.asarray(xa, dtype=float)
        xb = np.asarray(xb, dtype=float)
        diff = xa[..., :, None, :] - xb[..., None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        return self.signal_scale * np.exp(-sq / self.theta)

    def normalized(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """kappa = k / nu (unit-height correlation)."""
        return self.matrix(xa, xb) / self.signal_scale

    def diag(self, xs: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(xs).shape[:-1], self.signal_scale, dtype=float)


def kernel_eval(kernel: Kernel, x: Sequence[float], x_prime: Sequence[float]) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return float(kernel.signal_scale * np.exp(-float(d @ d) / kernel.theta))


@dataclass(frozen=True)
class Measurement:
    location: Point
    value: float
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "location", as_point(self.location))
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.noise_variance > 0:
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")


@dataclass(frozen=True)
class AugmentedDataset:
    """Raw block first, fictitious block second; both append-only."""

    raw: Tuple[Measurement, ...] = ()
    fictitious: Tuple[Measurement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "raw", tuple(self.raw))
        object.__setattr__(self, "fictitious", tuple(self.fictitious))

    def __len__(self) -> int:
        return len(self.raw) + len(self.fictitious)

    @property
    def rows(self) -> Tuple[Measurement, ...]:
        return self.raw + self.fictitious

    def with_raw(self, m: Measurement) -> "AugmentedDataset":
        return AugmentedDataset(self.raw + (m,), self.fictitious)

    def with_fictitious(self, m: Measurement) -> "AugmentedDataset":
        return AugmentedDataset(self.raw, self.fictitious + (m,))

    def raw_only(self) -> "AugmentedDataset":
        return AugmentedDataset(self.raw, ())

    @property
    def inputs(self) -> np.ndarray:
        return np.array([m.location for m in self.rows], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.rows], dtype=float)

    @property
    def noise(self) -> np.ndarray:
        """Diagonal of R, raw block first."""
        return np.array([m.noise_variance for m in self.rows], dtype=float)


@dataclass(frozen=True)
class PosteriorEvaluation:
    mean: float
    variance: float


@dataclass(frozen=True)
class GPFactor:
    """Cholesky factor of (K + R + jitter) plus the weight vector (K + R)^-1 Y.

    Built once per dataset and reused for any number of test points.
    """

    kernel: Kernel
    inputs: np.ndarray
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, kernel: Kernel, data: AugmentedDataset) -> "GPFactor":
        if len(data) == 0:
            return cls(kernel, np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0))
        X = data.inputs
        A = kernel.matrix(X, X) + np.diag(data.noise) + kernel.jitter * np.eye(len(X))
        try:
            L = cholesky(A, lower=True)
        except LinAlgError as exc:
            raise SingularSystem(f"K + R is not positive definite ({len(X)} rows): {exc}") from exc
        w = cho_solve((L, True), data.values)
        return cls(kernel, X, L, w)

    @property
    def empty(self) -> bool:
        return self.weights.size == 0

    def _project(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Cross-covariance K(X, xs) and its whitened form L^-1 K(X, xs)."""
        Kxs = self.kernel.matrix(self.inputs, xs)
        V = solve_triangular(self.chol, Kxs, lower=True)
        return Kxs, V

    def mean_var(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        prior = self.kernel.diag(xs)
        if self.empty:
            return np.zeros(len(xs)), prior
        Kxs, V = self._project(xs)
        mean = Kxs.T @ self.weights
        var = prior - np.sum(V * V, axis=0)
        return mean, np.maximum(var, 0.0)

    def mean_cov(self, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        prior = self.kernel.matrix(xs, xs)
        if self.empty:
            return np.zeros(len(xs)), prior
        Kxs, V = self._project(xs)
        cov = prior - V.T @ V
        idx = np.diag_indices_from(cov)
        cov[idx] = np.maximum(cov[idx], 0.0)
        return Kxs.T @ self.weights, cov


def posterior_at(kernel: Kernel, data: AugmentedDataset, x_star: Sequence[float]) -> PosteriorEvaluation:
    mean, var = GPFactor.build(kernel, data).mean_var(np.asarray(x_star, dtype=float)[None, :])
    return PosteriorEvaluation(float(mean[0]), float(var[0]))


def posterior_batch(kernel: Kernel, data: AugmentedDataset, xs: Sequence[Sequence[float]]) -> List[PosteriorEvaluation]:
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return []
    mean, var = GPFactor.build(kernel, data).mean_var(xs)
    return [PosteriorEvaluation(float(m), float(v)) for m, v in zip(mean, var)]


def posterior_joint(kernel: Kernel, data: AugmentedDataset, xs: Sequence[Sequence[float]]) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and full covariance matrix at `xs`."""
    return GPFactor.build(kernel, data).mean_cov(np.asarray(xs, dtype=float))
