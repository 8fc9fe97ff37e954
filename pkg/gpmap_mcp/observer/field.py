"""Ground-truth scalar fields the agents sample."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

FIELD_KINDS = ("gaussian_bumps", "analytic")
ANALYTIC_FIELDS = ("peaks", "ripple")

# Default smooth test field: three Gaussian bumps of mixed sign over [-6, 6]^2.
DEFAULT_CENTERS = ((-2.5, -2.0), (2.8, 1.5), (0.5, 3.5))
DEFAULT_AMPLITUDES = (1.6, -1.2, 1.0)
DEFAULT_WIDTHS = (2.0, 1.6, 2.4)


def _peaks(x: np.ndarray) -> np.ndarray:
    # Classic "peaks" surface, stretched so its features span [-6, 6].
    u, v = 0.5 * x[:, 0], 0.5 * x[:, 1]
    return (
        3.0 * (1 - u) ** 2 * np.exp(-u ** 2 - (v + 1) ** 2)
        - 10.0 * (u / 5 - u ** 3 - v ** 5) * np.exp(-u ** 2 - v ** 2)
        - np.exp(-(u + 1) ** 2 - v ** 2) / 3.0
    ) / 4.0


def _ripple(x: np.ndarray) -> np.ndarray:
    return np.sin(0.8 * x[:, 0]) * np.cos(0.6 * x[:, 1]) + 0.05 * x[:, 0]


_ANALYTIC = {"peaks": _peaks, "ripple": _ripple}


@dataclass(frozen=True)
class ScalarField:
    kind: str = "gaussian_bumps"
    centers: Tuple[Tuple[float, ...], ...] = DEFAULT_CENTERS
    amplitudes: Tuple[float, ...] = DEFAULT_AMPLITUDES
    widths: Tuple[float, ...] = DEFAULT_WIDTHS
    expression: str = "peaks"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "gaussian_bumps":
            if not (len(self.centers) == len(self.amplitudes) == len(self.widths)):
                raise ValueError("bump centers, amplitudes and widths must have equal length")
            if any(w <= 0 for w in self.widths):
                raise ValueError("bump widths must be positive")
        elif self.expression not in _ANALYTIC:
            raise ValueError(f"unknown analytic field {self.expression!r}; expected one of {ANALYTIC_FIELDS}")

    def evaluate(self, xs: np.ndarray) -> np.ndarray:
        """Field values at the rows of `xs` (or at a single point)."""
        xs = np.asarray(xs, dtype=float)
        single = xs.ndim == 1
        pts = np.atleast_2d(xs)
        if self.kind == "analytic":
            out = _ANALYTIC[self.expression](pts)
        else:
            out = np.zeros(len(pts))
            for c, a, w in zip(self.centers, self.amplitudes, self.widths):
                d = pts - np.asarray(c)
                out += a * np.exp(-np.sum(d * d, axis=1) / (2.0 * w * w))
        return float(out[0]) if single else out

    def __call__(self, x) -> float:
        return self.evaluate(x)
