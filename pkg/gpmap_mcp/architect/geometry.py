"""Subdomains, pairwise overlaps and the grids used to integrate over them.

Two shapes are supported: `Disk` (an n-ball) and `Box` (axis-aligned).
An overlap keeps both parent shapes and tests membership against each, so a
disk-disk overlap is the exact lens, while its bounding box is only the
intersection of the two parent boxes.

Grids are cell-centred and laid out with `numpy.meshgrid(indexing="ij")`,
flattened in C order; node index order is therefore deterministic and is
what the greedy selector uses for tie-breaking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from gpmap_mcp.errors import DegenerateOverlap
from gpmap_mcp.model.gp import Point, as_point

LOGGER = logging.getLogger(__name__)

# Upper bound on the per-axis target sub-grid before giving up on a sliver.
_MAX_TARGET_RESOLUTION = 512


@dataclass(frozen=True)
class Disk:
    center: Point
    radius: float

    kind = "disk"

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise ValueError(f"disk radius must be positive, got {self.radius}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def contains(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        d = xs - np.asarray(self.center)
        return np.sum(d * d, axis=-1) <= self.radius ** 2

    def volume(self) -> float:
        n = self.dim
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius ** n


@dataclass(frozen=True)
class Box:
    lower: Point
    upper: Point

    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "lower", as_point(self.lower))
        object.__setattr__(self, "upper", as_point(self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("box lower/upper have different dimensions")
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"box lower {self.lower} must be < upper {self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower), np.asarray(self.upper)

    def contains(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.all((xs >= np.asarray(self.lower)) & (xs <= np.asarray(self.upper)), axis=-1)

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))


Subdomain = Union[Disk, Box]


@dataclass(frozen=True)
class OverlapRegion:
    a: Subdomain
    b: Subdomain
    lower: Point
    upper: Point

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower), np.asarray(self.upper)

    @property
    def is_box(self) -> bool:
        """True when membership coincides with the bounding box."""
        return isinstance(self.a, Box) and isinstance(self.b, Box)

    def contains(self, xs: np.ndarray) -> np.ndarray:
        return self.a.contains(xs) & self.b.contains(xs)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def area(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class TargetSet:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def centroid(self) -> np.ndarray:
        return self.weights @ self.points


def _disjoint(a: Subdomain, b: Subdomain) -> bool:
    if isinstance(a, Disk) and isinstance(b, Disk):
        gap = np.linalg.norm(np.asarray(a.center) - np.asarray(b.center))
        return gap > a.radius + b.radius
    if isinstance(a, Box) and isinstance(b, Disk):
        a, b = b, a
    if isinstance(a, Disk) and isinstance(b, Box):
        c = np.asarray(a.center)
        nearest = np.clip(c, b.lower, b.upper)
        return float(np.linalg.norm(c - nearest)) > a.radius
    return False


def intersect(a: Subdomain, b: Subdomain) -> Optional[OverlapRegion]:
    """Overlap of two subdomains, or None when they are disjoint."""
    if a.dim != b.dim:
        raise ValueError(f"cannot intersect a {a.dim}-D and a {b.dim}-D subdomain")
    lo_a, hi_a = a.bounding_box()
    lo_b, hi_b = b.bounding_box()
    lower = np.maximum(lo_a, lo_b)
    upper = np.minimum(hi_a, hi_b)
    if np.any(lower > upper) or _disjoint(a, b):
        return None
    return OverlapRegion(a, b, as_point(lower), as_point(upper))


def grid_nodes(lower: np.ndarray, upper: np.ndarray, resolution: int) -> np.ndarray:
    """Cell centres of a `resolution`^n grid over [lower, upper]."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    h = (upper - lower) / resolution
    axes = [lo + (np.arange(resolution) + 0.5) * step for lo, step in zip(lower, h)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _masked_nodes(region: OverlapRegion, resolution: int) -> np.ndarray:
    lower, upper = region.bounding_box
    if np.any(upper - lower <= 0):
        raise DegenerateOverlap(f"overlap bounding box has zero extent: {region.lower}..{region.upper}")
    nodes = grid_nodes(lower, upper, resolution)
    return nodes[region.contains(nodes)]


def quadrature(region: OverlapRegion, resolution: int) -> QuadratureGrid:
    if resolution < 2:
        raise ValueError(f"quadrature resolution must be >= 2, got {resolution}")
    nodes = _masked_nodes(region, resolution)
    if len(nodes) == 0:
        raise DegenerateOverlap(f"no quadrature node inside overlap at resolution {resolution}")
    lower, upper = region.bounding_box
    cell = float(np.prod((upper - lower) / resolution))
    return QuadratureGrid(nodes, np.full(len(nodes), cell), resolution)


def target_set(region: OverlapRegion, q: int) -> TargetSet:
    """q evenly spread sub-grid nodes with equal weights 1/q.

    Starts at ceil(q^(1/n)) cells per axis and refines until at least q nodes
    fall inside the overlap; a surplus is thinned by even index spacing.
    """
    if q < 1:
        raise ValueError(f"target count must be >= 1, got {q}")
    r = max(1, math.ceil(q ** (1.0 / region.dim) - 1e-9))
    nodes = _masked_nodes(region, r)
    while len(nodes) < q:
        r += 1
        if r > _MAX_TARGET_RESOLUTION:
            raise DegenerateOverlap(f"overlap too thin to hold {q} target points")
        nodes = _masked_nodes(region, r)
    if len(nodes) > q:
        idx = np.round(np.linspace(0, len(nodes) - 1, q)).astype(int)
        nodes = nodes[idx]
    return TargetSet(nodes, np.full(q, 1.0 / q))
