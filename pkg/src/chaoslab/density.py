"""Grid densities built from particle ensembles.

A :class:`DensityGrid` stores probability mass per cell (not density values),
so sums over cells are total mass and no cell volume factor appears in the
entropy and L1 estimators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DensitySupportError, GeometryError


@dataclass(frozen=True)
class DensityGrid:
    lower: np.ndarray
    edges: np.ndarray
    mass: np.ndarray
    clipped: float = 0.0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        edges = np.asarray(self.edges, dtype=np.float64).reshape(-1)
        mass = np.asarray(self.mass, dtype=np.float64)
        if lower.size != mass.ndim or edges.size != mass.ndim:
            raise GeometryError("lower/edges must have one entry per grid axis")
        if not np.all(edges > 0):
            raise GeometryError("cell edges must be positive")
        if np.any(mass < 0):
            raise ValueError("cell masses must be nonnegative")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @property
    def cells(self) -> tuple[int, ...]:
        return self.mass.shape

    @property
    def ndim(self) -> int:
        return self.mass.ndim

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.edges * np.array(self.cells)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.edges))

    def centers(self, axis: int) -> np.ndarray:
        return self.lower[axis] + self.edges[axis] * (np.arange(self.cells[axis]) + 0.5)

    def center_points(self) -> np.ndarray:
        axes = [self.centers(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def same_geometry(self, other: "DensityGrid", rtol: float = 1e-12) -> bool:
        return (self.cells == other.cells
                and np.allclose(self.lower, other.lower, rtol=rtol, atol=0)
                and np.allclose(self.edges, other.edges, rtol=rtol, atol=0))

    def with_mass(self, mass: np.ndarray, clipped: float | None = None) -> "DensityGrid":
        return DensityGrid(self.lower, self.edges, mass,
                           self.clipped if clipped is None else clipped)


def check_geometry(p: DensityGrid, q: DensityGrid) -> None:
    if not p.same_geometry(q):
        raise GeometryError(
            f"grid geometry mismatch: cells {p.cells} vs {q.cells}, "
            f"lower {p.lower} vs {q.lower}, edges {p.edges} vs {q.edges}")


def box_grid(lower, upper, cells) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    lower = np.asarray(lower, dtype=np.float64).reshape(-1)
    upper = np.asarray(upper, dtype=np.float64).reshape(-1)
    cells = np.broadcast_to(np.asarray(cells, dtype=np.int64), lower.shape)
    if np.any(cells < 2):
        raise ValueError("need at least 2 cells per axis")
    if np.any(upper <= lower):
        raise ValueError("box upper corner must exceed lower corner")
    return lower, (upper - lower) / cells, tuple(int(c) for c in cells)


def cell_indices(points: np.ndarray, lower: np.ndarray, edges: np.ndarray,
                 cells: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Flat cell index per point and the mask of points inside the box."""
    idx = np.floor((points - lower) / edges).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(cells)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[inside].T), cells)
    return flat, inside


def histogram(points, lower, upper, cells, weights=None) -> DensityGrid:
    """Normalized cell-count histogram; mass outside the box goes to ``clipped``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    lower, edges, cells = box_grid(lower, upper, cells)
    if points.shape[1] != lower.size:
        raise ValueError(f"points have {points.shape[1]} axes, box has {lower.size}")
    m = points.shape[0]
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=np.float64)
    flat, inside = cell_indices(points, lower, edges, cells)
    if not np.any(inside):
        raise DensitySupportError("all points fall outside the histogram box")
    mass = np.bincount(flat, weights=w[inside], minlength=math.prod(cells)).reshape(cells)
    clipped = float(w.sum() - w[inside].sum())
    return DensityGrid(lower, edges, mass, clipped)


def gaussian_stencil(h: float) -> np.ndarray:
    """Normalized Gaussian weights of width h cells truncated at radius ceil(3h)."""
    if h <= 0:
        return np.ones(1)
    rad = int(math.ceil(3.0 * h))
    k = np.arange(-rad, rad + 1, dtype=np.float64)
    with np.errstate(over="ignore"):
        w = np.exp(-0.5 * (k / h) ** 2)
    return w / w.sum()


def kde_smooth(grid: DensityGrid, h: float, axes=None) -> DensityGrid:
    """Separable truncated-Gaussian smoothing (h in cells), mass renormalized."""
    if h < 0:
        raise ValueError("bandwidth must be nonnegative")
    if h == 0:
        return grid
    w = gaussian_stencil(h)
    out = grid.mass
    for ax in range(grid.ndim) if axes is None else axes:
        out = ndimage.convolve1d(out, w, axis=ax, mode="constant", cval=0.0)
    total = out.sum()
    if total > 0:
        out = out * (grid.total / total)
    return grid.with_mass(out)


def marginal(grid: DensityGrid, keep) -> DensityGrid:
    """Sum out every axis not listed in ``keep``."""
    keep = sorted(set(int(a) for a in np.atleast_1d(keep)))
    if not keep or keep[0] < 0 or keep[-1] >= grid.ndim:
        raise ValueError(f"invalid axis subset {keep} for a {grid.ndim}-axis grid")
    drop = tuple(a for a in range(grid.ndim) if a not in keep)
    mass = grid.mass.sum(axis=drop) if drop else grid.mass
    return DensityGrid(grid.lower[keep], grid.edges[keep], mass, grid.clipped)


def padded_box(points: np.ndarray, cells: int, pad_cells: float, min_edge: float = 0.0):
    """Bounding box of ``points`` widened so ``pad_cells`` empty cells border it."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    # the slight widening keeps extreme points strictly off the pad boundary
    edge = np.maximum(span / (cells - 2.0 * pad_cells) * (1.0 + 1e-9), min_edge)
    center = 0.5 * (lo + hi)
    return center - 0.5 * cells * edge, center + 0.5 * cells * edge
