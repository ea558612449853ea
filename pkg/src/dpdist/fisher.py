"""Gaussian-grid Fisher representation of point clouds.

A cloud in [-1, 1]^3 is described against a fixed K^3 lattice of isotropic
Gaussians (uniform prior weights 1/K^3, shared scale sigma).  Per point and
per Gaussian the normalized score derivatives with respect to the mixture
weight (1 value), mean (3) and scale (3) are pooled over the cloud with max,
min and mean, giving 21 channels per cell.  Local k^3 windows of this grid,
zero padded at the boundary, feed the learned point-to-surface distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import as_cloud

__all__ = [
    "FISHER_CHANNELS",
    "GaussianGrid",
    "FisherGrid",
    "LocalPatch",
    "nearest_grid_index",
    "soft_assign",
    "compute_fisher_grid",
    "extract_local_patch",
    "extract_patch_batch",
]

# max / min / mean pooling of the 7 per-point derivative channels
FISHER_CHANNELS = 21

_POINT_CHUNK = 1024


@dataclass(frozen=True)
class GaussianGrid:
    """K^3 lattice of isotropic Gaussians covering [-1, 1]^3.

    Cell (i, j, k) has its center at ``-1 + (index + 0.5) * 2 / size`` per
    axis; all components share the scale ``sigma`` and the uniform mixture
    weight ``1 / size**3``.
    """

    size: int = 8
    sigma: float = 0.125

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("grid size must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def n_gaussians(self) -> int:
        return self.size**3

    @property
    def weight(self) -> float:
        return 1.0 / self.n_gaussians

    def axis_centers(self) -> np.ndarray:
        k = self.size
        return -1.0 + (np.arange(k) + 0.5) * (2.0 / k)

    def centers(self) -> np.ndarray:
        """All G = size^3 centers, C-ordered over (i, j, k) -> (x, y, z)."""
        ax = self.axis_centers()
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


@dataclass(frozen=True)
class FisherGrid:
    """Pooled Fisher representation: ``values`` has shape (K, K, K, 21)."""

    values: np.ndarray
    grid: GaussianGrid
    n_points: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        k = self.grid.size
        if v.shape != (k, k, k, FISHER_CHANNELS):
            raise ValueError(f"values must have shape ({k}, {k}, {k}, {FISHER_CHANNELS}), got {v.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LocalPatch:
    """A k^3 window of a Fisher grid centered on a query's nearest cell."""

    values: np.ndarray
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))

    def flattened(self) -> np.ndarray:
        return np.ascontiguousarray(self.values).ravel()


def nearest_grid_index(points, size: int) -> np.ndarray:
    """Index of the cell whose center is closest to each point, per axis.

    Points outside [-1, 1] clamp to the boundary cells.  A point exactly
    halfway between two centers resolves to the lower index.
    """
    pts = as_cloud(points)
    u = (pts + 1.0) * (size / 2.0) - 0.5
    idx = np.floor(u + 0.5).astype(np.int64)
    idx[u + 0.5 == idx] -= 1  # halfway points take the lower cell
    return np.clip(idx, 0, size - 1)


def soft_assign(points, grid: GaussianGrid) -> np.ndarray:
    """Posterior responsibility of each Gaussian for each point, shape (N, G).

    Rows are proper distributions (nonnegative, summing to 1).  Computed in
    the log domain with a max shift; the uniform mixture weights cancel.
    """
    pts = as_cloud(points)
    centers = grid.centers()
    inv = 1.0 / (2.0 * grid.sigma**2)
    out = np.empty((len(pts), grid.n_gaussians))
    for start in range(0, len(pts), _POINT_CHUNK):
        block = pts[start : start + _POINT_CHUNK]
        diff = block[:, None, :] - centers[None, :, :]
        logits = -np.einsum("pgd,pgd->pg", diff, diff) * inv
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        out[start : start + _POINT_CHUNK] = logits
    return out


def _point_derivatives(pts: np.ndarray, grid: GaussianGrid, gamma: np.ndarray) -> np.ndarray:
    """Per-point normalized score derivatives, shape (N, G, 7).

    Channel layout: weight derivative, then the three mean components, then
    the three scale components.
    """
    centers = grid.centers()
    w = grid.weight
    diff = (pts[:, None, :] - centers[None, :, :]) / grid.sigma
    d = np.empty((len(pts), grid.n_gaussians, 7))
    d[:, :, 0] = (gamma - w) / np.sqrt(w)
    d[:, :, 1:4] = gamma[:, :, None] * diff / np.sqrt(w)
    d[:, :, 4:7] = gamma[:, :, None] * (diff**2 - 1.0) / np.sqrt(2.0 * w)
    return d


def compute_fisher_grid(points, grid: GaussianGrid | None = None) -> FisherGrid:
    """Pool per-point Fisher derivatives over the cloud into a (K, K, K, 21) grid.

    Channels 0-6 are the per-cell maxima of the 7 derivative channels, 7-13
    the minima, 14-20 the means.  Max and min pooling make the result exactly
    invariant to point order; the mean is invariant up to accumulation noise.
    """
    if grid is None:
        grid = GaussianGrid()
    pts = as_cloud(points)
    k, g = grid.size, grid.n_gaussians
    pooled = np.empty((g, FISHER_CHANNELS))
    pooled[:, 0:7] = -np.inf
    pooled[:, 7:14] = np.inf
    pooled[:, 14:21] = 0.0
    for start in range(0, len(pts), _POINT_CHUNK):
        block = pts[start : start + _POINT_CHUNK]
        gamma = soft_assign(block, grid)
        deriv = _point_derivatives(block, grid, gamma)
        np.maximum(pooled[:, 0:7], deriv.max(axis=0), out=pooled[:, 0:7])
        np.minimum(pooled[:, 7:14], deriv.min(axis=0), out=pooled[:, 7:14])
        pooled[:, 14:21] += deriv.sum(axis=0)
    pooled[:, 14:21] /= len(pts)
    return FisherGrid(pooled.reshape(k, k, k, FISHER_CHANNELS), grid, len(pts))


def extract_local_patch(fisher_grid: FisherGrid, point, k: int) -> LocalPatch:
    """The k^3 window of cells around a point's nearest cell, zero padded.

    ``k`` must be odd so the window centers on the anchor cell.  Window cells
    falling outside the grid contribute zeros, so patches near corners and
    faces keep the fixed (k, k, k, 21) shape.
    """
    pts = np.asarray(point, dtype=np.float64).reshape(1, 3)
    values = extract_patch_batch(fisher_grid, pts, k).reshape(k, k, k, FISHER_CHANNELS)
    anchor = nearest_grid_index(pts, fisher_grid.grid.size)[0]
    return LocalPatch(values, anchor)


def extract_patch_batch(fisher_grid: FisherGrid, points, k: int) -> np.ndarray:
    """Zero-padded k^3 windows for many points at once, shape (P, k, k, k, 21)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {k}")
    size = fisher_grid.grid.size
    if k > size:
        raise ValueError(f"patch size {k} exceeds grid size {size}")
    r = k // 2
    padded = np.zeros((size + 2 * r, size + 2 * r, size + 2 * r, FISHER_CHANNELS))
    if r > 0:
        padded[r:-r, r:-r, r:-r] = fisher_grid.values
    else:
        padded[:] = fisher_grid.values
    # Window start in the original grid is anchor - r; in padded coordinates the
    # +r shift cancels it, so the window is padded[anchor : anchor + k] per axis.
    anchors = nearest_grid_index(points, size)
    offs = np.arange(k)
    ix = anchors[:, 0, None, None, None] + offs[None, :, None, None]
    iy = anchors[:, 1, None, None, None] + offs[None, None, :, None]
    iz = anchors[:, 2, None, None, None] + offs[None, None, None, :]
    return padded[ix, iy, iz]
