"""Geometric primitives: point clouds, triangle meshes, rigid transforms,
exact point-to-surface distances and surface sampling.

Conventions used throughout the package: a point cloud is an (N, 3) float64
array with stable row order; a mesh is an indexed triangle soup.  Coordinates
live in normalized model space (shapes are scaled to a maximum vertex norm of
0.8, see :func:`normalize_mesh`), but nothing here assumes normalization.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from itertools import product

import numpy as np

__all__ = [
    "EmptySurfaceError",
    "DegenerateShapeError",
    "InvalidTransformError",
    "TriangleMesh",
    "RigidTransform",
    "as_cloud",
    "apply_transform",
    "point_triangle_distance",
    "point_mesh_distance",
    "point_mesh_distances",
    "MeshDistanceIndex",
    "sample_mesh_surface",
    "farthest_point_sampling",
    "normalize_mesh",
    "random_rigid_transform",
    "DIRECTIONS_26",
]

QUAT_TOL = 1e-6


class EmptySurfaceError(ValueError):
    """Raised when a distance query targets a mesh without triangles."""


class DegenerateShapeError(ValueError):
    """Raised when a mesh has no usable area or extent."""


class InvalidTransformError(ValueError):
    """Raised when a rigid transform carries a non-unit quaternion."""


def as_cloud(points) -> np.ndarray:
    """Validate ``points`` and return it as an (N, 3) float64 array, N >= 1."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("point cloud must contain at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup: ``vertices`` (V, 3) float64, ``triangles`` (T, 3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must have shape (T, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices contain non-finite coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self):
        """Return the three (T, 3) corner arrays of all triangles."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        v0, v1, v2 = self.corners()
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, w-first) followed by a translation."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise InvalidTransformError("transform contains non-finite values")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            if angle_rad != 0.0:
                raise ValueError("rotation axis must be nonzero for a nonzero angle")
            return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.asarray(translation, dtype=np.float64))
        axis = axis / norm
        half = 0.5 * angle_rad
        q = np.concatenate(([np.cos(half)], np.sin(half) * axis))
        return cls(q, np.asarray(translation, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        q = self.quaternion
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUAT_TOL:
            raise InvalidTransformError(f"quaternion norm {norm:.9g} deviates from 1 beyond {QUAT_TOL}")
        w, x, y, z = q / norm
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, points) -> np.ndarray:
        pts = as_cloud(points)
        return pts @ self.rotation_matrix().T + self.translation

    def inverse(self) -> "RigidTransform":
        r = self.rotation_matrix()
        q = self.quaternion / np.linalg.norm(self.quaternion)
        q_conj = np.array([q[0], -q[1], -q[2], -q[3]])
        return RigidTransform(q_conj, -(r.T @ self.translation))


def apply_transform(cloud, transform: RigidTransform) -> np.ndarray:
    """Apply a rigid transform to a cloud; preserves size and pairwise distances."""
    return transform.apply(cloud)


def _point_triangle_dist_sq(points: np.ndarray, v0, v1, v2) -> np.ndarray:
    """Squared distances from each of P points to each of T closed triangles.

    The closest point on a triangle is either the in-plane projection (when its
    barycentric coordinates are all nonnegative) or a point on one of the three
    boundary segments; taking the minimum over those four candidates is exact
    and covers degenerate (zero-area) triangles through the segment terms.
    """
    e0 = v1 - v0
    e1 = v2 - v0
    d00 = np.einsum("td,td->t", e0, e0)
    d01 = np.einsum("td,td->t", e0, e1)
    d11 = np.einsum("td,td->t", e1, e1)
    denom = d00 * d11 - d01 * d01

    w = points[:, None, :] - v0[None, :, :]
    d20 = np.einsum("ptd,td->pt", w, e0)
    d21 = np.einsum("ptd,td->pt", w, e1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bv = (d11 * d20 - d01 * d21) / denom
        bw = (d00 * d21 - d01 * d20) / denom
    inside = (denom > 0) & (bv >= 0) & (bw >= 0) & (bv + bw <= 1)

    diff = w - bv[..., None] * e0 - bw[..., None] * e1
    plane_sq = np.einsum("ptd,ptd->pt", diff, diff)
    d_sq = np.where(inside, plane_sq, np.inf)

    for a, edge in ((v0, e0), (v0, e1), (v1, v2 - v1)):
        seg_len_sq = np.einsum("td,td->t", edge, edge)
        pa = points[:, None, :] - a[None, :, :]
        t_num = np.einsum("ptd,td->pt", pa, edge)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_par = np.where(seg_len_sq > 0, t_num / seg_len_sq, 0.0)
        t_par = np.clip(t_par, 0.0, 1.0)
        closest = pa - t_par[..., None] * edge
        d_sq = np.minimum(d_sq, np.einsum("ptd,ptd->pt", closest, closest))
    return d_sq


def point_triangle_distance(p, v0, v1, v2) -> float:
    """Exact Euclidean distance from a point to a closed (possibly degenerate) triangle."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    tri = [np.asarray(v, dtype=np.float64).reshape(1, 3) for v in (v0, v1, v2)]
    return float(np.sqrt(_point_triangle_dist_sq(p, *tri)[0, 0]))


def point_mesh_distances(points, mesh: TriangleMesh, chunk: int = 0) -> np.ndarray:
    """Exact distances from each point to the mesh surface (brute force over triangles).

    ``chunk`` caps the number of query points per vectorized block; 0 picks a
    size keeping the (P_chunk x T) buffers around a few million entries.
    """
    pts = as_cloud(points)
    if mesh.n_triangles == 0:
        raise EmptySurfaceError("mesh has no triangles")
    v0, v1, v2 = mesh.corners()
    if chunk <= 0:
        chunk = max(1, int(2_000_000 // max(1, mesh.n_triangles)))
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        block = pts[start : start + chunk]
        out[start : start + chunk] = np.sqrt(_point_triangle_dist_sq(block, v0, v1, v2).min(axis=1))
    return out


def point_mesh_distance(p, mesh: TriangleMesh) -> float:
    """Exact distance from one point to the mesh surface (brute-force path)."""
    return float(point_mesh_distances(np.asarray(p, dtype=np.float64).reshape(1, 3), mesh)[0])


class MeshDistanceIndex:
    """Axis-aligned bounding-box tree over mesh triangles.

    Accelerated exact nearest-surface queries: best-first traversal with AABB
    lower bounds, exact triangle distances at the leaves.  Results match the
    brute-force path (same per-triangle kernel, same minimum).
    """

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 8):
        if mesh.n_triangles == 0:
            raise EmptySurfaceError("mesh has no triangles")
        self.mesh = mesh
        self._corners = mesh.corners()
        v0, v1, v2 = self._corners
        tri_lo = np.minimum(np.minimum(v0, v1), v2)
        tri_hi = np.maximum(np.maximum(v0, v1), v2)
        centroids = (v0 + v1 + v2) / 3.0

        self._node_lo: list[np.ndarray] = []
        self._node_hi: list[np.ndarray] = []
        self._node_children: list[tuple[int, int] | None] = []
        self._node_tris: list[np.ndarray | None] = []

        def build(tri_idx: np.ndarray) -> int:
            node = len(self._node_lo)
            self._node_lo.append(tri_lo[tri_idx].min(axis=0))
            self._node_hi.append(tri_hi[tri_idx].max(axis=0))
            self._node_children.append(None)
            self._node_tris.append(None)
            if len(tri_idx) <= leaf_size:
                self._node_tris[node] = tri_idx
                return node
            cent = centroids[tri_idx]
            axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
            order = np.argsort(cent[:, axis], kind="stable")
            half = len(tri_idx) // 2
            left = build(tri_idx[order[:half]])
            right = build(tri_idx[order[half:]])
            self._node_children[node] = (left, right)
            return node

        build(np.arange(mesh.n_triangles))

    def _box_dist_sq(self, node: int, p: np.ndarray) -> float:
        d = np.maximum(self._node_lo[node] - p, 0.0) + np.maximum(p - self._node_hi[node], 0.0)
        return float(d @ d)

    def query(self, points) -> np.ndarray:
        """Exact surface distances for each query point."""
        pts = as_cloud(points)
        v0, v1, v2 = self._corners
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            best = np.inf
            heap = [(self._box_dist_sq(0, p), 0)]
            row = p.reshape(1, 3)
            while heap:
                bound, node = heapq.heappop(heap)
                if bound >= best:
                    break
                tris = self._node_tris[node]
                if tris is not None:
                    d = _point_triangle_dist_sq(row, v0[tris], v1[tris], v2[tris]).min()
                    best = min(best, float(d))
                else:
                    for child in self._node_children[node]:
                        child_bound = self._box_dist_sq(child, p)
                        if child_bound < best:
                            heapq.heappush(heap, (child_bound, child))
            out[i] = np.sqrt(best)
        return out


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed) -> np.ndarray:
    """Uniform area-weighted surface sample of ``n`` points; deterministic per seed.

    Degenerate triangles carry zero area weight and are never drawn.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise DegenerateShapeError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(mesh.n_triangles, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    v0, v1, v2 = mesh.corners()
    return v0[idx] + u[:, None] * (v1 - v0)[idx] + v[:, None] * (v2 - v0)[idx]


def farthest_point_sampling(cloud, m: int, seed=None, start: int | None = None) -> np.ndarray:
    """Greedy farthest-point subsampling; returns ``m`` indices into the cloud.

    The first index comes from the seeded RNG (or ``start`` when given); every
    following index maximizes the minimum distance to the already-selected set,
    with ties broken towards the lowest index.
    """
    pts = as_cloud(cloud)
    n = len(pts)
    if m > n:
        raise ValueError(f"cannot select {m} points from a cloud of {n}")
    if m < 1:
        raise ValueError("m must be >= 1")
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    elif not 0 <= start < n:
        raise ValueError("start index out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    min_d = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_d))  # argmax takes the first (lowest) index on ties
        selected[i] = nxt
        np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1), out=min_d)
    return selected


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale the max vertex norm to 0.8."""
    if mesh.n_vertices < 1:
        raise DegenerateShapeError("mesh has no vertices")
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    centered = v - center
    max_norm = np.linalg.norm(centered, axis=1).max()
    if max_norm == 0.0:
        raise DegenerateShapeError("all vertices coincide")
    return TriangleMesh(centered * (0.8 / max_norm), mesh.triangles)


# The 26 nonzero sign vectors (-1/0/1 per axis), in a fixed deterministic order.
DIRECTIONS_26 = np.array([s for s in product((-1.0, 0.0, 1.0), repeat=3) if any(s)])


def _random_unit(rng) -> np.ndarray:
    while True:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def random_rigid_transform(
    kind: str,
    *,
    magnitude: float | None = None,
    angle_deg: float | None = None,
    rotation_range_deg: float = 45.0,
    translation_range: float = 0.1,
    seed=None,
    direction=None,
) -> RigidTransform:
    """Draw a rigid transform for the benchmark protocols.

    ``translation26``: translation of length ``magnitude`` along one of the 26
    sign directions (normalized), identity rotation.  ``rotation26``: rotation
    by ``angle_deg`` about one of the 26 directions.  ``registration``: rotation
    uniform in +-``rotation_range_deg`` about a random unit axis plus a
    translation uniform in +-``translation_range`` along an independent random
    unit direction.  ``direction`` overrides the randomly drawn axis for the
    26-direction kinds.
    """
    rng = np.random.default_rng(seed)
    if kind == "translation26":
        if magnitude is None or magnitude < 0:
            raise ValueError("translation26 requires magnitude >= 0")
        d = _pick_direction(rng, direction)
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), d * magnitude)
    if kind == "rotation26":
        if angle_deg is None:
            raise ValueError("rotation26 requires angle_deg")
        d = _pick_direction(rng, direction)
        return RigidTransform.from_axis_angle(d, np.deg2rad(angle_deg))
    if kind == "registration":
        axis = _random_unit(rng)
        angle = rng.uniform(-rotation_range_deg, rotation_range_deg)
        t_dir = _random_unit(rng)
        t_mag = rng.uniform(-translation_range, translation_range)
        return RigidTransform.from_axis_angle(axis, np.deg2rad(angle), t_dir * t_mag)
    raise ValueError(f"unknown transform kind: {kind!r}")


def _pick_direction(rng, direction) -> np.ndarray:
    if direction is None:
        d = DIRECTIONS_26[rng.integers(len(DIRECTIONS_26))]
    else:
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        if not np.linalg.norm(d) > 0:
            raise ValueError("direction must be nonzero")
    return d / np.linalg.norm(d)
