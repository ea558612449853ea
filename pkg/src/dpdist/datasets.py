"""Synthetic shape meshes, shape pools, and training-sample generation.

Shapes are built in canonical pose with positive dimensions and then usually
passed through :func:`dpdist.geometry.normalize_mesh` so they sit inside the
0.8-radius ball the learned distance is trained on.  Training batches pair an
independent surface sample (the conditioning cloud) with query points whose
ground-truth surface distances are recomputed exactly from the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import read_off
from .geometry import (
    DegenerateShapeError,
    RigidTransform,
    TriangleMesh,
    normalize_mesh,
    point_mesh_distances,
    sample_mesh_surface,
)

__all__ = [
    "SHAPE_KINDS",
    "DEFAULT_PARAMS",
    "TrainingBatch",
    "make_synthetic_shape",
    "analytic_shape_distance",
    "shape_pool",
    "generate_training_batch",
    "load_mesh_dir",
]

SHAPE_KINDS = ("plane", "sphere", "box", "cylinder", "wedge")

DEFAULT_PARAMS = {
    "plane": (2.0, 2.0),  # width, height (z = 0 patch)
    "sphere": (1.0,),  # radius
    "box": (1.0, 1.0, 1.0),  # edge lengths
    "cylinder": (0.5, 1.0),  # radius, height (axis = z)
    "wedge": (1.0, 0.7, 1.5),  # right-triangle legs a, b and length
}


@dataclass(frozen=True)
class TrainingBatch:
    """Conditioning surface cloud plus labeled distance queries.

    ``tags`` marks each query as 'surface', 'near' (within 0.1 of the
    surface) or 'uniform' (drawn from the [-1, 1]^3 cube); ``gt_distances``
    holds the exact surface distance of each query.
    """

    surface_cloud: np.ndarray
    queries: np.ndarray
    gt_distances: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        n = len(self.queries)
        if not (len(self.gt_distances) == len(self.tags) == n):
            raise ValueError("queries, gt_distances and tags must have equal lengths")
        if np.any(self.gt_distances < 0):
            raise ValueError("ground-truth distances must be nonnegative")


def _grid_patch(corner, du, dv, nu, nv, base_vertices):
    """Append an nu x nv quad grid spanning corner + u*du + v*dv; return triangles."""
    offset = len(base_vertices)
    us = np.linspace(0.0, 1.0, nu + 1)
    vs = np.linspace(0.0, 1.0, nv + 1)
    for u in us:
        for v in vs:
            base_vertices.append(corner + u * du + v * dv)
    tris = []
    stride = nv + 1
    for i in range(nu):
        for j in range(nv):
            a = offset + i * stride + j
            b = a + stride
            tris.extend([(a, b, b + 1), (a, b + 1, a + 1)])
    return tris


def _build_plane(width, height, resolution):
    vertices: list = []
    tris = _grid_patch(
        np.array([-width / 2, -height / 2, 0.0]),
        np.array([width, 0.0, 0.0]),
        np.array([0.0, height, 0.0]),
        resolution,
        resolution,
        vertices,
    )
    return TriangleMesh(np.array(vertices), np.array(tris))


def _build_box(a, b, c, resolution):
    s = max(1, resolution // 3)
    half = np.array([a, b, c]) / 2.0
    vertices: list = []
    tris: list = []
    # One grid patch per face, outward winding not required (distances are unsigned).
    for axis in range(3):
        u_axis, v_axis = (axis + 1) % 3, (axis + 2) % 3
        for sign in (-1.0, 1.0):
            corner = -half.copy()
            corner[axis] = sign * half[axis]
            du = np.zeros(3)
            du[u_axis] = 2 * half[u_axis]
            dv = np.zeros(3)
            dv[v_axis] = 2 * half[v_axis]
            tris.extend(_grid_patch(corner, du, dv, s, s, vertices))
    return TriangleMesh(np.array(vertices), np.array(tris))


def _build_sphere(radius, resolution):
    stacks = max(2, resolution)
    slices = max(3, 2 * resolution)
    vertices = [np.array([0.0, 0.0, radius])]
    for i in range(1, stacks):
        phi = np.pi * i / stacks
        for j in range(slices):
            theta = 2 * np.pi * j / slices
            vertices.append(
                radius * np.array([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)])
            )
    vertices.append(np.array([0.0, 0.0, -radius]))
    south = len(vertices) - 1
    ring = lambda i: 1 + (i - 1) * slices  # first vertex of latitude ring i
    tris = []
    for j in range(slices):
        tris.append((0, ring(1) + j, ring(1) + (j + 1) % slices))
        tris.append((south, ring(stacks - 1) + (j + 1) % slices, ring(stacks - 1) + j))
    for i in range(1, stacks - 1):
        for j in range(slices):
            a = ring(i) + j
            b = ring(i) + (j + 1) % slices
            c = ring(i + 1) + j
            d = ring(i + 1) + (j + 1) % slices
            tris.extend([(a, c, d), (a, d, b)])
    return TriangleMesh(np.array(vertices), np.array(tris))


def _build_cylinder(radius, height, resolution):
    slices = max(3, 2 * resolution)
    rings = max(1, resolution // 3)
    thetas = 2 * np.pi * np.arange(slices) / slices
    vertices: list = []
    for level in np.linspace(-height / 2, height / 2, rings + 1):
        for t in thetas:
            vertices.append(np.array([radius * np.cos(t), radius * np.sin(t), level]))
    tris = []
    for i in range(rings):
        for j in range(slices):
            a = i * slices + j
            b = i * slices + (j + 1) % slices
            c = (i + 1) * slices + j
            d = (i + 1) * slices + (j + 1) % slices
            tris.extend([(a, c, d), (a, d, b)])
    bottom = len(vertices)
    vertices.append(np.array([0.0, 0.0, -height / 2]))
    top = len(vertices)
    vertices.append(np.array([0.0, 0.0, height / 2]))
    last_ring = rings * slices
    for j in range(slices):
        tris.append((bottom, (j + 1) % slices, j))
        tris.append((top, last_ring + j, last_ring + (j + 1) % slices))
    return TriangleMesh(np.array(vertices), np.array(tris))


def _build_wedge(a, b, length):
    # Right triangular prism; the a != b cross-section leaves no rotational
    # symmetry, which keeps registration ground truth unambiguous.
    tri2d = np.array([[0.0, 0.0], [a, 0.0], [0.0, b]])
    tri2d -= tri2d.mean(axis=0)
    z = length / 2
    vertices = np.array([[x, y, -z] for x, y in tri2d] + [[x, y, z] for x, y in tri2d])
    tris = np.array(
        [
            (0, 2, 1),  # bottom
            (3, 4, 5),  # top
            (0, 1, 4), (0, 4, 3),
            (1, 2, 5), (1, 5, 4),
            (2, 0, 3), (2, 3, 5),
        ]
    )
    return TriangleMesh(vertices, tris)


def make_synthetic_shape(kind: str, params=None, resolution: int = 12) -> TriangleMesh:
    """Build a canonical-pose mesh of the given kind.

    ``params`` defaults per kind (see :data:`DEFAULT_PARAMS`); all dimensions
    must be positive.  ``resolution`` controls tessellation density and, for
    curved shapes, the surface approximation error (roughly ``2/resolution``
    for the unit sphere).
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}, expected one of {SHAPE_KINDS}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    p = tuple(float(x) for x in (DEFAULT_PARAMS[kind] if params is None else params))
    if len(p) != len(DEFAULT_PARAMS[kind]):
        raise ValueError(f"{kind} takes {len(DEFAULT_PARAMS[kind])} parameters, got {len(p)}")
    if any(x <= 0 for x in p):
        raise ValueError(f"{kind} dimensions must be positive, got {p}")
    if kind == "plane":
        return _build_plane(*p, resolution)
    if kind == "sphere":
        return _build_sphere(*p, resolution)
    if kind == "box":
        return _build_box(*p, resolution)
    if kind == "cylinder":
        return _build_cylinder(*p, resolution)
    return _build_wedge(*p)


def analytic_shape_distance(kind: str, params, points) -> np.ndarray:
    """Exact distance to the ideal (untessellated) surface in canonical pose.

    Available for sphere, plane and box; used to cross-check the mesh-based
    oracle up to tessellation error.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p = tuple(float(x) for x in params)
    if kind == "sphere":
        return np.abs(np.linalg.norm(pts, axis=1) - p[0])
    if kind == "plane":
        dx = np.maximum(np.abs(pts[:, 0]) - p[0] / 2, 0.0)
        dy = np.maximum(np.abs(pts[:, 1]) - p[1] / 2, 0.0)
        return np.sqrt(dx**2 + dy**2 + pts[:, 2] ** 2)
    if kind == "box":
        q = np.abs(pts) - np.asarray(p) / 2.0
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)
    raise ValueError(f"no analytic distance for kind {kind!r}")


def _random_rotation(rng) -> RigidTransform:
    q = rng.standard_normal(4)
    return RigidTransform(q / np.linalg.norm(q), np.zeros(3))


def shape_pool(kinds, per_kind: int, seed, resolution: int = 12, rotate: bool = True):
    """Normalized meshes with jittered dimensions, ``per_kind`` of each kind.

    Dimension jitter is uniform in +-30% of the defaults; with ``rotate`` each
    mesh also gets an independent uniform random orientation before
    normalization.  Order is deterministic: all meshes of ``kinds[0]`` first.
    """
    rng = np.random.default_rng(seed)
    meshes = []
    for kind in kinds:
        base = np.asarray(DEFAULT_PARAMS[kind])
        for _ in range(per_kind):
            params = base * rng.uniform(0.7, 1.3, size=len(base))
            mesh = make_synthetic_shape(kind, params, resolution)
            if rotate:
                rot = _random_rotation(rng)
                mesh = TriangleMesh(rot.apply(mesh.vertices), mesh.triangles)
            meshes.append(normalize_mesh(mesh))
    return meshes


def generate_training_batch(mesh: TriangleMesh, n: int, seed) -> TrainingBatch:
    """Draw one training batch from a (normalized) mesh.

    Query composition: round(0.5 n) surface points, round(0.25 n) points
    offset from the surface by a random direction scaled uniformly in
    [0, 0.1], remainder uniform in [-1, 1]^3.  Every label is recomputed
    exactly from the mesh, so near-surface labels never exceed 0.1.
    """
    if n < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng(seed)
    n_surface = round(0.5 * n)
    n_near = round(0.25 * n)
    n_uniform = n - n_surface - n_near

    surface_cloud = sample_mesh_surface(mesh, n, rng)
    parts = [sample_mesh_surface(mesh, n_surface, rng)] if n_surface else []
    if n_near:
        base = sample_mesh_surface(mesh, n_near, rng)
        dirs = rng.standard_normal((n_near, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        parts.append(base + dirs * rng.uniform(0.0, 0.1, size=(n_near, 1)))
    if n_uniform:
        parts.append(rng.uniform(-1.0, 1.0, size=(n_uniform, 3)))
    queries = np.concatenate(parts, axis=0)
    gt = point_mesh_distances(queries, mesh)
    tags = np.array(["surface"] * n_surface + ["near"] * n_near + ["uniform"] * n_uniform)
    return TrainingBatch(surface_cloud, queries, gt, tags)


def load_mesh_dir(path):
    """All ``.off`` meshes under a directory, in sorted filename order."""
    files = sorted(Path(path).glob("*.off"))
    if not files:
        raise DegenerateShapeError(f"no .off meshes found under {path}")
    return [read_off(f) for f in files]
