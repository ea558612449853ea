"""Point-cloud comparison toolkit.

Exact classical set distances (Chamfer, Hausdorff, partial Hausdorff, earth
mover's), a learned point-to-surface distance built on a Gaussian-grid Fisher
representation, and desk-scale benchmark harnesses for detection,
identification, registration and distance-field inspection.
"""

__version__ = "0.1.0"

from .distances import (
    chamfer_distance,
    earth_movers_distance,
    hausdorff_distance,
    nn_distances,
    partial_hausdorff_distance,
)
from .evaluation import dpdist, field_slice, register
from .fisher import FisherGrid, GaussianGrid, compute_fisher_grid, extract_local_patch
from .geometry import (
    RigidTransform,
    TriangleMesh,
    apply_transform,
    as_cloud,
    farthest_point_sampling,
    normalize_mesh,
    point_mesh_distance,
    sample_mesh_surface,
)
from .network import MlpModel, TrainConfig, gradient_check, train

__all__ = [
    "__version__",
    "as_cloud",
    "TriangleMesh",
    "RigidTransform",
    "apply_transform",
    "point_mesh_distance",
    "sample_mesh_surface",
    "farthest_point_sampling",
    "normalize_mesh",
    "chamfer_distance",
    "hausdorff_distance",
    "partial_hausdorff_distance",
    "earth_movers_distance",
    "nn_distances",
    "GaussianGrid",
    "FisherGrid",
    "compute_fisher_grid",
    "extract_local_patch",
    "MlpModel",
    "TrainConfig",
    "train",
    "gradient_check",
    "dpdist",
    "register",
    "field_slice",
]
