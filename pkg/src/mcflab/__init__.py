"""Mean curvature flow laboratory: discrete flows in Euclidean and curved ambients,
Gaussian-density functionals, entropy, and monotonicity verification."""

__version__ = "0.1.0"

from .ambient import CliffordTorus, Euclidean, ImplicitHypersurface, RoundSphere, ambient_from_spec
from .flow import FlowConfig, FlowTrajectory, rescale_trajectory, run_flow, step
from .functionals import (
    EntropyOptions,
    F_functional,
    F_gradient,
    J_quantity,
    SpacetimePoint,
    entropy,
    gaussian_density_u,
    shrinker_residual,
)
from .geometry import TriMesh, apply_normal_graph, mean_curvature_vector, mesh_metrics

__all__ = [
    "CliffordTorus",
    "EntropyOptions",
    "Euclidean",
    "F_functional",
    "F_gradient",
    "FlowConfig",
    "FlowTrajectory",
    "ImplicitHypersurface",
    "J_quantity",
    "RoundSphere",
    "SpacetimePoint",
    "TriMesh",
    "ambient_from_spec",
    "apply_normal_graph",
    "entropy",
    "gaussian_density_u",
    "mean_curvature_vector",
    "mesh_metrics",
    "rescale_trajectory",
    "run_flow",
    "shrinker_residual",
    "step",
]
