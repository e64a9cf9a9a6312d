"""Hyperbolic geometry toolkit for hierarchical cognitive-state modeling."""

__version__ = "0.1.0"

from .poincare import (  # noqa: E402
    BallConfig,
    distance_grad,
    exp_map_origin,
    log_map_origin,
    pairwise_distances,
    poincare_distance,
    project_to_ball,
)

__all__ = [
    "__version__",
    "BallConfig",
    "distance_grad",
    "exp_map_origin",
    "log_map_origin",
    "pairwise_distances",
    "poincare_distance",
    "project_to_ball",
]
