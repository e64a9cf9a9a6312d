"""Poincare-ball primitives at the origin.

Points and tangent vectors are plain float64 numpy arrays whose last axis
is the ambient dimension; leading axes are treated as a batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradientError, InvalidInputError, OutOfManifoldError

ZERO_NORM = 1e-12
ATANH_CLAMP = 1.0 - 1e-15


@dataclass(frozen=True)
class BallConfig:
    """Poincare ball of curvature ``-curvature_c`` in ``dim`` dimensions."""

    curvature_c: float = 1.0
    dim: int = 2
    boundary_eps: float = 1e-5

    def __post_init__(self):
        if not (self.curvature_c > 0 and math.isfinite(self.curvature_c)):
            raise InvalidInputError(f"curvature_c must be positive, got {self.curvature_c}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInputError(f"dim must be a positive integer, got {self.dim}")
        if not 0 < self.boundary_eps < 1:
            raise InvalidInputError(f"boundary_eps must lie in (0, 1), got {self.boundary_eps}")

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.curvature_c)

    @property
    def radius(self) -> float:
        """Euclidean radius 1/sqrt(c) of the open ball."""
        return 1.0 / self.sqrt_c

    @property
    def max_norm(self) -> float:
        """Largest norm any constructed point may have."""
        return (1.0 - self.boundary_eps) / self.sqrt_c


def _as_vectors(cfg: BallConfig, v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != cfg.dim:
        raise InvalidInputError(f"{name} must have trailing dimension {cfg.dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _check_inside(cfg: BallConfig, z: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(z, axis=-1)
    if np.any(norms >= cfg.radius):
        raise OutOfManifoldError(
            f"{name} lies outside the ball: norm {float(np.max(norms))} >= {cfg.radius}"
        )
    return norms


def project_to_ball(cfg: BallConfig, v) -> np.ndarray:
    """Rescale vectors whose norm exceeds ``cfg.max_norm`` onto that radius."""
    v = _as_vectors(cfg, v, "v")
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    limit = cfg.max_norm
    scale = np.where(norms > limit, limit / np.where(norms > 0, norms, 1.0), 1.0)
    return v * scale


def exp_map_origin(cfg: BallConfig, x) -> np.ndarray:
    x = _as_vectors(cfg, x, "x")
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    small = norms < ZERO_NORM
    safe = np.where(small, 1.0, norms)
    scn = cfg.sqrt_c * safe
    z = np.where(small, 0.0, np.tanh(scn) * x / scn)
    return project_to_ball(cfg, z)


def log_map_origin(cfg: BallConfig, z) -> np.ndarray:
    z = _as_vectors(cfg, z, "z")
    norms = _check_inside(cfg, z, "z")[..., None]
    small = norms < ZERO_NORM
    safe = np.where(small, 1.0, norms)
    arg = np.minimum(cfg.sqrt_c * safe, ATANH_CLAMP)
    return np.where(small, 0.0, np.arctanh(arg) * z / (cfg.sqrt_c * safe))


def _distance_parts(cfg: BallConfig, z1: np.ndarray, z2: np.ndarray):
    c = cfg.curvature_c
    n1 = _check_inside(cfg, z1, "z1")
    n2 = _check_inside(cfg, z2, "z2")
    diff = z1 - z2
    sq = np.sum(diff * diff, axis=-1)
    alpha = 1.0 - c * n1 * n1
    beta = 1.0 - c * n2 * n2
    # arccosh(1 + t) with t = u - 1 kept separately for precision near zero.
    t = np.maximum(2.0 * c * sq / (alpha * beta), 0.0)
    return diff, sq, alpha, beta, t


def poincare_distance(cfg: BallConfig, z1, z2):
    """Geodesic distance; broadcasts over leading axes."""
    z1 = _as_vectors(cfg, z1, "z1")
    z2 = _as_vectors(cfg, z2, "z2")
    *_, t = _distance_parts(cfg, z1, z2)
    d = np.log1p(t + np.sqrt(t * (t + 2.0))) / cfg.sqrt_c
    return float(d) if np.ndim(d) == 0 else d


def distance_grad(cfg: BallConfig, z1, z2) -> tuple[np.ndarray, np.ndarray]:
    """Ambient-coordinate gradients of the distance w.r.t. ``z1`` and ``z2``.

    The distance is not differentiable where the points coincide, so that
    case raises :class:`DegenerateGradientError` instead of returning NaN.
    """
    z1 = _as_vectors(cfg, z1, "z1")
    z2 = _as_vectors(cfg, z2, "z2")
    c = cfg.curvature_c
    diff, sq, alpha, beta, t = _distance_parts(cfg, z1, z2)
    if np.any(sq == 0.0):
        raise DegenerateGradientError("distance gradient undefined for coincident points")
    # dd/du = 1 / (sqrt(c) * sqrt(u^2 - 1)) with u^2 - 1 = t (t + 2)
    dd_du = 1.0 / (cfg.sqrt_c * np.sqrt(t * (t + 2.0)))
    ab = (alpha * beta)[..., None]
    sq_ = sq[..., None]
    du_dz1 = (4.0 * c / ab) * (diff + c * sq_ * z1 / alpha[..., None])
    du_dz2 = (4.0 * c / ab) * (-diff + c * sq_ * z2 / beta[..., None])
    return dd_du[..., None] * du_dz1, dd_du[..., None] * du_dz2


def pairwise_distances(cfg: BallConfig, points) -> np.ndarray:
    """Full symmetric distance matrix of a point cloud inside the ball."""
    from . import kernels

    pts = _as_vectors(cfg, points, "points")
    if pts.ndim != 2:
        raise InvalidInputError("points must be a 2-D array (n, dim)")
    _check_inside(cfg, pts, "points")
    return kernels.poincare_pdist(np.ascontiguousarray(pts), cfg.curvature_c)
