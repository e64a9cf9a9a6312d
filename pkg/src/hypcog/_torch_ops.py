"""Differentiable torch twins of the numpy Poincare primitives."""
from __future__ import annotations

import math

import torch

from .poincare import ATANH_CLAMP, ZERO_NORM, BallConfig

# keeps the arccosh derivative finite at coincident points
_T_FLOOR = 1e-15


def project(cfg: BallConfig, v: torch.Tensor) -> torch.Tensor:
    norms = v.norm(dim=-1, keepdim=True)
    limit = cfg.max_norm
    scale = torch.where(norms > limit, limit / norms.clamp_min(ZERO_NORM), torch.ones_like(norms))
    return v * scale


def exp0(cfg: BallConfig, x: torch.Tensor) -> torch.Tensor:
    sc = math.sqrt(cfg.curvature_c)
    norms = x.norm(dim=-1, keepdim=True)
    small = norms < ZERO_NORM
    safe = torch.where(small, torch.ones_like(norms), norms)
    z = torch.tanh(sc * safe) * x / (sc * safe)
    return project(cfg, torch.where(small, torch.zeros_like(z), z))


def log0(cfg: BallConfig, z: torch.Tensor) -> torch.Tensor:
    sc = math.sqrt(cfg.curvature_c)
    norms = z.norm(dim=-1, keepdim=True)
    small = norms < ZERO_NORM
    safe = torch.where(small, torch.ones_like(norms), norms)
    arg = (sc * safe).clamp_max(ATANH_CLAMP)
    out = torch.atanh(arg) * z / (sc * safe)
    return torch.where(small, torch.zeros_like(out), out)


def pairwise_distance(cfg: BallConfig, z: torch.Tensor) -> torch.Tensor:
    """(..., n, d) -> (..., n, n) Poincare distances."""
    c = cfg.curvature_c
    sq_norm = (z * z).sum(-1)
    diff = z.unsqueeze(-2) - z.unsqueeze(-3)
    sq = (diff * diff).sum(-1)
    denom = (1.0 - c * sq_norm).unsqueeze(-1) * (1.0 - c * sq_norm).unsqueeze(-2)
    t = (2.0 * c * sq / denom).clamp_min(_T_FLOOR)
    return torch.log1p(t + torch.sqrt(t * (t + 2.0))) / math.sqrt(c)
