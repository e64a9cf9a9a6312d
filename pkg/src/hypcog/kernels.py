"""Kernel backend selection.

The compiled Cython module is used when it was built and importable;
otherwise the numpy implementations take over. Setting the environment
variable ``HYPCOG_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("HYPCOG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

poincare_pdist = _impl.poincare_pdist
delta_exact = _impl.delta_exact
delta_quadruples = _impl.delta_quadruples
overlap_energy_grad = _impl.overlap_energy_grad
overlap_energy_grad_pairs = _impl.overlap_energy_grad_pairs
min_pairwise_euclidean = _impl.min_pairwise_euclidean
min_pairwise_poincare = _impl.min_pairwise_poincare
crowding_counts = _impl.crowding_counts

__all__ = [
    "BACKEND",
    "poincare_pdist",
    "delta_exact",
    "delta_quadruples",
    "overlap_energy_grad",
    "overlap_energy_grad_pairs",
    "min_pairwise_euclidean",
    "min_pairwise_poincare",
    "crowding_counts",
]
