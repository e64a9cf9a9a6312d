"""Pure-numpy versions of the hot kernels in ``_kernels.pyx``.

Each function has the same signature as its compiled twin. The delta scans
return bit-identical values; kernels that accumulate sums over coordinates
or pairs agree to rounding only. ``hypcog.kernels`` picks one at import time.
"""
from __future__ import annotations

import math

import numpy as np

_CHUNK = 512


def _poincare_t(a: np.ndarray, b: np.ndarray, c: float) -> np.ndarray:
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    alpha = 1.0 - c * np.sum(a * a, axis=-1)
    beta = 1.0 - c * np.sum(b * b, axis=-1)
    return np.maximum(2.0 * c * sq / (alpha[:, None] * beta[None, :]), 0.0)


def _t_to_dist(t, c: float):
    return np.log1p(t + np.sqrt(t * (t + 2.0))) / math.sqrt(c)


def poincare_pdist(pts: np.ndarray, c: float) -> np.ndarray:
    n = pts.shape[0]
    out = np.empty((n, n))
    for s in range(0, n, _CHUNK):
        out[s:s + _CHUNK] = _t_to_dist(_poincare_t(pts[s:s + _CHUNK], pts, c), c)
    np.fill_diagonal(out, 0.0)
    # enforce exact symmetry
    iu = np.triu_indices(n, 1)
    out[(iu[1], iu[0])] = out[iu]
    return out


def delta_exact(dist: np.ndarray, i_start: int = 0, i_stop: int = -1) -> tuple[float, int]:
    """Max four-point value over quadruples i<j<k<l with i in [i_start, i_stop)."""
    n = dist.shape[0]
    if n < 4:
        return 0.0, 0
    if i_stop < 0 or i_stop > n - 3:
        i_stop = n - 3
    best = 0.0
    count = 0
    ks_all, ls_all = np.triu_indices(n, 1)
    for i in range(i_start, i_stop):
        for j in range(i + 1, n - 2):
            keep = ks_all > j
            ks, ls = ks_all[keep], ls_all[keep]
            s1 = dist[i, j] + dist[ks, ls]
            s2 = dist[i, ks] + dist[j, ls]
            s3 = dist[i, ls] + dist[j, ks]
            s = np.sort(np.stack([s1, s2, s3]), axis=0)
            val = float(np.max((s[2] - s[1]) / 2.0))
            count += ks.size
            if val > best:
                best = val
    return best, count


def delta_quadruples(dist: np.ndarray, quads: np.ndarray) -> float:
    if quads.shape[0] == 0:
        return 0.0
    w, x, y, z = quads.T
    s1 = dist[w, x] + dist[y, z]
    s2 = dist[w, y] + dist[x, z]
    s3 = dist[w, z] + dist[x, y]
    s = np.sort(np.stack([s1, s2, s3]), axis=0)
    return max(0.0, float(np.max((s[2] - s[1]) / 2.0)))


def overlap_energy_grad(pts: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Energy sum_{i<j} max(0, eps - |p_i - p_j|)^2 and its gradient."""
    n = pts.shape[0]
    grad = np.zeros_like(pts)
    energy = 0.0
    for s in range(0, n, _CHUNK):
        block = pts[s:s + _CHUNK]
        diff = block[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=-1))
        rows = np.arange(block.shape[0])
        d[rows, rows + s] = np.inf
        gap = np.maximum(eps - d, 0.0)
        energy += 0.5 * float(np.sum(gap * gap))
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(gap > 0, -2.0 * gap / np.where(d > 0, d, 1.0), 0.0)
        grad[s:s + _CHUNK] = np.einsum("ij,ijk->ik", coef, diff)
    return energy, grad


def min_pairwise_euclidean(pts: np.ndarray) -> float:
    n = pts.shape[0]
    if n < 2:
        return math.inf
    best = math.inf
    for s in range(0, n, _CHUNK):
        block = pts[s:s + _CHUNK]
        sq = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        rows = np.arange(block.shape[0])
        sq[rows, rows + s] = np.inf
        best = min(best, float(np.min(sq)))
    return math.sqrt(best)


def min_pairwise_poincare(pts: np.ndarray, c: float) -> float:
    n = pts.shape[0]
    if n < 2:
        return math.inf
    best = math.inf
    for s in range(0, n, _CHUNK):
        t = _poincare_t(pts[s:s + _CHUNK], pts, c)
        rows = np.arange(t.shape[0])
        t[rows, rows + s] = np.inf
        best = min(best, float(np.min(t)))
    return float(_t_to_dist(best, c))


def crowding_counts(pts: np.ndarray, labels: np.ndarray, eps: float, c: float) -> tuple[int, int]:
    """(distinct-label pairs, distinct-label pairs closer than eps); c <= 0 means Euclidean."""
    n = pts.shape[0]
    total = 0
    crowded = 0
    for s in range(0, n, _CHUNK):
        block = pts[s:s + _CHUNK]
        if c > 0:
            d = _t_to_dist(_poincare_t(block, pts, c), c)
        else:
            d = np.sqrt(np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1))
        rows = np.arange(block.shape[0])[:, None] + s
        cols = np.arange(n)[None, :]
        mask = (cols > rows) & (labels[s:s + _CHUNK, None] != labels[None, :])
        total += int(np.count_nonzero(mask))
        crowded += int(np.count_nonzero(mask & (d < eps)))
    return total, crowded


def overlap_energy_grad_pairs(pts: np.ndarray, pairs: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Same energy as :func:`overlap_energy_grad` restricted to candidate ``pairs``."""
    grad = np.zeros_like(pts)
    if pairs.shape[0] == 0:
        return 0.0, grad
    i, j = pairs[:, 0], pairs[:, 1]
    diff = pts[i] - pts[j]
    d = np.sqrt(np.sum(diff * diff, axis=1))
    gap = np.maximum(eps - d, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where((gap > 0) & (d > 0), -2.0 * gap / np.where(d > 0, d, 1.0), 0.0)
    contrib = coef[:, None] * diff
    np.add.at(grad, i, contrib)
    np.add.at(grad, j, -contrib)
    return float(np.sum(gap * gap)), grad
