"""Gromov delta-hyperbolicity of finite metric samples (four-point condition)."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kernels
from .errors import InvalidInputError, InvalidMetricError, OutOfManifoldError, SchemaError
from .poincare import BallConfig, pairwise_distances

TRIANGLE_TOL = 1e-9
EXHAUSTIVE_TRIANGLE_MAX_N = 200
DEFAULT_NUM_QUADRUPLES = 200_000
DEFAULT_SEED = 42
# Quadruples are drawn in fixed-size chunks, each with its own stream seeded by
# (seed, chunk index), so the result does not depend on the worker count.
SAMPLE_CHUNK = 65_536


@dataclass(frozen=True)
class MetricSample:
    dist: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.dist, dtype=np.float64)
        object.__setattr__(self, "dist", d)
        validate_metric(d)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def scaled(self, s: float) -> "MetricSample":
        return MetricSample(self.dist * s)

    def permuted(self, perm) -> "MetricSample":
        perm = np.asarray(perm)
        return MetricSample(self.dist[np.ix_(perm, perm)])


@dataclass(frozen=True)
class DeltaReport:
    delta: float
    diameter: float
    relative_delta: float
    mode: str
    quadruples_evaluated: int
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)


def validate_metric(d: np.ndarray, seed: int = 0) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InvalidMetricError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InvalidMetricError("distance matrix contains non-finite entries")
    if np.any(d < 0):
        raise InvalidMetricError("distance matrix has negative entries")
    if np.any(np.diag(d) != 0):
        raise InvalidMetricError("distance matrix diagonal must be zero")
    if not np.array_equal(d, d.T):
        i, j = np.argwhere(d != d.T)[0]
        raise InvalidMetricError(f"distance matrix is not symmetric at ({i}, {j})")
    n = d.shape[0]
    if n < 3:
        return
    if n <= EXHAUSTIVE_TRIANGLE_MAX_N:
        for k in range(n):
            via = d[:, k][:, None] + d[k, :][None, :]
            if np.any(d > via + TRIANGLE_TOL):
                i, j = np.argwhere(d > via + TRIANGLE_TOL)[0]
                raise InvalidMetricError(f"triangle inequality fails for ({i}, {k}, {j})")
    else:
        rng = np.random.default_rng(seed)
        tri = rng.integers(0, n, size=(10 * n, 3))
        i, j, k = tri.T
        bad = d[i, j] > d[i, k] + d[k, j] + TRIANGLE_TOL
        if np.any(bad):
            a, b, c = tri[np.argmax(bad)]
            raise InvalidMetricError(f"triangle inequality fails for ({a}, {c}, {b})")


def _report(delta: float, s: MetricSample, mode: str, count: int, seed=None) -> DeltaReport:
    diameter = float(np.max(s.dist)) if s.n else 0.0
    rel = 2.0 * delta / diameter if diameter > 0 else 0.0
    return DeltaReport(float(delta), diameter, rel, mode, int(count), seed)


def gromov_delta_exact(s: MetricSample, workers: int = 1) -> DeltaReport:
    """Maximum four-point value over every unordered quadruple.

    Work is split by the smallest quadruple index; the max-reduction makes
    the result independent of ``workers``.
    """
    n = s.n
    if n < 4:
        return _report(0.0, s, "exact", 0)
    if workers <= 1:
        delta, count = kernels.delta_exact(s.dist)
    else:
        # balance roughly by the number of quadruples each leading index owns
        weights = np.array([math.comb(n - 1 - i, 3) for i in range(n - 3)], dtype=float)
        cuts = np.searchsorted(np.cumsum(weights) / weights.sum(), np.linspace(0, 1, workers + 1)[1:-1])
        bounds = [0, *sorted(set(int(c) + 1 for c in cuts)), n - 3]
        spans = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: kernels.delta_exact(s.dist, ab[0], ab[1]), spans))
        delta = max(p[0] for p in parts)
        count = sum(p[1] for p in parts)
    return _report(delta, s, "exact", count)


def _sample_chunk(n: int, size: int, seed: int, chunk: int) -> np.ndarray:
    rng = np.random.default_rng([seed, chunk])
    out = np.empty((0, 4), dtype=np.int64)
    while out.shape[0] < size:
        q = rng.integers(0, n, size=(2 * (size - out.shape[0]) + 16, 4), dtype=np.int64)
        srt = np.sort(q, axis=1)
        distinct = np.all(srt[:, 1:] != srt[:, :-1], axis=1)
        out = np.concatenate([out, q[distinct]])
    return np.ascontiguousarray(out[:size])


def sample_quadruples(n: int, num_quadruples: int, seed: int) -> np.ndarray:
    """Deterministic (num_quadruples, 4) array of distinct-index quadruples."""
    chunks = [
        _sample_chunk(n, min(SAMPLE_CHUNK, num_quadruples - start), seed, ci)
        for ci, start in enumerate(range(0, num_quadruples, SAMPLE_CHUNK))
    ]
    return np.concatenate(chunks) if chunks else np.empty((0, 4), dtype=np.int64)


def gromov_delta_sampled(
    s: MetricSample,
    num_quadruples: int = DEFAULT_NUM_QUADRUPLES,
    seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> DeltaReport:
    if num_quadruples < 1:
        raise InvalidInputError("num_quadruples must be >= 1")
    n = s.n
    if n < 4:
        return _report(0.0, s, "sampled", 0, seed)
    starts = list(range(0, num_quadruples, SAMPLE_CHUNK))

    def run(ci: int) -> float:
        size = min(SAMPLE_CHUNK, num_quadruples - starts[ci])
        return kernels.delta_quadruples(s.dist, _sample_chunk(n, size, seed, ci))

    if workers <= 1:
        parts = [run(ci) for ci in range(len(starts))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    return _report(max(parts), s, "sampled", num_quadruples, seed)


def metric_from_embeddings(points, space: Union[str, BallConfig] = "euclidean") -> MetricSample:
    """Pairwise distance matrix of ``points`` under Euclidean or Poincare geometry.

    ``space`` is either ``"euclidean"`` or a :class:`BallConfig`.
    """
    if len(points) == 0:
        return MetricSample(np.zeros((0, 0)))
    lengths = {len(p) for p in points}
    if len(lengths) != 1:
        raise InvalidInputError(f"embedding dimension mismatch: lengths {sorted(lengths)}")
    x = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("embeddings contain non-finite entries")
    if isinstance(space, BallConfig):
        if x.shape[1] != space.dim:
            space = BallConfig(space.curvature_c, x.shape[1], space.boundary_eps)
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms >= space.radius):
            raise OutOfManifoldError(f"point {int(np.argmax(norms))} lies outside the Poincare ball")
        d = pairwise_distances(space, x)
    elif space == "euclidean":
        d = _euclidean_pdist(x)
    else:
        raise InvalidInputError(f"unknown space {space!r}")
    np.fill_diagonal(d, 0.0)
    return MetricSample(d)


def _euclidean_pdist(x: np.ndarray, chunk: int = 256) -> np.ndarray:
    n = x.shape[0]
    d = np.empty((n, n))
    for s in range(0, n, chunk):
        diff = x[s:s + chunk, None, :] - x[None, :, :]
        d[s:s + chunk] = np.sqrt(np.sum(diff * diff, axis=-1))
    d = np.triu(d, 1)
    return d + d.T


def read_distance_csv(path) -> MetricSample:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise SchemaError(f"non-numeric entry ({exc})", line=lineno) from None
    if rows and any(len(r) != len(rows) for r in rows):
        raise InvalidMetricError("distance CSV must have n rows of n values")
    return MetricSample(np.array(rows, dtype=np.float64).reshape(len(rows), len(rows)))


def read_embeddings_jsonl(path) -> tuple[list[str], np.ndarray]:
    ids, vecs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", line=lineno) from None
            for key in ("id", "vec"):
                if key not in obj:
                    raise SchemaError("missing field", line=lineno, field=key)
            if not isinstance(obj["vec"], list) or not obj["vec"]:
                raise SchemaError("vec must be a non-empty list", line=lineno, field="vec")
            if vecs and len(obj["vec"]) != len(vecs[0]):
                raise SchemaError("embedding dimension mismatch", line=lineno, field="vec")
            ids.append(str(obj["id"]))
            vecs.append([float(v) for v in obj["vec"]])
    return ids, np.array(vecs, dtype=np.float64)


def write_distance_csv(path, s: MetricSample) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in s.dist:
            w.writerow([repr(float(v)) for v in row])


def write_report(path, report: DeltaReport, extra: Optional[dict] = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
