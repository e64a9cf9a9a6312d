"""Euclidean vs hyperbolic radius needed to keep b-ary taxonomy nodes apart.

Euclidean side: the smallest ball radius in which ``b**k`` points can be
placed pairwise at least ``epsilon`` apart, estimated by bisection on the
radius with an overlap-relaxation placement at every probe.

Hyperbolic side: an explicit level-by-level construction in the Poincare
ball whose radius grows linearly with depth.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import DepthTooLargeError, InvalidInputError, TooLargeError
from .poincare import BallConfig, exp_map_origin

MAX_LEAVES = 65536
BISECTION_REL_TOL = 0.01
# relaxation aims slightly above the target so converged layouts clear it
TARGET_INFLATION = 2e-3
SKIN = 0.4
STEP = 0.12


@dataclass(frozen=True)
class CapacityConfig:
    branching_b: int = 2
    depth_range: tuple[int, ...] = tuple(range(1, 9))
    dim_d: int = 2
    epsilon_sep: float = 0.5
    trials: int = 1
    seed: int = 0
    curvature_c: float = 1.0
    restarts: int = 20
    max_iter: int = 4000

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(int(k) for k in self.depth_range))
        if self.branching_b < 2:
            raise InvalidInputError("branching_b must be > 1")
        if self.dim_d < 2:
            raise InvalidInputError("dim_d must be >= 2")
        if not self.epsilon_sep > 0:
            raise InvalidInputError("epsilon_sep must be positive")
        if self.trials < 1 or self.restarts < 1:
            raise InvalidInputError("trials and restarts must be >= 1")
        if any(k < 0 for k in self.depth_range):
            raise InvalidInputError("depths must be nonnegative")
        if self.depth_range and self.branching_b ** max(self.depth_range) > MAX_LEAVES:
            raise TooLargeError(
                f"b^k = {self.branching_b ** max(self.depth_range)} exceeds the cap of {MAX_LEAVES}"
            )


def _check_size(b: int, k: int) -> int:
    if b < 2 or k < 0:
        raise InvalidInputError("need b > 1 and k >= 0")
    n = b ** k
    if n > MAX_LEAVES:
        raise TooLargeError(f"b^k = {n} exceeds the cap of {MAX_LEAVES}")
    return n


# --- Euclidean -------------------------------------------------------------

def packing_lower_bound(n: int, d: int, epsilon: float) -> float:
    """Radius below which ``n`` epsilon-separated points cannot fit in a d-ball.

    Disjoint balls of radius eps/2 around the points all sit inside the ball
    of radius R + eps/2, so R >= (eps/2) n^(1/d) - eps/2.
    """
    if n <= 1:
        return 0.0
    return max(0.0, 0.5 * epsilon * n ** (1.0 / d) - 0.5 * epsilon)


def _lattice_basis(d: int) -> np.ndarray:
    if d == 2:
        return np.array([[1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])
    return np.eye(d)


def lattice_layout(n: int, d: int, spacing: float) -> np.ndarray:
    """``n`` points of a unit-spacing lattice closest to a well-chosen center.

    Triangular lattice in the plane, cubic lattice otherwise. Feasible by
    construction, so it seeds the bisection's upper bound.
    """
    basis = _lattice_basis(d)
    reach = int(math.ceil((n ** (1.0 / d)) * 1.5)) + 2
    rng1 = np.arange(-reach, reach + 1)
    coeffs = np.array(list(itertools.product(rng1, repeat=d)), dtype=float) if d <= 3 else None
    if coeffs is None:
        # high dimension: a small cube is enough
        side = int(math.ceil(n ** (1.0 / d))) + 1
        coeffs = np.array(list(itertools.product(range(-side, side + 1), repeat=d)), dtype=float)
    pts = coeffs @ basis
    if d == 2:
        centers = [np.zeros(2), 0.5 * basis[0], (basis[0] + basis[1]) / 3.0]
    else:
        centers = [np.zeros(d), 0.5 * basis[0], 0.5 * (basis[0] + basis[1]), 0.5 * np.ones(d)]
    best = None
    for c in centers:
        rel = pts - c
        norms = np.linalg.norm(rel, axis=1)
        order = np.lexsort((rel[:, -1], rel[:, 0], np.round(norms, 12)))[:n]
        chosen = rel[order]
        chosen = chosen - chosen.mean(axis=0) if n > 1 else chosen * 0.0
        r = float(np.max(np.linalg.norm(chosen, axis=1)))
        if best is None or r < best[0] - 1e-12:
            best = (r, chosen)
    return best[1] * spacing


def _random_ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return g * r[:, None]


def _clip(p: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    return np.where(norms > radius, p * (radius / np.where(norms > 0, norms, 1.0)), p)


@dataclass
class RelaxResult:
    points: np.ndarray
    min_separation: float
    success: bool
    hit_cap: bool
    iterations: int


def relax(points: np.ndarray, radius: float, epsilon: float, max_iter: int) -> RelaxResult:
    """Gradient descent on the pairwise overlap energy inside the ball.

    Stops on success (all pairs at least ``epsilon`` apart), on jamming
    (energy stalls above zero) or at ``max_iter``.
    """
    p = _clip(np.ascontiguousarray(points, dtype=np.float64), radius)
    n = p.shape[0]
    target = epsilon * (1.0 + TARGET_INFLATION)
    cutoff = target * (1.0 + SKIN)
    anchor = p.copy()
    pairs = _neighbor_pairs(p, cutoff)
    stall_ref = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.sum((p - anchor) ** 2, axis=1)) > (0.5 * SKIN * target) ** 2:
            anchor = p.copy()
            pairs = _neighbor_pairs(p, cutoff)
        energy, grad = kernels.overlap_energy_grad_pairs(p, pairs, target)
        if energy == 0.0:
            sep = kernels.min_pairwise_euclidean(p) if n > 1 else math.inf
            if sep >= epsilon:
                return RelaxResult(p, sep, True, False, it)
        p = _clip(p - STEP * grad, radius)
        if it % 250 == 0:
            if energy > 0.995 * stall_ref:
                break
            stall_ref = energy
    sep = kernels.min_pairwise_euclidean(p) if n > 1 else math.inf
    return RelaxResult(p, sep, sep >= epsilon, it >= max_iter, it)


def _neighbor_pairs(p: np.ndarray, cutoff: float) -> np.ndarray:
    pairs = cKDTree(p).query_pairs(cutoff, output_type="ndarray")
    return np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)


@dataclass
class EuclideanRadius:
    radius: float
    lower_bound: float
    approximate: bool
    min_separation: float
    points: np.ndarray = field(repr=False)
    probes: int = 0


def min_euclidean_radius(
    b: int,
    k: int,
    d: int,
    epsilon: float,
    restarts: int = 20,
    max_iter: int = 4000,
    seed: int = 0,
) -> EuclideanRadius:
    """Smallest radius (to 1% relative) holding ``b**k`` epsilon-separated points.

    Each bisection probe first relaxes the best layout found so far,
    rescaled to the probe radius, then up to ``restarts - 1`` random
    layouts. The estimate is flagged ``approximate`` when any probe was
    declared infeasible only because it ran out of iterations.
    """
    n = _check_size(b, k)
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    lb = packing_lower_bound(n, d, epsilon)
    if n == 1:
        return EuclideanRadius(0.0, 0.0, False, math.inf, np.zeros((1, d)))
    best = lattice_layout(n, d, epsilon * (1.0 + 1e-9))
    hi = float(np.max(np.linalg.norm(best, axis=1)))
    lo = max(lb, 0.5 * epsilon)
    approximate = False
    probes = 0
    rng = np.random.default_rng([seed, b, k, d])
    while hi - lo > BISECTION_REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        probes += 1
        found = None
        starts = [best * (mid / hi)]
        starts += [None] * (restarts - 1)
        for start in starts:
            init = start if start is not None else _random_ball(rng, n, d, mid)
            res = relax(init, mid, epsilon, max_iter)
            if res.success:
                found = res
                break
            approximate |= res.hit_cap
        if found is not None:
            best = found.points
            hi = float(np.max(np.linalg.norm(best, axis=1)))
        else:
            lo = mid
    sep = kernels.min_pairwise_euclidean(np.ascontiguousarray(best))
    return EuclideanRadius(hi, lb, approximate, sep, best, probes)


# --- hyperbolic --------------------------------------------------------------

@dataclass
class HyperbolicEmbedding:
    points: np.ndarray = field(repr=False)   # all nodes, breadth-first order
    depths: np.ndarray = field(repr=False)
    max_radius_hyp: float
    step: float                                # hyperbolic step length between levels
    min_separation: float                      # smallest same-depth distance


def _cone_tangent_positions(b: int, k: int, dim: int, half_step: float) -> list[np.ndarray]:
    """Tangent-space (at the origin) positions of every level.

    Each node owns an angular interval in the plane of the first two axes;
    its children split it evenly and sit ``half_step`` further along the
    bisector of their own interval.
    """
    levels = [np.zeros((1, dim))]
    cones = np.array([[0.0, 2.0 * math.pi]])
    for _ in range(k):
        width = (cones[:, 1] - cones[:, 0]) / b
        lo = cones[:, 0][:, None] + width[:, None] * np.arange(b)[None, :]
        cones = np.stack([lo, lo + width[:, None]], axis=-1).reshape(-1, 2)
        ang = cones.mean(axis=1)
        u = np.zeros((ang.size, dim))
        u[:, 0] = np.cos(ang)
        u[:, 1] = np.sin(ang)
        levels.append(np.repeat(levels[-1], b, axis=0) + half_step * u)
    return levels


def _place(b: int, k: int, cfg: BallConfig, step: float):
    """Positions for a given step; returns (levels, saturated_level or None)."""
    # d(0, exp0(x)) = 2|x|, so a tangent move of step/2 is a hyperbolic move of step
    tang = _cone_tangent_positions(b, k, cfg.dim, 0.5 * step)
    limit = math.atanh(1.0 - cfg.boundary_eps) / cfg.sqrt_c
    for lvl, t in enumerate(tang):
        if np.max(np.linalg.norm(t, axis=1)) > limit:
            return tang, lvl
    return tang, None


def _level_separation(levels: Sequence[np.ndarray], cfg: BallConfig) -> float:
    sep = math.inf
    for t in levels[1:]:
        z = np.ascontiguousarray(exp_map_origin(cfg, t))
        sep = min(sep, kernels.min_pairwise_poincare(z, cfg.curvature_c))
    return sep


def hyperbolic_tree_embed(b: int, k: int, cfg: BallConfig, epsilon: float) -> HyperbolicEmbedding:
    if cfg.dim < 2:
        raise InvalidInputError("cone splitting needs dim >= 2")
    _check_size(b, k)
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    depths = np.repeat(np.arange(k + 1), [b ** l for l in range(k + 1)])
    if k == 0:
        return HyperbolicEmbedding(np.zeros((1, cfg.dim)), depths, 0.0, 0.0, math.inf)

    def probe(step):
        levels, sat = _place(b, k, cfg, step)
        if sat is not None:
            return "saturated", sat
        return ("ok" if _level_separation(levels, cfg) >= epsilon else "tight"), None

    # grow from epsilon by doubling, then bisect the last bracket to 0.01
    lo, step = None, epsilon
    last_sat = None
    while True:
        state, sat = probe(step)
        if state == "ok":
            hi = step
            break
        if state == "saturated":
            last_sat = sat
            hi = None
            break
        lo, step = step, 2.0 * step
    if hi is None:
        upper = step
        found = None
        lo = lo if lo is not None else 0.0
        while upper - lo > 0.005:
            mid = 0.5 * (lo + upper)
            state, sat = probe(mid)
            if state == "ok":
                found = upper = mid
            elif state == "saturated":
                upper, last_sat = mid, sat
            else:
                lo = mid
        if found is None:
            raise DepthTooLargeError(
                f"no step separates depth {k} before points reach the clip radius (level {last_sat})",
                level=last_sat,
            )
        hi = found
    elif lo is not None:
        while hi - lo > 0.005:
            mid = 0.5 * (lo + hi)
            if probe(mid)[0] == "ok":
                hi = mid
            else:
                lo = mid
    step = math.ceil(round(hi * 100, 9)) / 100
    state, sat = probe(step)
    if state != "ok":
        # rounding up can only cross into saturation; fall back to the unrounded value
        step = hi
        state, sat = probe(step)
    levels, _ = _place(b, k, cfg, step)
    sep = _level_separation(levels, cfg)
    if sep < epsilon:
        raise DepthTooLargeError(f"post-hoc separation check failed ({sep} < {epsilon})")
    tang = np.concatenate(levels)
    radius = float(2.0 * np.max(np.linalg.norm(tang, axis=1)))
    return HyperbolicEmbedding(exp_map_origin(cfg, tang), depths, radius, step, sep)


# --- crowding ------------------------------------------------------------------

def crowding_index(points, labels, epsilon: float,
                   space: Union[str, BallConfig] = "euclidean") -> float:
    """Fraction of distinct-label pairs closer than ``epsilon``."""
    p = np.ascontiguousarray(points, dtype=np.float64)
    lab = np.ascontiguousarray(np.unique(np.asarray(labels), return_inverse=True)[1], dtype=np.int64)
    if p.ndim != 2 or lab.shape[0] != p.shape[0]:
        raise InvalidInputError("points and labels must align")
    c = space.curvature_c if isinstance(space, BallConfig) else 0.0
    total, crowded = kernels.crowding_counts(p, lab, float(epsilon), float(c))
    return crowded / total if total else 0.0


# --- sweep -------------------------------------------------------------------------

@dataclass
class DepthRecord:
    k: int
    n_leaves: int
    min_radius_euclidean: float
    radius_hyperbolic: float
    min_separation_achieved: float
    euclidean_lower_bound: float
    euclidean_approximate: bool
    hyperbolic_step: float
    hyperbolic_min_separation: float
    crowding_euclidean: float
    crowding_hyperbolic: float


@dataclass
class CapacityReport:
    config: dict
    records: list[DepthRecord]
    summary: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "records": [asdict(r) for r in self.records],
                "summary": self.summary}


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _finite(v: float) -> Optional[float]:
    return None if not math.isfinite(v) else v


def run_capacity(cfg: CapacityConfig) -> CapacityReport:
    b, d, eps = cfg.branching_b, cfg.dim_d, cfg.epsilon_sep
    ball = BallConfig(cfg.curvature_c, d)
    records = []
    for k in cfg.depth_range:
        n = b ** k
        hyp = hyperbolic_tree_embed(b, k, ball, eps)
        # trials fold in index order; keep the smallest verified radius
        euc = None
        for trial in range(cfg.trials):
            est = min_euclidean_radius(b, k, d, eps, cfg.restarts, cfg.max_iter,
                                       seed=cfg.seed * 1000003 + trial)
            if euc is None or est.radius < euc.radius:
                euc = est
        leaves_h = hyp.points[hyp.depths == k]
        crowd_h = crowding_index(leaves_h, np.arange(n), eps, ball)
        # Euclidean layout squeezed into the hyperbolic radius budget
        if n > 1 and euc.radius > hyp.max_radius_hyp:
            squeezed = relax(euc.points * (hyp.max_radius_hyp / euc.radius),
                             hyp.max_radius_hyp, eps, cfg.max_iter).points
            crowd_e = crowding_index(squeezed, np.arange(n), eps)
        else:
            crowd_e = 0.0
        records.append(DepthRecord(
            k=k, n_leaves=n,
            min_radius_euclidean=euc.radius,
            radius_hyperbolic=hyp.max_radius_hyp,
            min_separation_achieved=_finite(euc.min_separation),
            euclidean_lower_bound=euc.lower_bound,
            euclidean_approximate=euc.approximate,
            hyperbolic_step=hyp.step,
            hyperbolic_min_separation=_finite(hyp.min_separation),
            crowding_euclidean=crowd_e,
            crowding_hyperbolic=crowd_h,
        ))
    return CapacityReport(_config_dict(cfg), records, summarize(records, b, d))


def _config_dict(cfg: CapacityConfig) -> dict:
    out = asdict(cfg)
    out["depth_range"] = list(cfg.depth_range)
    return out


def summarize(records: Sequence[DepthRecord], b: int, d: int) -> dict:
    ks = [r.k for r in records]
    out: dict = {"expected_log_slope": math.log(b) / d}
    pos = [r for r in records if r.k >= 1]
    if len(pos) >= 2:
        s, i, r2 = linear_fit([r.k for r in pos], [r.radius_hyperbolic for r in pos])
        out["hyperbolic_fit"] = {"slope": s, "intercept": i, "r2": r2}
    deep = [r for r in records if r.k >= 3 and r.min_radius_euclidean > 0]
    if len(deep) >= 2:
        s, i, r2 = linear_fit([r.k for r in deep], [math.log(r.min_radius_euclidean) for r in deep])
        out["euclidean_log_fit"] = {"slope": s, "intercept": i, "r2": r2}
    out["crossover_depth"] = crossover_depth(records)
    out["depths"] = ks
    return out


def crossover_depth(records: Sequence[DepthRecord]) -> Optional[int]:
    """First depth from which the Euclidean radius exceeds the hyperbolic one for good."""
    ordered = sorted(records, key=lambda r: r.k)
    for i, r in enumerate(ordered):
        if all(q.min_radius_euclidean > q.radius_hyperbolic for q in ordered[i:]):
            return r.k
    return None


CSV_COLUMNS = ("k", "n_leaves", "R_euc", "R_hyp", "crowding")


def write_report_json(path, report: CapacityReport, extra: Optional[dict] = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report: CapacityReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.records:
            w.writerow([r.k, r.n_leaves, repr(r.min_radius_euclidean), repr(r.radius_hyperbolic),
                        repr(r.crowding_euclidean)])
