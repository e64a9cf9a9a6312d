"""Four-dimensional cognitive label hierarchy, tree metrics and datasets."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, SchemaError, TooLargeError
from .hyperbolicity import MetricSample

DIMENSIONS = ("emotion", "thinking", "stance", "intent")
MAX_TREE_NODES = 5000


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    categories: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(leaf for _, group in self.categories for leaf in group)

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.categories)

    @property
    def leaf_category(self) -> tuple[int, ...]:
        """Category index of each leaf id."""
        return tuple(ci for ci, (_, group) in enumerate(self.categories) for _ in group)

    def leaf_id(self, label: str) -> int:
        try:
            return self.leaves.index(label)
        except ValueError:
            raise KeyError(label) from None


@dataclass(frozen=True)
class Taxonomy:
    dimensions: tuple[DimensionSpec, ...]

    def __post_init__(self):
        names = tuple(d.name for d in self.dimensions)
        if names != DIMENSIONS:
            raise InvalidInputError(f"taxonomy dimensions must be {DIMENSIONS}, got {names}")
        for d in self.dimensions:
            if len(set(d.leaves)) != len(d.leaves):
                raise InvalidInputError(f"duplicate leaf labels in dimension {d.name}")

    def __getitem__(self, name: str) -> DimensionSpec:
        return self.dimensions[DIMENSIONS.index(name)]

    @property
    def class_counts(self) -> tuple[int, ...]:
        return tuple(d.leaf_count for d in self.dimensions)

    @property
    def joint_size(self) -> int:
        return int(np.prod(self.class_counts))


@lru_cache(maxsize=1)
def builtin_taxonomy() -> Taxonomy:
    return Taxonomy((
        DimensionSpec("emotion", (
            ("Positive", ("Joy", "Trust", "Anticipation", "Surprise")),
            ("Negative", ("Anger", "Disgust", "Fear", "Sadness")),
            ("Neutral", ("Neutral",)),
        )),
        DimensionSpec("thinking", (
            ("Intuitive", ("Subjective Evaluation", "Identity Conformity",
                           "Emotional Judgment", "Experience-Based")),
            ("Analytical", ("Logical", "Balanced Consideration", "Evidence-Based", "Critical")),
        )),
        # stance has no intermediate category; the single "N/A" group keeps the tree uniform
        DimensionSpec("stance", (
            ("N/A", ("Support", "Oppose", "Unclear")),
        )),
        DimensionSpec("intent", (
            ("Representatives", ("Information Sharing", "Opinion Expression")),
            ("Directives", ("Information Seeking", "Call to Action")),
            ("Expressives", ("Connection", "Conflict", "Emotional Expression")),
        )),
    ))


@dataclass(frozen=True)
class CognitiveLabel:
    """Leaf ids, one per dimension."""

    emotion: int
    thinking: int
    stance: int
    intent: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.emotion, self.thinking, self.stance, self.intent)

    def validate(self, tax: Optional[Taxonomy] = None) -> "CognitiveLabel":
        tax = tax or builtin_taxonomy()
        for name, value, k in zip(DIMENSIONS, self.as_tuple(), tax.class_counts):
            if not (isinstance(value, (int, np.integer)) and 0 <= value < k):
                raise InvalidInputError(f"{name} id {value!r} is not a leaf (0..{k - 1})")
        return self

    def names(self, tax: Optional[Taxonomy] = None) -> dict[str, str]:
        tax = tax or builtin_taxonomy()
        return {d: tax[d].leaves[v] for d, v in zip(DIMENSIONS, self.as_tuple())}

    @classmethod
    def from_names(cls, names: Mapping[str, str], tax: Optional[Taxonomy] = None,
                   line: Optional[int] = None) -> "CognitiveLabel":
        tax = tax or builtin_taxonomy()
        ids = {}
        for d in DIMENSIONS:
            if d not in names:
                raise SchemaError("missing field", line=line, field=d)
            try:
                ids[d] = tax[d].leaf_id(names[d])
            except KeyError:
                raise SchemaError(f"unknown label {names[d]!r}", line=line, field=d) from None
        return cls(**ids)


# --- synthetic b-ary trees -------------------------------------------------

@dataclass(frozen=True)
class SyntheticTree:
    branching_b: int
    depth_k: int
    edge_length: float = 1.0

    def __post_init__(self):
        if self.branching_b < 2:
            raise InvalidInputError("branching_b must be > 1")
        if self.depth_k < 0:
            raise InvalidInputError("depth_k must be >= 0")
        if not self.edge_length > 0:
            raise InvalidInputError("edge_length must be positive")

    @property
    def node_count(self) -> int:
        b, k = self.branching_b, self.depth_k
        return (b ** (k + 1) - 1) // (b - 1)

    def level_size(self, level: int) -> int:
        return self.branching_b ** level

    def depths(self) -> np.ndarray:
        """Depth of every node in breadth-first order."""
        return np.repeat(np.arange(self.depth_k + 1), [self.level_size(l) for l in range(self.depth_k + 1)])

    def parents(self) -> np.ndarray:
        idx = np.arange(self.node_count)
        return np.where(idx == 0, -1, (idx - 1) // self.branching_b)


def tree_metric(t: SyntheticTree) -> MetricSample:
    """Shortest-path metric on the complete b-ary tree (nodes in BFS order)."""
    n = t.node_count
    if n > MAX_TREE_NODES:
        raise TooLargeError(f"tree has {n} nodes, cap is {MAX_TREE_NODES}")
    depth = t.depths()
    parent = t.parents()
    # ancestor of every node at every level (-1 above its own depth)
    anc = np.full((n, t.depth_k + 1), -1, dtype=np.int64)
    cur = np.arange(n)
    for _ in range(t.depth_k + 1):
        valid = cur >= 0
        anc[np.flatnonzero(valid), depth[cur[valid]]] = cur[valid]
        cur = np.where(valid, parent[np.maximum(cur, 0)], -1)
    lca_depth = np.zeros((n, n), dtype=np.int64)
    for level in range(1, t.depth_k + 1):
        col = anc[:, level]
        lca_depth += (col[:, None] == col[None, :]) & (col[:, None] >= 0)
    hops = depth[:, None] + depth[None, :] - 2 * lca_depth
    return MetricSample(hops.astype(np.float64) * t.edge_length)


# --- dataset I/O -----------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    id: str
    context: str
    target: str
    label: CognitiveLabel
    topic: Optional[str] = None
    stance_target: Optional[str] = None


def load_dataset(path, tax: Optional[Taxonomy] = None) -> list[Sample]:
    """Parse a JSONL dataset; bad records raise :class:`SchemaError` naming line and field."""
    tax = tax or builtin_taxonomy()
    out: list[Sample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise SchemaError("record must be a JSON object", line=lineno)
            for key in ("id", "target"):
                if key not in obj:
                    raise SchemaError("missing field", line=lineno, field=key)
            for key in ("id", "context", "target", "topic", "stance_target"):
                if key in obj and obj[key] is not None and not isinstance(obj[key], str):
                    raise SchemaError("expected a string", line=lineno, field=key)
            if obj["id"] in seen:
                raise SchemaError(f"duplicate id {obj['id']!r}", line=lineno, field="id")
            seen.add(obj["id"])
            label = CognitiveLabel.from_names(obj, tax, line=lineno)
            out.append(Sample(obj["id"], obj.get("context") or "", obj["target"], label,
                              obj.get("topic"), obj.get("stance_target")))
    return out


def sample_to_record(s: Sample, tax: Optional[Taxonomy] = None) -> dict:
    rec = {"id": s.id, "context": s.context, "target": s.target, **s.label.names(tax)}
    if s.topic is not None:
        rec["topic"] = s.topic
    if s.stance_target is not None:
        rec["stance_target"] = s.stance_target
    return rec


def save_dataset(path, samples: Sequence[Sample], tax: Optional[Taxonomy] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s, tax), ensure_ascii=False) + "\n")


def read_labels_jsonl(path, tax: Optional[Taxonomy] = None) -> list[CognitiveLabel]:
    """Labels only; accepts full dataset records or bare four-field objects."""
    tax = tax or builtin_taxonomy()
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", line=lineno) from None
            labels.append(CognitiveLabel.from_names(obj, tax, line=lineno))
    return labels


# --- synthetic features ----------------------------------------------------

PROTOTYPE_SEED = 20240101


@dataclass(frozen=True)
class Prototypes:
    """Category and leaf prototype vectors for each dimension."""

    category: tuple[np.ndarray, ...]
    leaf: tuple[np.ndarray, ...]


def make_prototypes(feature_dim: int, tax: Optional[Taxonomy] = None,
                    seed: int = PROTOTYPE_SEED) -> Prototypes:
    """Unit-norm category prototypes and half-norm leaf prototypes.

    When ``feature_dim`` can hold every direction the prototypes are
    mutually orthogonal; otherwise they are independent random directions.
    """
    tax = tax or builtin_taxonomy()
    n_cat = [len(d.categories) for d in tax.dimensions]
    n_leaf = list(tax.class_counts)
    total = sum(n_cat) + sum(n_leaf)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((feature_dim, total))
    if feature_dim >= total:
        q, r = np.linalg.qr(g)
        dirs = (q * np.sign(np.diag(r))).T
    else:
        dirs = (g / np.linalg.norm(g, axis=0)).T
    cats, leaves, pos = [], [], 0
    for nc in n_cat:
        cats.append(dirs[pos:pos + nc].copy())
        pos += nc
    for nl in n_leaf:
        leaves.append(0.5 * dirs[pos:pos + nl])
        pos += nl
    return Prototypes(tuple(cats), tuple(leaves))


def label_mean(label: CognitiveLabel, protos: Prototypes, tax: Optional[Taxonomy] = None) -> np.ndarray:
    tax = tax or builtin_taxonomy()
    out = np.zeros(protos.category[0].shape[1])
    for k, (dim, leaf) in enumerate(zip(tax.dimensions, label.as_tuple())):
        out += protos.category[k][dim.leaf_category[leaf]] + protos.leaf[k][leaf]
    return out


def generate_synthetic(
    n: int,
    feature_dim: int,
    noise: float,
    seed: int,
    label_weights: Optional[Mapping[str, Sequence[float]]] = None,
    tax: Optional[Taxonomy] = None,
) -> tuple[np.ndarray, list[CognitiveLabel]]:
    """Hierarchically structured features with known labels.

    Labels are drawn independently per dimension (uniformly unless
    ``label_weights`` gives per-dimension leaf probabilities); each feature
    row is the sum of its category and leaf prototypes over the four
    dimensions plus isotropic Gaussian noise of standard deviation ``noise``.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if feature_dim < 8:
        raise InvalidInputError("feature_dim must be >= 8")
    if noise < 0:
        raise InvalidInputError("noise must be nonnegative")
    tax = tax or builtin_taxonomy()
    protos = make_prototypes(feature_dim, tax)
    rng = np.random.default_rng(seed)
    ids = np.empty((n, 4), dtype=np.int64)
    for k, dim in enumerate(tax.dimensions):
        p = None
        if label_weights and dim.name in label_weights:
            p = np.asarray(label_weights[dim.name], dtype=float)
            if p.shape != (dim.leaf_count,) or np.any(p < 0) or p.sum() <= 0:
                raise InvalidInputError(f"bad label weights for {dim.name}")
            p = p / p.sum()
        ids[:, k] = rng.choice(dim.leaf_count, size=n, p=p)
    feats = np.zeros((n, feature_dim))
    for k, dim in enumerate(tax.dimensions):
        cat_of = np.asarray(dim.leaf_category)
        feats += protos.category[k][cat_of[ids[:, k]]] + protos.leaf[k][ids[:, k]]
    if noise > 0:
        feats += noise * rng.standard_normal((n, feature_dim))
    labels = [CognitiveLabel(*map(int, row)) for row in ids]
    return feats, labels


def labels_to_array(labels: Sequence[CognitiveLabel]) -> np.ndarray:
    return np.array([l.as_tuple() for l in labels], dtype=np.int64).reshape(-1, 4)


def write_features_csv(path, feats: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in feats:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_features_csv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise SchemaError("non-numeric feature value", line=lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise SchemaError("feature row length mismatch", line=lineno)
    return np.array(rows, dtype=np.float64)


def write_labels_jsonl(path, labels: Sequence[CognitiveLabel], tax: Optional[Taxonomy] = None,
                       ids: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, lab in enumerate(labels):
            rec = {"id": ids[i] if ids is not None else str(i), **lab.names(tax)}
            fh.write(json.dumps(rec) + "\n")
