"""Multi-dimension evaluation: accuracy, macro-F1, partial-match accuracy, Hamming loss, Cohen's kappa."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, SchemaError
from .taxonomy import DIMENSIONS, CognitiveLabel, Taxonomy, builtin_taxonomy

PMA_KS = (1, 2, 3, 4)


@dataclass(frozen=True)
class PredictionRow:
    id: str
    pred: CognitiveLabel
    gold: CognitiveLabel
    topic: Optional[str] = None


@dataclass
class PredictionSet:
    rows: list[PredictionRow]
    taxonomy: Taxonomy = field(default_factory=builtin_taxonomy)

    def __post_init__(self):
        seen = set()
        for i, r in enumerate(self.rows):
            if r.id in seen:
                raise InvalidInputError(f"row {i}: duplicate id {r.id!r}")
            seen.add(r.id)
            for which, lab in (("pred", r.pred), ("gold", r.gold)):
                try:
                    lab.validate(self.taxonomy)
                except InvalidInputError as exc:
                    raise InvalidInputError(f"row {i} ({which}): {exc}") from None

    def __len__(self) -> int:
        return len(self.rows)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pred = np.array([r.pred.as_tuple() for r in self.rows], dtype=np.int64).reshape(-1, 4)
        gold = np.array([r.gold.as_tuple() for r in self.rows], dtype=np.int64).reshape(-1, 4)
        return pred, gold

    @classmethod
    def from_arrays(cls, pred, gold, ids=None, tax: Optional[Taxonomy] = None) -> "PredictionSet":
        pred, gold = np.asarray(pred), np.asarray(gold)
        if pred.shape != gold.shape or pred.ndim != 2 or pred.shape[1] != 4:
            raise InvalidInputError("pred and gold must both have shape (n, 4)")
        ids = ids if ids is not None else [str(i) for i in range(len(pred))]
        rows = [PredictionRow(str(ids[i]), CognitiveLabel(*map(int, pred[i])), CognitiveLabel(*map(int, gold[i])))
                for i in range(len(pred))]
        return cls(rows, tax or builtin_taxonomy())


@dataclass(frozen=True)
class DimensionScores:
    acc: float
    macro_f1: float


@dataclass(frozen=True)
class MetricsReport:
    n: int
    dimensions: dict[str, DimensionScores]
    pma: dict[int, float]
    hamming_loss: float

    def to_dict(self) -> dict:
        """Table-style keys: ``ACC``/``F1`` per dimension, ``PMA@k``, ``hamming_loss``."""
        out = {"n": self.n}
        for name, s in self.dimensions.items():
            out[name] = {"ACC": s.acc, "F1": s.macro_f1}
        for k, v in self.pma.items():
            out[f"PMA@{k}"] = v
        out["hamming_loss"] = self.hamming_loss
        return out


def confusion_matrix(preds: PredictionSet, dimension: str) -> np.ndarray:
    """K x K counts with gold rows and predicted columns."""
    if dimension not in DIMENSIONS:
        raise InvalidInputError(f"unknown dimension {dimension!r}")
    k = DIMENSIONS.index(dimension)
    size = preds.taxonomy.class_counts[k]
    pred, gold = preds.arrays()
    m = np.zeros((size, size), dtype=np.int64)
    np.add.at(m, (gold[:, k], pred[:, k]), 1)
    return m


def macro_f1_from_confusion(m: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over every class, with 0/0 counted as 0."""
    tp = np.diag(m).astype(np.float64)
    denom = m.sum(axis=0) + m.sum(axis=1)      # 2tp + fp + fn
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def evaluate(preds: PredictionSet) -> MetricsReport:
    n = len(preds)
    if n == 0:
        raise InvalidInputError("prediction set must be nonempty")
    pred, gold = preds.arrays()
    correct = pred == gold
    dims = {}
    for k, name in enumerate(DIMENSIONS):
        dims[name] = DimensionScores(
            acc=float(Fraction(int(correct[:, k].sum()), n)),
            macro_f1=macro_f1_from_confusion(confusion_matrix(preds, name)),
        )
    per_row = correct.sum(axis=1)
    pma = {k: float(Fraction(int((per_row >= k).sum()), n)) for k in PMA_KS}
    # 1 - mean accuracy equals wrong / (4n) to within one ulp, and makes
    # hamming_loss + mean accuracy == 1.0 hold exactly in floating point
    mean_acc = sum(s.acc for s in dims.values()) / 4
    return MetricsReport(n, dims, pma, 1.0 - mean_acc)


def cohen_kappa(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    a, b = np.asarray(labels_a), np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("label lists must be one-dimensional and equal length")
    n = len(a)
    if n == 0:
        raise InvalidInputError("label lists must be nonempty")
    classes, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ia, ib = inv[:n], inv[n:]
    # integer counts keep p_o and p_e exact
    p_o = Fraction(int(np.sum(ia == ib)), n)
    ca = np.bincount(ia, minlength=len(classes))
    cb = np.bincount(ib, minlength=len(classes))
    p_e = Fraction(int(ca @ cb), n * n)
    if p_e == 1:
        # single class shared by both raters
        return 1.0 if p_o == 1 else 0.0
    return float((p_o - p_e) / (1 - p_e))


def kappa_by_topic(preds: PredictionSet) -> dict[str, dict[str, float]]:
    """Kappa between pred and gold per topic and dimension; rows without a topic are skipped."""
    groups: dict[str, list[PredictionRow]] = defaultdict(list)
    for r in preds.rows:
        if r.topic is not None:
            groups[r.topic].append(r)
    out = {}
    for topic in sorted(groups):
        rows = groups[topic]
        out[topic] = {
            name: cohen_kappa([r.pred.as_tuple()[k] for r in rows], [r.gold.as_tuple()[k] for r in rows])
            for k, name in enumerate(DIMENSIONS)
        }
    return out


# --- file formats ----------------------------------------------------------------

def _label_from_json(obj, tax: Taxonomy, lineno: int, which: str) -> CognitiveLabel:
    if not isinstance(obj, dict):
        raise SchemaError("expected an object of four label fields", line=lineno, field=which)
    try:
        return CognitiveLabel.from_names(obj, tax, line=lineno)
    except SchemaError as exc:
        raise SchemaError(f"{which}.{exc.field}: {str(exc).split(': ', 1)[-1]}",
                          line=lineno, field=f"{which}.{exc.field}") from None


def read_predictions_jsonl(path, tax: Optional[Taxonomy] = None) -> PredictionSet:
    """Rows ``{"id", "pred": {...}, "gold": {...}, "topic"?}`` with label names as values."""
    tax = tax or builtin_taxonomy()
    rows = []
    seen = set()
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
            for key in ("id", "pred", "gold"):
                if key not in obj:
                    raise SchemaError("missing field", line=lineno, field=key)
            rid = str(obj["id"])
            if rid in seen:
                raise SchemaError(f"duplicate id {rid!r}", line=lineno, field="id")
            seen.add(rid)
            rows.append(PredictionRow(rid, _label_from_json(obj["pred"], tax, lineno, "pred"),
                                      _label_from_json(obj["gold"], tax, lineno, "gold"), obj.get("topic")))
    if not rows:
        raise SchemaError("prediction file is empty")
    return PredictionSet(rows, tax)


def write_predictions_jsonl(path, preds: PredictionSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in preds.rows:
            rec = {"id": r.id, "pred": r.pred.names(preds.taxonomy), "gold": r.gold.names(preds.taxonomy)}
            if r.topic is not None:
                rec["topic"] = r.topic
            fh.write(json.dumps(rec) + "\n")


def write_report_json(path, report: MetricsReport, extra: Optional[dict] = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
