"""Metrics, agreement statistics, reranking, and the structure-quality sweep."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ConsistencyLabel, Dataset, LABEL_ORDER, LABEL_TO_INDEX
from .model import KvModelConfig, PredictionResult

# Reranking preference over predicted relation classes.
RERANK_ORDER = (ConsistencyLabel.ENTAILED, ConsistencyLabel.IRRELEVANT,
                ConsistencyLabel.CONTRADICTED)
_RERANK_RANK = {lab: i for i, lab in enumerate(RERANK_ORDER)}


@dataclass
class EvalReport:
    accuracy: float
    entail_f1: float
    contr_f1: float
    irrelv_f1: float
    confusion: list[list[int]]  # confusion[gold][pred] in label order E, C, I
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "entail_f1": self.entail_f1,
                "contr_f1": self.contr_f1, "irrelv_f1": self.irrelv_f1,
                "confusion": self.confusion, "n": self.n,
                "labels": [lab.value for lab in LABEL_ORDER]}


def _as_label(x) -> ConsistencyLabel:
    return x.label if isinstance(x, PredictionResult) else x


def evaluate(preds: Sequence, gold: Sequence[ConsistencyLabel]) -> EvalReport:
    """Accuracy, per-class f1 (0/0 -> 0 convention), and a confusion matrix."""
    if len(preds) != len(gold):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gold)} gold")
    if not gold:
        raise ValueError("cannot evaluate an empty prediction list")
    confusion = [[0, 0, 0] for _ in range(3)]
    for p, g in zip(preds, gold):
        confusion[LABEL_TO_INDEX[_as_label(g)]][LABEL_TO_INDEX[_as_label(p)]] += 1
    n = len(gold)
    acc = sum(confusion[i][i] for i in range(3)) / n
    f1s = []
    for i in range(3):
        tp = confusion[i][i]
        fp = sum(confusion[g][i] for g in range(3)) - tp
        fn = sum(confusion[i]) - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return EvalReport(accuracy=acc, entail_f1=f1s[0], contr_f1=f1s[1],
                      irrelv_f1=f1s[2], confusion=confusion, n=n)


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Chance-corrected agreement between two raters.

    kappa = (p_o - p_e) / (1 - p_e); when p_e = 1 the statistic degenerates
    and we return 1.0 for perfect observed agreement, 0.0 otherwise.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty rating lists")
    a = [_as_label(x) for x in a]
    b = [_as_label(x) for x in b]
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    cats = sorted({*a, *b}, key=lambda c: str(c))
    p_e = sum((a.count(c) / n) * (b.count(c) / n) for c in cats)
    if abs(1.0 - p_e) < 1e-12:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def rating_counts(ratings: Sequence[Sequence], categories: Sequence | None = None) -> np.ndarray:
    """Convert an N x R rater-label matrix to N x k category counts."""
    if categories is None:
        categories = sorted({_as_label(x) for row in ratings for x in row},
                            key=lambda c: str(c))
    index = {c: j for j, c in enumerate(categories)}
    counts = np.zeros((len(ratings), len(categories)), dtype=int)
    for i, row in enumerate(ratings):
        for x in row:
            counts[i, index[_as_label(x)]] += 1
    return counts


def fleiss_kappa(m) -> float:
    """Fleiss' kappa over an N x k count matrix (rows sum to the rater count R)."""
    counts = np.asarray(m, dtype=float)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise ValueError("expected a 2-d N x k count matrix")
    row_sums = counts.sum(axis=1)
    r = row_sums[0]
    if not np.all(row_sums == r):
        raise ValueError(f"inconsistent row sums: {sorted(set(row_sums.tolist()))}")
    if r < 2:
        raise ValueError("need at least 2 raters per item")
    n_items = counts.shape[0]
    p_i = ((counts ** 2).sum(axis=1) - r) / (r * (r - 1))
    p_bar = p_i.mean()
    p_j = counts.sum(axis=0) / (n_items * r)
    p_e = float((p_j ** 2).sum())
    if abs(1.0 - p_e) < 1e-12:
        return 1.0 if abs(p_bar - 1.0) < 1e-12 else 0.0
    return float((p_bar - p_e) / (1.0 - p_e))


def rerank(cands: Sequence[tuple]) -> list[tuple]:
    """Order (response, prediction) pairs: E before I before C, then by the
    predicted class's probability, descending; exact ties keep input order."""
    def key(item):
        pred: PredictionResult = item[1]
        confidence = pred.probs[LABEL_TO_INDEX[pred.label]]
        return (_RERANK_RANK[pred.label], -confidence)

    return sorted(cands, key=key)


def fit_polynomial(points: Sequence[tuple[float, float]], degree: int) -> list[float]:
    """Least-squares polynomial fit; coefficients in ascending degree order."""
    if len(points) < degree + 1:
        raise ValueError(f"need at least {degree + 1} points for degree {degree}, "
                         f"got {len(points)}")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    return np.polynomial.polynomial.polyfit(x, y, degree).tolist()


def polynomial_residual(points: Sequence[tuple[float, float]], coeffs: Sequence[float]) -> float:
    """Sum of squared residuals of an ascending-order polynomial on the points."""
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    return float(((np.polynomial.polynomial.polyval(x, np.asarray(coeffs)) - y) ** 2).sum())


def ablation_sweep(snapshots: Sequence[Mapping], splits: Mapping[str, Dataset],
                   model_cfg: KvModelConfig, train_cfg) -> list[tuple[float, float]]:
    """Structure-quality sweep: (structure-only accuracy, joint accuracy) per snapshot.

    Each snapshot of the tree-side parameters is measured through the
    structure head, then a joint model initialized from it is finetuned and
    scored on the test split. Deterministic given train_cfg.seed.
    """
    from . import training  # local import; training pulls in the optimizer stack

    if not snapshots:
        raise ValueError("need at least one tree-side snapshot")
    test = splits["test"]
    points = []
    for snap in snapshots:
        model = training.build_model(model_cfg, splits["train"], seed=train_cfg.seed)
        training.load_tree_state(model, snap)
        tree_acc = training.evaluate_accuracy(model, test, structure_only=True)
        training.finetune_joint(splits["train"], train_cfg, model,
                                valid_ds=splits.get("valid"))
        joint_acc = training.evaluate_accuracy(model, test)
        points.append((tree_acc, joint_acc))
    return points
