"""Performance, bias and explanation metrics.

Every function is a pure fold over its inputs. Metrics that are undefined on
their input (an AUROC over a single class, a GMB over nothing) return
``None`` rather than a number, and aggregates skip ``None`` entries.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import LABEL_INDEX, LABELS, NORMAL

TOXIC_CLASSES = (LABEL_INDEX["Hateful"], LABEL_INDEX["Offensive"])
DEFAULT_GMB_POWER = -5.0

# report keys -> column names in the published results layout
TABLE_COLUMNS = {
    "accuracy": "Acc.",
    "macro_f1": "Macro F1",
    "auroc": "AUROC",
    "gmb_subgroup": "GMB-Sub",
    "gmb_bpsn": "GMB-BPSN",
    "gmb_bnsp": "GMB-BNSP",
    "iou_f1": "IOU F1",
    "token_f1": "Token F1",
    "auprc": "AUPRC",
    "comprehensiveness": "Comp.",
    "sufficiency": "Suff.",
}


# ---------------------------------------------------------------- performance


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(y_true == y_pred))


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def macro_f1(y_true, y_pred, n_classes: int = 3) -> float:
    """Unweighted mean of per-class F1; a class with no support and no
    predictions contributes 0."""
    if len(y_true) == 0:
        raise ValueError("macro_f1 of an empty set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return float(f1.mean())


def binary_auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC: P(random positive outranks random negative), ties = 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def multiclass_auroc(probs, y_true) -> float | None:
    """One-vs-rest AUROC macro-averaged over classes with both outcomes present."""
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true)
    values = [binary_auroc(probs[:, c], y_true == c) for c in range(probs.shape[1])]
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


# ---------------------------------------------------------------- bias


def bias_aucs(toxic_scores, is_toxic, mentions) -> dict[str, float | None]:
    """Subgroup, BPSN and BNSP AUROCs for one community.

    ``toxic_scores`` is P(Hateful) + P(Offensive); ``is_toxic`` the binarised
    ground truth; ``mentions`` whether each post targets the community.
    """
    s = np.asarray(toxic_scores, dtype=np.float64)
    y = np.asarray(is_toxic, dtype=bool)
    m = np.asarray(mentions, dtype=bool)
    bpsn = (y & ~m) | (~y & m)
    bnsp = (~y & ~m) | (y & m)
    return {
        "subgroup": binary_auroc(s[m], y[m]),
        "bpsn": binary_auroc(s[bpsn], y[bpsn]),
        "bnsp": binary_auroc(s[bnsp], y[bnsp]),
    }


def gmb(values: Iterable[float | None], p: float = DEFAULT_GMB_POWER) -> float | None:
    """Power mean ``(mean v^p)^(1/p)`` over the defined values."""
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return None
    if p <= 0 and np.any(v == 0):
        return 0.0
    if p == 0:
        return float(np.exp(np.mean(np.log(v))))
    return float(np.mean(v ** p) ** (1.0 / p))


# ---------------------------------------------------------------- plausibility


def iou(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    union = np.sum(pred | gt)
    return 1.0 if union == 0 else float(np.sum(pred & gt) / union)


def iou_f1(pred_selections: Sequence, gt_rationales: Sequence, threshold: float = 0.5) -> float:
    """F1 over post-level IOU matches.

    A post matches when IOU(pred, gt) > ``threshold``; empty-vs-empty is a
    match. Each non-empty prediction is one predicted unit and each non-empty
    rationale one gold unit (a vacuous match counts once on both sides), so
    precision = matches / predicted units and recall = matches / gold units.
    """
    matches = n_pred = n_gold = 0
    for pred, gt in zip(pred_selections, gt_rationales, strict=True):
        pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
        if not pred.any() and not gt.any():
            matches, n_pred, n_gold = matches + 1, n_pred + 1, n_gold + 1
            continue
        n_pred += int(pred.any())
        n_gold += int(gt.any())
        matches += int(iou(pred, gt) > threshold)
    precision = matches / n_pred if n_pred else 0.0
    recall = matches / n_gold if n_gold else 0.0
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def token_f1(pred_selections: Sequence, gt_rationales: Sequence) -> float | None:
    """Micro-averaged token-level F1 over the corpus."""
    pred = np.concatenate([np.asarray(p, dtype=bool) for p in pred_selections])
    gt = np.concatenate([np.asarray(g, dtype=bool) for g in gt_rationales])
    if pred.shape != gt.shape:
        raise ValueError("selections and rationales differ in length")
    if not pred.any() and not gt.any():
        return None
    tp = np.sum(pred & gt)
    if tp == 0:
        return 0.0
    precision, recall = tp / pred.sum(), tp / gt.sum()
    return float(2 * precision * recall / (precision + recall))


def average_precision(scores, labels) -> float | None:
    """Area under the step-wise precision-recall curve, thresholds at distinct scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = labels.sum()
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]  # end of each tie block
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def token_auprc(token_scores: Sequence, gt_rationales: Sequence, per_post: bool = False) -> float | None:
    """AUPRC of continuous token scores against rationales, pooled corpus-wide
    (or averaged over posts with at least one rationale token)."""
    if per_post:
        values = [average_precision(s, g) for s, g in zip(token_scores, gt_rationales, strict=True)]
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None
    return average_precision(np.concatenate([np.asarray(s, dtype=float) for s in token_scores]),
                             np.concatenate([np.asarray(g, dtype=bool) for g in gt_rationales]))


# ---------------------------------------------------------------- faithfulness


def comprehensiveness(prob_fn: Callable[[np.ndarray], np.ndarray], selection, target: int | None = None) -> float:
    """Drop in the predicted class probability when the selected tokens are removed.

    ``prob_fn`` maps keep-masks ``[n, L]`` to class probabilities ``[n, 3]``.
    """
    sel = np.asarray(selection, dtype=bool)
    full, removed = prob_fn(np.stack([np.ones_like(sel), ~sel]))
    c = int(np.argmax(full)) if target is None else target
    return float(full[c] - removed[c])


def sufficiency(prob_fn: Callable[[np.ndarray], np.ndarray], selection, target: int | None = None) -> float:
    """Drop in the predicted class probability when only the selected tokens are kept."""
    sel = np.asarray(selection, dtype=bool)
    full, kept = prob_fn(np.stack([np.ones_like(sel), sel]))
    c = int(np.argmax(full)) if target is None else target
    return float(full[c] - kept[c])


# ---------------------------------------------------------------- records and reports


@dataclass
class PredictionRecord:
    post_id: str
    class_probs: list[float]
    predicted_label: str
    gt_label: str
    communities: list[str]
    token_scores: list[float]
    gt_rationale: list[bool]
    gt_attention: list[float]
    selected: list[bool] | None = None
    comprehensiveness: float | None = None
    sufficiency: float | None = None

    def __post_init__(self):
        n = len(self.gt_attention)
        if not (len(self.token_scores) == len(self.gt_rationale) == n):
            raise ValueError(f"{self.post_id}: token vectors differ in length")
        if self.selected is not None and len(self.selected) != n:
            raise ValueError(f"{self.post_id}: selection length differs from token count")
        probs = np.asarray(self.class_probs)
        if probs.shape != (3,) or probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"{self.post_id}: class_probs must be a distribution over 3 classes")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> PredictionRecord:
        return cls(**obj)


def read_records(path) -> list[PredictionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PredictionRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def write_records(records: Iterable[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    auroc: float | None
    gmb_subgroup: float | None
    gmb_bpsn: float | None
    gmb_bnsp: float | None
    iou_f1: float | None
    token_f1: float | None
    auprc: float | None
    comprehensiveness: float | None
    sufficiency: float | None
    per_community: list[dict] = field(default_factory=list)
    n_records: int = 0

    def table(self) -> dict[str, float | None]:
        return {col: getattr(self, key) for key, col in TABLE_COLUMNS.items()}

    def to_json(self) -> dict:
        return {**asdict(self), "table": self.table()}

    def to_csv(self, name: str = "model") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["Model [Token Method]", *TABLE_COLUMNS.values()])
        writer.writerow([name, *("" if v is None else f"{v:.3f}" for v in self.table().values())])
        return buf.getvalue()


def community_table(records: Sequence[PredictionRecord], communities: Iterable[str] | None = None) -> list[dict]:
    probs = np.array([r.class_probs for r in records])
    toxic_score = probs[:, TOXIC_CLASSES[0]] + probs[:, TOXIC_CLASSES[1]]
    is_toxic = np.array([r.gt_label != NORMAL for r in records])
    if communities is None:
        communities = sorted({c for r in records for c in r.communities})
    rows = []
    for c in communities:
        mentions = np.array([c in r.communities for r in records])
        rows.append({"community": c, "n_posts": int(mentions.sum()), **bias_aucs(toxic_score, is_toxic, mentions)})
    return rows


def _mean_defined(values) -> float | None:
    v = [x for x in values if x is not None]
    return float(np.mean(v)) if v else None


def evaluate(records: Sequence[PredictionRecord], communities: Iterable[str] | None = None,
             gmb_power: float = DEFAULT_GMB_POWER, per_post_auprc: bool = False) -> EvalReport:
    """Fold prediction records into the full report."""
    if not records:
        raise ValueError("no prediction records")
    y_true = np.array([LABEL_INDEX[r.gt_label] for r in records])
    y_pred = np.array([LABEL_INDEX[r.predicted_label] for r in records])
    probs = np.array([r.class_probs for r in records])
    table = community_table(records, communities)
    selections = [r.selected for r in records]
    has_sel = all(s is not None for s in selections)
    gts = [r.gt_rationale for r in records]
    return EvalReport(
        accuracy=accuracy(y_true, y_pred),
        macro_f1=macro_f1(y_true, y_pred),
        auroc=multiclass_auroc(probs, y_true),
        gmb_subgroup=gmb((row["subgroup"] for row in table), gmb_power),
        gmb_bpsn=gmb((row["bpsn"] for row in table), gmb_power),
        gmb_bnsp=gmb((row["bnsp"] for row in table), gmb_power),
        iou_f1=iou_f1(selections, gts) if has_sel else None,
        token_f1=token_f1(selections, gts) if has_sel else None,
        auprc=token_auprc([r.token_scores for r in records], gts, per_post=per_post_auprc),
        comprehensiveness=_mean_defined(r.comprehensiveness for r in records),
        sufficiency=_mean_defined(r.sufficiency for r in records),
        per_community=table,
        n_records=len(records),
    )


def label_name(index: int) -> str:
    return LABELS[index]


def constant_region_variation(attention, gt_attention) -> float:
    """Sum of ``|a_t - a_{t+1}|`` over neighbouring tokens whose ground-truth
    attention is equal, i.e. inside regions where attention should be flat."""
    a = np.asarray(attention, dtype=np.float64)
    g = np.asarray(gt_attention, dtype=np.float64)
    flat = g[1:] == g[:-1]
    return float(np.sum(np.abs(np.diff(a))[flat]))
