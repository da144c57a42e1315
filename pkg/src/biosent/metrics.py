"""Classification metrics: balanced accuracy, AUROC, AUC-PR, Cohen's kappa, weighted F1."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabels


def _pair(labels, preds):
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(preds).reshape(-1)
    if y.size == 0:
        raise ValueError("metrics need at least one sample")
    if y.shape != p.shape:
        raise ValueError(f"labels ({y.size}) and predictions ({p.size}) differ in length")
    return y, p


def _confusion(y, p):
    classes = np.union1d(y, p)
    yi = np.searchsorted(classes, y)
    pi = np.searchsorted(classes, p)
    cm = np.zeros((classes.size, classes.size), dtype=np.int64)
    np.add.at(cm, (yi, pi), 1)
    return classes, cm


def balanced_accuracy(labels, predictions) -> float:
    """Mean recall over the classes present in ``labels``."""
    y, p = _pair(labels, predictions)
    _, cm = _confusion(y, p)
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def _binary_scores(labels, scores):
    y, s = _pair(labels, scores)
    y = y.astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("binary metrics need labels in {0, 1}")
    return y, s.astype(np.float64)


def auroc(labels, scores) -> float:
    """P(score of a random positive > score of a random negative), ties counting ½."""
    y, s = _binary_scores(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    # average ranks over tie groups
    bounds = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [s.size]))
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(labels, scores) -> float:
    """Step-wise average precision Σ (R_k − R_{k−1}) P_k over descending distinct thresholds."""
    y, s = _binary_scores(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateLabels("AUC-PR needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    ys, ss = y[order], s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1 - ys)
    last = np.concatenate((np.flatnonzero(np.diff(ss)), [ss.size - 1]))
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * precision))


def cohen_kappa(labels, predictions) -> float:
    """(p_o − p_e) / (1 − p_e); 0 when chance agreement is already 1."""
    y, p = _pair(labels, predictions)
    _, cm = _confusion(y, p)
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float(np.sum(cm.sum(axis=0) * cm.sum(axis=1))) / (n * n)
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def weighted_f1(labels, predictions) -> float:
    """Support-weighted mean of per-class F1 over classes present in ``labels``."""
    y, p = _pair(labels, predictions)
    _, cm = _confusion(y, p)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(f1 * support) / support.sum())


METRICS = {
    "balanced_accuracy": balanced_accuracy,
    "auroc": auroc,
    "auc_pr": auc_pr,
    "cohen_kappa": cohen_kappa,
    "weighted_f1": weighted_f1,
}
BINARY_METRICS = ("balanced_accuracy", "auroc", "auc_pr")
MULTICLASS_METRICS = ("balanced_accuracy", "cohen_kappa", "weighted_f1")


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    n_samples: int = 0
    n_classes: int = 0

    def to_dict(self):
        return {"metrics": dict(self.metrics), "n_samples": self.n_samples, "n_classes": self.n_classes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "n_samples", "n_classes"])
        for k in sorted(self.metrics):
            w.writerow([k, repr(float(self.metrics[k])), self.n_samples, self.n_classes])
        return buf.getvalue()


def evaluate(labels, probabilities, n_classes: int) -> EvalReport:
    """Metric set for a binary (``n_classes`` 1 or 2) or multi-class task.

    ``probabilities`` is ``(n,)`` positive-class scores for binary tasks or an
    ``(n, C)`` matrix for multi-class ones.
    """
    y = np.asarray(labels).reshape(-1)
    probs = np.asarray(probabilities, dtype=np.float64)
    out = {}
    if n_classes <= 2:
        score = probs if probs.ndim == 1 else probs[:, -1]
        pred = (score >= 0.5).astype(np.int64)
        out["balanced_accuracy"] = balanced_accuracy(y, pred)
        try:
            out["auroc"] = auroc(y, score)
        except DegenerateLabels:
            pass
        try:
            out["auc_pr"] = auc_pr(y, score)
        except DegenerateLabels:
            pass
    else:
        pred = probs.argmax(axis=1)
        for name in MULTICLASS_METRICS:
            out[name] = METRICS[name](y, pred)
    return EvalReport(out, int(y.size), int(max(n_classes, 2)))
