"""Classification metrics: accuracy, support-weighted F1, and seed summaries."""
from __future__ import annotations

from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError


def _pair(preds, truth) -> Tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if preds.shape != truth.shape:
        raise DataError(f"predictions ({preds.size}) and labels ({truth.size}) differ in length")
    if preds.size == 0:
        raise DataError("metrics need at least one sample")
    return preds, truth


def accuracy(preds, truth) -> float:
    """Fraction of positions where prediction equals label."""
    preds, truth = _pair(preds, truth)
    return float(np.mean(preds == truth))


def confusion_matrix(preds, truth, n_classes: Optional[int] = None) -> np.ndarray:
    """``M[t, p]`` counts samples with true class ``t`` predicted as ``p``."""
    preds, truth = _pair(preds, truth)
    K = int(max(preds.max(), truth.max()) + 1) if n_classes is None else n_classes
    m = np.zeros((K, K), dtype=np.int64)
    np.add.at(m, (truth.astype(int), preds.astype(int)), 1)
    return m


def weighted_f1(preds, truth, n_classes: Optional[int] = None) -> float:
    """Per-class F1 averaged with weights ``N_c / N``.

    Any 0/0 in a class's precision, recall or F1 resolves to 0; classes with no
    support get weight 0.
    """
    m = confusion_matrix(preds, truth, n_classes)
    tp = np.diag(m).astype(float)
    pred_tot = m.sum(axis=0).astype(float)
    support = m.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return float(np.sum(support / support.sum() * f1))


def mean_std(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise DataError("cannot summarise an empty list")
    return float(v.mean()), float(v.std())


def summarize(records: Sequence, keys: Sequence[str] = ("test_acc", "test_f1")) -> Dict[str, Tuple[float, float]]:
    """``{metric: (mean, std)}`` over run records (objects or dicts)."""
    def get(r, k):
        return r[k] if isinstance(r, dict) else getattr(r, k)

    return {k: mean_std(get(r, k) for r in records) for k in keys}


def format_summary(summary: Dict[str, Tuple[float, float]], n_runs: int) -> str:
    lines = [f"{'metric':<10} {'mean':>8} {'std':>8}  (n={n_runs})"]
    for k, (m, s) in summary.items():
        lines.append(f"{k:<10} {m:>8.4f} {s:>8.4f}")
    return "\n".join(lines)
