"""Classification metrics, rare-class selection, zero-shot comparison, and a
Mann-Whitney U test with an exact small-sample path.

Every scalar metric is derived from the confusion matrix carried in the
report, so all of them can be independently recomputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass
class MetricsReport:
    """Confusion matrix plus derived scalars for one evaluated classifier.

    Macro metrics average only over classes present in the evaluated data;
    a class that was never predicted contributes precision 0 and is listed
    in undefined_precision_classes.
    """

    participant: str
    confusion: np.ndarray  # (K, K), rows = true class, cols = predicted
    accuracy: float
    macro_accuracy: float
    macro_precision: float
    macro_f1: float
    per_class_accuracy: np.ndarray  # (K,), NaN for classes absent from the data
    undefined_precision_classes: list[int] = field(default_factory=list)

    def scalars(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_accuracy": self.macro_accuracy,
            "macro_precision": self.macro_precision,
            "macro_f1": self.macro_f1,
        }


def confusion_matrix(
    true_labels: np.ndarray, predicted: np.ndarray, num_classes: int
) -> np.ndarray:
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (np.asarray(true_labels), np.asarray(predicted)), 1)
    return confusion


def metrics_from_confusion(confusion: np.ndarray, participant: str = "global") -> MetricsReport:
    """Derive accuracy, macro accuracy (mean per-class recall), macro
    precision, and macro F1 from a confusion matrix."""
    confusion = np.asarray(confusion)
    k = confusion.shape[0]
    total = confusion.sum()
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    diag = np.diag(confusion).astype(np.float64)

    present = row > 0
    per_class = np.full(k, np.nan)
    per_class[present] = diag[present] / row[present]

    predicted_any = col > 0
    precision = np.zeros(k)
    precision[predicted_any] = diag[predicted_any] / col[predicted_any]
    undefined = sorted(np.flatnonzero(present & ~predicted_any).tolist())

    f1 = np.zeros(k)
    for j in np.flatnonzero(present):
        p, r = precision[j], per_class[j]
        f1[j] = 2 * p * r / (p + r) if (p + r) > 0 else 0.0

    return MetricsReport(
        participant=participant,
        confusion=confusion,
        accuracy=float(diag.sum() / total) if total else 0.0,
        macro_accuracy=float(np.mean(per_class[present])) if present.any() else 0.0,
        macro_precision=float(np.mean(precision[present])) if present.any() else 0.0,
        macro_f1=float(np.mean(f1[present])) if present.any() else 0.0,
        per_class_accuracy=per_class,
        undefined_precision_classes=undefined,
    )


def evaluate(predictor, dataset, participant: str = "global") -> MetricsReport:
    """Score a classifier (anything with .predict, or a callable) on a dataset."""
    if dataset.num_samples == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    predict: Callable = getattr(predictor, "predict", predictor)
    predicted = np.asarray(predict(dataset.features), dtype=np.int64)
    confusion = confusion_matrix(dataset.labels, predicted, dataset.num_classes)
    return metrics_from_confusion(confusion, participant=participant)


def summarize_reports(reports: Sequence[MetricsReport]) -> dict:
    """Participant-averaged scalar metrics (the cross-participant utility view)."""
    return {
        key: float(np.mean([r.scalars()[key] for r in reports]))
        for key in ("accuracy", "macro_accuracy", "macro_precision", "macro_f1")
    }


# ---------------------------------------------------------------------------
# Rare-class and zero-shot protocols


def select_rare_classes(counts_row: np.ndarray) -> tuple[int, int]:
    """The two classes with the fewest local training samples (zero counts
    are eligible); ties resolved by smaller class id."""
    counts_row = np.asarray(counts_row)
    if counts_row.size < 2:
        raise ValueError("need at least two classes")
    order = np.lexsort((np.arange(counts_row.size), counts_row))
    return int(order[0]), int(order[1])


@dataclass
class RareClassEntry:
    participant: int
    class_ids: tuple[int, int]
    train_counts: tuple[int, int]
    accuracy: dict[str, float]  # method name -> mean accuracy over the two classes


@dataclass
class ZeroShotRow:
    participant: int
    class_id: int
    local_accuracy: float
    federated_accuracy: float


def zero_shot_report(
    local_predictors: Sequence,
    federated_predictors: Sequence,
    missing_classes: Sequence[Sequence[int]],
    test,
) -> list[ZeroShotRow]:
    """Accuracy on each participant's unseen classes: isolated local training
    versus the federated model.

    A locally trained participant has no representation of an unseen class,
    so its accuracy there is structurally zero; the table quantifies what the
    shared knowledge recovers.
    """
    rows = []
    for i, classes in enumerate(missing_classes):
        if not len(classes):
            continue
        local_acc = evaluate(local_predictors[i], test, participant=str(i)).per_class_accuracy
        fed_acc = evaluate(federated_predictors[i], test, participant=str(i)).per_class_accuracy
        for j in classes:
            if np.isnan(local_acc[j]):
                continue  # class has no test samples, nothing to measure
            rows.append(
                ZeroShotRow(
                    participant=i,
                    class_id=int(j),
                    local_accuracy=float(local_acc[j]),
                    federated_accuracy=float(fed_acc[j]),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Mann-Whitney U


@dataclass
class MannWhitneyResult:
    u_statistic: float  # U for the first sample, midrank tie handling
    p_value: float  # one-sided, alternative "a tends larger than b"
    method: str  # "exact" | "normal"


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j < values.size and sorted_vals[j] == sorted_vals[i]:
            j += 1
        ranks[order[i:j]] = (i + 1 + j) / 2.0
        i = j
    return ranks


def _exact_upper_tail(doubled_ranks: list[int], n_a: int, doubled_u_obs: int) -> float:
    """P(U > u_obs) by dynamic programming over subset midrank sums.

    Counts, for every subset of size n_a of the pooled midranks, the doubled
    rank sum, then converts to the doubled-U distribution. Exact for ties.
    """
    max_sum = sum(doubled_ranks)
    counts = np.zeros((n_a + 1, max_sum + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for r in doubled_ranks:
        for k in range(n_a, 0, -1):  # descending so each item is used at most once
            counts[k, r:] += counts[k - 1, 0 : max_sum + 1 - r]
    base = n_a * (n_a + 1)  # doubled min rank sum offset
    favored = 0.0
    total = counts[n_a].sum()
    for s in range(max_sum + 1):
        if counts[n_a, s] and (s - base) > doubled_u_obs:
            favored += counts[n_a, s]
    return favored / total


def mann_whitney_u(sample_a, sample_b, exact_limit: int = 12) -> MannWhitneyResult:
    """One-sided Mann-Whitney U test for "a > b" with midrank tie handling.

    The p-value is the permutation mass strictly more favorable to the
    alternative than the observed arrangement: exact enumeration (via
    dynamic programming) when n_a + n_b <= exact_limit, a tie-corrected
    normal approximation with continuity correction otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)

    if n_a + n_b <= exact_limit:
        doubled = [int(round(2 * r)) for r in ranks]
        p = _exact_upper_tail(doubled, n_a, int(round(2 * u_a)))
        return MannWhitneyResult(u_statistic=u_a, p_value=p, method="exact")

    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    variance = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if variance <= 0:  # all observations identical
        return MannWhitneyResult(u_statistic=u_a, p_value=0.5, method="normal")
    z = (u_a + 0.5 - n_a * n_b / 2.0) / math.sqrt(variance)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return MannWhitneyResult(u_statistic=u_a, p_value=p, method="normal")
