"""ROC / AUC / accuracy evaluation for membership scores.

Two independent AUC routes are kept side by side on purpose: `roc_auc`
sweeps thresholds and integrates the curve, `auc_bruteforce_oracle` counts
member/external pairs directly. Ties get half credit in both, so the two
must agree to floating-point accuracy; the test suite enforces that.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UndefinedMetricError


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ValueError(f"scores/labels must be matching 1-D arrays, got {scores.shape} and {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("need both member and external labels to rank against")
    return scores, labels


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered from the strictest threshold to the loosest.

    `thresholds[0]` is +inf (nothing predicted member), so the curve starts
    at (fpr, tpr) = (0, 0) and ends at (1, 1).
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                writer.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_auc(scores, labels) -> RocCurve:
    """Build the ROC curve and its AUC from membership scores.

    `labels` is True for members. Equal scores collapse into a single
    threshold step, which makes the trapezoidal area identical to the
    half-credit pairwise count.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    tp_cum = np.cumsum(sorted_labels)
    fp_cum = np.cumsum(~sorted_labels)

    # keep only the last index of every run of equal scores
    step_end = np.nonzero(np.diff(sorted_scores))[0]
    keep = np.concatenate([step_end, [sorted_scores.size - 1]])

    tp = np.concatenate([[0], tp_cum[keep]]).astype(np.int64)
    fp = np.concatenate([[0], fp_cum[keep]]).astype(np.int64)
    thresholds = np.concatenate([[np.inf], sorted_scores[keep]])

    # trapezoid with integer numerator: exact up to one final division
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = area2 / (2.0 * n_pos * n_neg)

    return RocCurve(
        thresholds=thresholds,
        fpr=fp / float(n_neg),
        tpr=tp / float(n_pos),
        auc=float(auc),
    )


def auc_bruteforce_oracle(scores, labels) -> float:
    """Exact AUC by comparing every (member, external) score pair.

    O(n_m * n_e); meant as the independent check for `roc_auc`, not for
    large inputs.
    """
    scores, labels = _check_scores_labels(scores, labels)
    member_scores = scores[labels]
    external_scores = scores[~labels]
    diffs = member_scores[:, None] - external_scores[None, :]
    wins = np.count_nonzero(diffs > 0)
    ties = np.count_nonzero(diffs == 0)
    return (wins + 0.5 * ties) / (member_scores.size * external_scores.size)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores, labels = _check_scores_labels(scores, labels)
    predicted = scores >= threshold
    return float(np.mean(predicted == labels))


def balanced_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """(TPR + TNR) / 2 with members predicted at score >= threshold."""
    scores, labels = _check_scores_labels(scores, labels)
    predicted = scores >= threshold
    tpr = float(np.mean(predicted[labels]))
    tnr = float(np.mean(~predicted[~labels]))
    return 0.5 * (tpr + tnr)


def best_balanced_accuracy(scores, labels) -> tuple[float, float]:
    """Maximum balanced accuracy over all thresholds, with the argmax.

    Candidate thresholds are the observed scores plus +inf; the all-member
    prediction at -inf is dominated by symmetry and never needed.
    """
    scores, labels = _check_scores_labels(scores, labels)
    candidates = np.concatenate([np.unique(scores), [np.inf]])
    best_value, best_threshold = -1.0, math.inf
    for t in candidates:
        value = balanced_accuracy(scores, labels, threshold=float(t))
        if value > best_value:
            best_value, best_threshold = value, float(t)
    return best_value, best_threshold


SCORE_CSV_FIELDS = ["method", "sample_id", "class_index", "raw_statistic", "score", "predicted_member"]


def append_scores_csv(path, rows) -> None:
    """Append score rows (dicts keyed by SCORE_CSV_FIELDS) to one shared CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCORE_CSV_FIELDS)
        if write_header:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass(frozen=True)
class ClassMetrics:
    auc: float
    accuracy: float
    balanced_accuracy: float
    balanced_accuracy_best: float
    n_members: int
    n_externals: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize_scores(scores, labels, threshold: float = 0.5) -> ClassMetrics:
    scores, labels = _check_scores_labels(scores, labels)
    best, _ = best_balanced_accuracy(scores, labels)
    return ClassMetrics(
        auc=roc_auc(scores, labels).auc,
        accuracy=accuracy(scores, labels, threshold),
        balanced_accuracy=balanced_accuracy(scores, labels, threshold),
        balanced_accuracy_best=best,
        n_members=int(labels.sum()),
        n_externals=int(labels.size - labels.sum()),
    )


@dataclass
class MintAuditReport:
    """Per-class and pooled membership-detection metrics for one layer audit."""

    checkpoint_id: str
    layer_index: int
    config_hash: str
    per_class: dict[int, ClassMetrics]
    aggregate: ClassMetrics
    mean_class_auc: float

    def to_dict(self) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "layer_index": self.layer_index,
            "config_hash": self.config_hash,
            "per_class": {str(c): m.to_dict() for c, m in sorted(self.per_class.items())},
            "aggregate": self.aggregate.to_dict(),
            "mean_class_auc": self.mean_class_auc,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, payload: dict) -> "MintAuditReport":
        per_class = {int(c): ClassMetrics(**m) for c, m in payload["per_class"].items()}
        return cls(
            checkpoint_id=payload["checkpoint_id"],
            layer_index=payload["layer_index"],
            config_hash=payload["config_hash"],
            per_class=per_class,
            aggregate=ClassMetrics(**payload["aggregate"]),
            mean_class_auc=payload["mean_class_auc"],
        )

    @classmethod
    def load(cls, path) -> "MintAuditReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_audit_report(
    per_class_scores: dict[int, tuple[np.ndarray, np.ndarray]],
    *,
    checkpoint_id: str,
    layer_index: int,
    config_hash: str = "",
    threshold: float = 0.5,
) -> MintAuditReport:
    """Assemble a report from {class: (scores, membership_labels)}.

    The aggregate row is computed over the pooled scores of all classes;
    `mean_class_auc` is the unweighted mean of the per-class AUCs, since
    both summaries are defensible and plots may want either.
    """
    if not per_class_scores:
        raise ValueError("need at least one class worth of scores")
    per_class = {}
    pooled_scores, pooled_labels = [], []
    for class_index, (scores, labels) in sorted(per_class_scores.items()):
        per_class[class_index] = summarize_scores(scores, labels, threshold)
        pooled_scores.append(np.asarray(scores, dtype=np.float64))
        pooled_labels.append(np.asarray(labels, dtype=bool))
    aggregate = summarize_scores(
        np.concatenate(pooled_scores), np.concatenate(pooled_labels), threshold
    )
    mean_auc = float(np.mean([m.auc for m in per_class.values()]))
    return MintAuditReport(
        checkpoint_id=checkpoint_id,
        layer_index=layer_index,
        config_hash=config_hash,
        per_class=per_class,
        aggregate=aggregate,
        mean_class_auc=mean_auc,
    )
