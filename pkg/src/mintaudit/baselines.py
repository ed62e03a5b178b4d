"""Shadow-free membership inference baselines over model outputs.

Three reference attacks that need only the audited model's predictions:
a loss threshold, a max-confidence threshold, and a modified prediction
entropy. Raw statistics keep their textbook orientation; membership_score
is always oriented so that higher means "more likely a member", which is
what every downstream ROC expects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import AuditedModelCheckpoint, predict

BASELINE_METHODS = ("yeom_loss", "salem_confidence", "song_mentropy")

_EPS = 1e-12


@dataclass(frozen=True)
class BaselineScore:
    sample_id: str
    method: str
    raw_statistic: float
    membership_score: float


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"expected a (samples, classes) probability matrix, got {probs.shape}")
    return np.clip(probs, _EPS, 1.0 - _EPS)


def _check_labels(probs: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {probs.shape[0]} samples")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("labels outside the probability matrix's class range")
    return labels


def yeom_from_probs(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy loss of each sample; members tend to have lower loss."""
    probs = _check_probs(probs)
    labels = _check_labels(probs, labels)
    loss = -np.log(probs[np.arange(labels.size), labels])
    return loss, -loss


def salem_from_probs(probs) -> tuple[np.ndarray, np.ndarray]:
    """Maximum softmax entry; members tend to be predicted more confidently."""
    probs = _check_probs(probs)
    top = probs.max(axis=1)
    return top, top


def song_from_probs(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    """Modified prediction entropy, low for confident correct predictions.

    -(1 - p_y) log(p_y) - sum_{c != y} p_c log(1 - p_c), guarded at 1e-12.
    """
    probs = _check_probs(probs)
    labels = _check_labels(probs, labels)
    rows = np.arange(labels.size)
    p_true = probs[rows, labels]
    term_all = probs * np.log(1.0 - probs)
    mentropy = -(1.0 - p_true) * np.log(p_true) - (term_all.sum(axis=1) - term_all[rows, labels])
    return mentropy, -mentropy


def _wrap(sample_ids, method: str, raw: np.ndarray, oriented: np.ndarray) -> list[BaselineScore]:
    if sample_ids is None:
        sample_ids = [f"sample-{i:06d}" for i in range(raw.size)]
    if len(sample_ids) != raw.size:
        raise ValueError(f"{len(sample_ids)} sample ids for {raw.size} scores")
    if not (np.isfinite(raw).all() and np.isfinite(oriented).all()):
        raise ValueError(f"{method} produced non-finite statistics")
    return [
        BaselineScore(str(sid), method, float(r), float(s))
        for sid, r, s in zip(sample_ids, raw, oriented)
    ]


def yeom_score(checkpoint: AuditedModelCheckpoint, images, labels,
               sample_ids=None) -> list[BaselineScore]:
    raw, oriented = yeom_from_probs(predict(checkpoint, images), labels)
    return _wrap(sample_ids, "yeom_loss", raw, oriented)


def salem_score(checkpoint: AuditedModelCheckpoint, images,
                sample_ids=None) -> list[BaselineScore]:
    raw, oriented = salem_from_probs(predict(checkpoint, images))
    return _wrap(sample_ids, "salem_confidence", raw, oriented)


def song_score(checkpoint: AuditedModelCheckpoint, images, labels,
               sample_ids=None) -> list[BaselineScore]:
    raw, oriented = song_from_probs(predict(checkpoint, images), labels)
    return _wrap(sample_ids, "song_mentropy", raw, oriented)


def baseline_score_rows(scores: list[BaselineScore], class_by_id=None) -> list[dict]:
    """Rows for the shared score CSV; class_index filled when known."""
    rows = []
    for item in scores:
        rows.append({
            "method": item.method,
            "sample_id": item.sample_id,
            "class_index": "" if class_by_id is None else class_by_id.get(item.sample_id, ""),
            "raw_statistic": repr(item.raw_statistic),
            "score": repr(item.membership_score),
            "predicted_member": "",
        })
    return rows
