"""Quality and uncertainty metrics: error, NLL, entropy, calibration, ROC.

All logarithms are natural, so predictive entropy is bounded by ln(C) and
the uniform distribution hits the bound exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError
from .layers import cross_entropy_loss
from .ensemble import DeepEnsemble, SubEnsemble, combine, member_probabilities, predict


@dataclass
class MetricsReport:
    error_percent: float
    nll: float
    mean_entropy: float
    confidence: np.ndarray  # per-example max probability
    correct: np.ndarray  # per-example boolean
    entropy: np.ndarray  # per-example predictive entropy (nats)


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    mean_confidence: float | None  # None when the bin is empty
    accuracy: float | None
    count: int


@dataclass(frozen=True)
class CalibrationCurve:
    bins: tuple[CalibrationBin, ...]


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score cutoff per point; +inf at (0, 0)
    auc: float


def entropy(p: np.ndarray) -> float:
    """Shannon entropy -sum(p * ln p) in nats; zero components contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ConfigurationError(f"entropy expects a probability vector, got shape {p.shape}")
    if p.min() < 0 or abs(p.sum() - 1.0) > 1e-6:
        raise ConfigurationError("entropy input must be a distribution (nonnegative, sum 1)")
    return float(entropy_rows(p[None])[0])


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a (batch, classes) probability matrix."""
    safe = np.where(probs > 0, probs, 1.0)
    return -(np.where(probs > 0, probs * np.log(safe), 0.0)).sum(axis=1)


def evaluate_probabilities(probs: np.ndarray, labels: np.ndarray) -> MetricsReport:
    """Metrics for precomputed class probabilities against integer labels."""
    predictions = probs.argmax(axis=1)  # ties break toward the lowest class index
    correct = predictions == np.asarray(labels)
    return MetricsReport(
        error_percent=100.0 * (1.0 - float(correct.mean())),
        nll=cross_entropy_loss(probs, labels),
        mean_entropy=float(entropy_rows(probs).mean()),
        confidence=probs.max(axis=1),
        correct=correct,
        entropy=entropy_rows(probs),
    )


def evaluate(ensemble: SubEnsemble | DeepEnsemble, data: Dataset) -> MetricsReport:
    """Classification error (%), NLL, and entropy of an ensemble on a dataset."""
    if data.split == "ood" or data.labels.min() < 0:
        raise ConfigurationError("evaluate needs class labels; OOD data has none")
    return evaluate_probabilities(predict(ensemble, data.images), data.labels)


def predictive_entropies(ensemble: SubEnsemble | DeepEnsemble, data: Dataset,
                         n: int | None = None) -> np.ndarray:
    """Per-example entropy of the (first n members') averaged prediction."""
    return entropy_rows(combine(member_probabilities(ensemble, data.images), n))


def calibration_curve(confidence: np.ndarray, correct: np.ndarray,
                      num_bins: int = 10) -> CalibrationCurve:
    """Equal-width confidence bins on [0, 1] with per-bin accuracy.

    Empty bins are emitted with count 0 and accuracy/mean confidence absent.
    """
    if num_bins < 1:
        raise ConfigurationError(f"num_bins must be >= 1, got {num_bins}")
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if confidence.size == 0 or confidence.shape != correct.shape:
        raise ConfigurationError("confidence and correctness records must match and be non-empty")
    index = np.clip((confidence * num_bins).astype(int), 0, num_bins - 1)
    bins = []
    for b in range(num_bins):
        mask = index == b
        count = int(mask.sum())
        bins.append(CalibrationBin(
            lo=b / num_bins,
            hi=(b + 1) / num_bins,
            mean_confidence=float(confidence[mask].mean()) if count else None,
            accuracy=float(correct[mask].mean()) if count else None,
            count=count,
        ))
    return CalibrationCurve(tuple(bins))


def roc_auc(scores: np.ndarray, ood_labels: np.ndarray) -> RocCurve:
    """ROC curve for OOD detection: OOD is the positive class, higher score
    (entropy) means more OOD. AUC by trapezoidal integration over a sweep of
    the unique score thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(ood_labels, dtype=bool)
    num_pos = int(positive.sum())
    num_neg = positive.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise ConfigurationError("ROC needs both in-distribution and OOD examples")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positive[order]
    # one ROC point per unique threshold: predict OOD when score >= threshold
    last_of_group = np.r_[np.nonzero(np.diff(sorted_scores))[0], scores.size - 1]
    tp = np.cumsum(sorted_pos)[last_of_group]
    fp = np.cumsum(~sorted_pos)[last_of_group]
    tpr = np.r_[0.0, tp / num_pos]
    fpr = np.r_[0.0, fp / num_neg]
    thresholds = np.r_[np.inf, sorted_scores[last_of_group]]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)
