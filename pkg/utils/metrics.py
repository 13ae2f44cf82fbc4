"""
Classification metrics for the 9 pair-activity classes: confusion matrices,
accuracy, macro F score, per-class precision/recall, and fold aggregation.
"""

import logging
import statistics
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import f1_score, precision_recall_fscore_support

from utils.errors import DataError
from utils.skeleton import CLASS_NAMES, NUM_CLASSES

logger = logging.getLogger(__name__)

AVERAGING = "macro"
SD_FORMULA = "population"
AVERAGING_SCHEMES = ("macro", "weighted")


def _check(preds, truths):
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} predictions for {len(truths)} ground-truth labels")
    return preds, truths


def confusion_matrix(preds, truths, classes=NUM_CLASSES):
    """
    Counts of (truth, prediction) pairs

    Parameters:
    preds (list[int]): Predicted class indices
    truths (list[int]): Ground-truth class indices
    classes (int): Number of classes

    Returns:
    np.ndarray: classes x classes counts, counts[i][j] = #(truth=i and pred=j)
    """
    preds, truths = _check(preds, truths)
    if len(preds) == 0:
        return np.zeros((classes, classes), dtype=np.int64)
    return sk_confusion_matrix(truths, preds, labels=list(range(classes))).astype(np.int64)


def row_normalize(counts):
    """
    Divide each row by its sum; empty rows stay zero and are reported

    Parameters:
    counts (np.ndarray): Square count matrix, rows are ground truth

    Returns:
    tuple: (ratio matrix, list of empty row indices)
    """
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=1)
    empty = [int(i) for i in np.flatnonzero(totals == 0)]
    ratios = np.zeros_like(counts)
    nonempty = totals > 0
    ratios[nonempty] = counts[nonempty] / totals[nonempty, None]
    if empty:
        names = [CLASS_NAMES[i] if len(counts) == NUM_CLASSES else str(i) for i in empty]
        logger.warning(f"Confusion rows with no ground-truth samples: {', '.join(names)}")
    return ratios, empty


def accuracy(preds, truths):
    preds, truths = _check(preds, truths)
    if len(preds) == 0:
        raise DataError("accuracy of an empty prediction set")
    counts = confusion_matrix(preds, truths)
    return float(np.trace(counts) / counts.sum())


def present_classes(truths):
    return sorted(int(c) for c in np.unique(np.asarray(truths, dtype=np.int64)))


def f_score(preds, truths, averaging=AVERAGING):
    """
    F1 averaged over the classes present in the ground truth

    Parameters:
    preds (list[int]): Predicted class indices
    truths (list[int]): Ground-truth class indices
    averaging (str): 'macro' (unweighted mean) or 'weighted' (by class support)

    Returns:
    float: F score in [0, 1]
    """
    preds, truths = _check(preds, truths)
    if len(preds) == 0:
        raise DataError("F score of an empty prediction set")
    if averaging not in AVERAGING_SCHEMES:
        raise DataError(f"unknown averaging {averaging!r}, expected one of {AVERAGING_SCHEMES}")
    return float(f1_score(truths, preds, labels=present_classes(truths), average=averaging, zero_division=0))


def precision_recall(preds, truths, classes=NUM_CLASSES):
    """Per-class precision and recall, 0 where undefined"""
    preds, truths = _check(preds, truths)
    precision, recall, _, _ = precision_recall_fscore_support(
        truths, preds, labels=list(range(classes)), average=None, zero_division=0,
    )
    return precision.astype(np.float64), recall.astype(np.float64)


@dataclass
class FoldReport:
    fold: str
    accuracy: float
    f_score: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    test_size: int
    absent_classes: list = field(default_factory=list)
    flagged: bool = False
    flag_reason: str = ""

    @property
    def normalized_confusion(self):
        return row_normalize(self.confusion)[0]

    def to_dict(self):
        return {
            "fold": self.fold,
            "accuracy": self.accuracy,
            "f_score": self.f_score,
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "test_size": self.test_size,
            "absent_classes": [CLASS_NAMES[c] for c in self.absent_classes],
            "flagged": self.flagged,
            "flag_reason": self.flag_reason,
        }


def fold_report(fold, preds, truths, averaging=AVERAGING):
    """
    Metrics of one fold's test predictions

    Parameters:
    fold (str): Fold id, the held-out subject
    preds (list[int]): Predicted class indices
    truths (list[int]): Ground-truth class indices
    averaging (str): F score averaging scheme

    Returns:
    FoldReport: Accuracy, F score, confusion counts, per-class precision/recall
    """
    counts = confusion_matrix(preds, truths)
    precision, recall = precision_recall(preds, truths)
    present = set(present_classes(truths))
    report = FoldReport(
        fold=str(fold),
        accuracy=accuracy(preds, truths),
        f_score=f_score(preds, truths, averaging),
        confusion=counts,
        precision=precision,
        recall=recall,
        test_size=int(counts.sum()),
        absent_classes=[c for c in range(NUM_CLASSES) if c not in present],
    )
    logger.info(f"Fold {fold}: accuracy {report.accuracy:.3f}, F {report.f_score:.3f} on {report.test_size} samples")
    return report


def flagged_fold(fold, reason):
    logger.warning(f"Fold {fold} flagged and excluded from aggregates: {reason}")
    empty = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    return FoldReport(
        fold=str(fold), accuracy=float("nan"), f_score=float("nan"), confusion=empty,
        precision=np.zeros(NUM_CLASSES), recall=np.zeros(NUM_CLASSES), test_size=0,
        flagged=True, flag_reason=reason,
    )


@dataclass
class AggregateReport:
    model: str
    train_data: str
    test_data: str
    accuracy_mean: float
    accuracy_sd: float
    f_score_mean: float
    f_score_sd: float
    folds: int
    excluded_folds: list = field(default_factory=list)
    averaging: str = AVERAGING
    sd_formula: str = SD_FORMULA
    config_hash: str = ""
    dataset_checksums: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def experiment(self):
        return f"{self.model}_{self.train_data}_{self.test_data}"

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "model": self.model,
            "train_data": self.train_data,
            "test_data": self.test_data,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_sd": self.accuracy_sd,
            "f_score_mean": self.f_score_mean,
            "f_score_sd": self.f_score_sd,
            "folds": self.folds,
            "excluded_folds": self.excluded_folds,
            "averaging": self.averaging,
            "sd_formula": self.sd_formula,
            "config_hash": self.config_hash,
            "dataset_checksums": self.dataset_checksums,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data):
        data = {k: v for k, v in data.items() if k != "experiment"}
        return cls(**data)


def aggregate(reports, model, train_data, test_data, **provenance):
    """
    Mean and population SD of fold metrics, skipping flagged folds

    Parameters:
    reports (list[FoldReport]): Per-fold results in any order
    model (str): 'lstm' or 'vae'
    train_data (str): 'grouped' or 'pair'
    test_data (str): 'grouped' or 'pair'
    provenance: config_hash, dataset_checksums, notes

    Returns:
    AggregateReport: Order-independent summary
    """
    used = [r for r in reports if not r.flagged]
    excluded = sorted(r.fold for r in reports if r.flagged)
    if not used:
        raise DataError(f"no usable folds for {model} {train_data}->{test_data}")
    accuracies = [r.accuracy for r in used]
    scores = [r.f_score for r in used]
    return AggregateReport(
        model=model,
        train_data=train_data,
        test_data=test_data,
        accuracy_mean=statistics.fmean(accuracies),
        accuracy_sd=statistics.pstdev(accuracies),
        f_score_mean=statistics.fmean(scores),
        f_score_sd=statistics.pstdev(scores),
        folds=len(used),
        excluded_folds=excluded,
        **provenance,
    )
