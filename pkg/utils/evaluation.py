"""
Experiment drivers: leave-one-subject-out training and testing, cross-condition
testing (train on grouped data, test on pair data), per-fold checkpoints, and
report files.
"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from utils.checkpoint import load_checkpoint, load_sidecar, save_checkpoint
from utils.config import config_hash
from utils.dataset_store import check_compatible, dataset_checksum
from utils.errors import DataError, ParameterMismatchError
from utils.metrics import AggregateReport, aggregate, flagged_fold, fold_report, row_normalize
from utils.models import (
    MODEL_KINDS,
    classify,
    extract_transfer_classifier,
    model_from_checkpoint,
    predict_source,
    swap_diagnostic,
    train_lstm_classifier,
    train_vae,
)
from utils.skeleton import CLASS_NAMES
from utils.windowing import build_loso_folds

logger = logging.getLogger(__name__)

DATA_KINDS = ("grouped", "pair")

# (model, train data, test data) -> (accuracy mean, accuracy SD, F mean, F SD) as published
REFERENCE_RESULTS = {
    ("lstm", "pair", "pair"): (0.548, 0.139, 0.676, 0.116),
    ("lstm", "grouped", "grouped"): (0.786, 0.085, 0.776, 0.094),
    ("lstm", "grouped", "pair"): (0.615, 0.111, 0.584, 0.115),
    ("vae", "pair", "pair"): (0.614, 0.114, 0.586, 0.119),
    ("vae", "grouped", "grouped"): (0.864, 0.110, 0.996, 0.002),
    ("vae", "grouped", "pair"): (0.616, 0.029, 0.594, 0.027),
}
EXPERIMENTS = list(REFERENCE_RESULTS)
CROSS_BAND = 0.15
SWAP_DIAGNOSTIC_SAMPLES = 64


def experiment_name(model, train_data, test_data):
    return f"{model}_{train_data}_{test_data}"


def classifier_kind(model):
    """Checkpoint kind that classifies for a model family"""
    return "lstm" if model == "lstm" else "transfer"


def checkpoint_file(checkpoint_dir, model, train_data, subject, kind):
    return Path(checkpoint_dir) / f"{model}_{train_data}" / f"{subject}_{kind}.ckpt"


def fold_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _check_model(model):
    if model not in MODEL_KINDS:
        raise DataError(f"unknown model {model!r}, expected one of {MODEL_KINDS}")


def train_fold(dataset, fold, model, config, seed):
    """
    Train the requested model family on one fold's training samples

    Parameters:
    dataset (DatasetManifest): Training dataset
    fold (Fold): Fold whose train indices are used
    model (str): 'lstm' or 'vae'
    config (PipelineConfig): Pipeline configuration
    seed (int): Fold seed

    Returns:
    dict: checkpoint kind -> TrainingResult ('lstm', or 'vae' and 'transfer')
    """
    _check_model(model)
    logger.info(f"Training {model} for fold {fold.subject} on {len(fold.train)} samples")
    if model == "lstm":
        return {"lstm": train_lstm_classifier(dataset, config, seed, fold.train)}
    vae = train_vae(dataset, config, seed, fold.train)
    transfer = extract_transfer_classifier(vae.model, dataset, config, seed, fold.train)
    return {"vae": vae, "transfer": transfer}


def save_fold(results, checkpoint_dir, model, train_data, fold, config, seed, checksum):
    """
    Write every checkpoint of a trained fold with its provenance sidecar

    Returns:
    dict: checkpoint kind -> content hash
    """
    hashes = {}
    for kind, result in results.items():
        sidecar = {
            "fold": fold.subject,
            "model": model,
            "train_data": train_data,
            "seed": seed,
            "config": config.to_dict(),
            "config_hash": config_hash(config),
            "dataset_checksum": checksum,
            "train_samples": len(fold.train),
            "initial_loss": result.initial_loss,
            "loss_curve": result.loss_curve,
        }
        path = checkpoint_file(checkpoint_dir, model, train_data, fold.subject, kind)
        hashes[kind] = save_checkpoint(path, result.to_checkpoint({"fold": fold.subject}), sidecar)
    return hashes


def load_fold_classifier(checkpoint_dir, model, train_data, subject, expected_checksum=None):
    """
    Load the classifier a fold was trained into

    Parameters:
    checkpoint_dir (str | Path): Checkpoint root
    model (str): 'lstm' or 'vae'
    train_data (str): Data kind the fold was trained on
    subject (str): Held-out subject
    expected_checksum (str): When given, the checkpoint must come from this dataset

    Returns:
    LstmClassifier | TransferClassifier: Restored classifier
    """
    path = checkpoint_file(checkpoint_dir, model, train_data, subject, classifier_kind(model))
    checkpoint = load_checkpoint(path)
    if expected_checksum is not None:
        trained_on = load_sidecar(path).get("dataset_checksum")
        if trained_on != expected_checksum:
            raise ParameterMismatchError(
                f"{path} was trained on dataset {str(trained_on)[:12]}, not {expected_checksum[:12]}; retrain"
            )
    return model_from_checkpoint(checkpoint)


def score_classifier(classifier, dataset, indices, fold_id):
    """
    Predict a set of samples and score the predictions

    Parameters:
    classifier (LstmClassifier | TransferClassifier): Trained classifier
    dataset (DatasetManifest): Source of test samples
    indices (list[int]): Test sample indices
    fold_id (str): Fold name for the report

    Returns:
    FoldReport: Metrics on the test samples
    """
    indices = list(indices)
    probabilities = predict_source(classifier, dataset, indices)
    truths = dataset.labels(indices)
    report = fold_report(fold_id, classify(probabilities), truths)
    diagnostic = indices[:SWAP_DIAGNOSTIC_SAMPLES]
    swap_diagnostic(classifier, dataset.tensors(diagnostic, classifier.dtype), dataset.labels(diagnostic))
    return report


def _fold_classifier(dataset, fold, index, model, config, seed, checkpoint_dir, checksum, from_checkpoints):
    train_data = dataset.provenance
    if from_checkpoints:
        return load_fold_classifier(checkpoint_dir, model, train_data, fold.subject, checksum)
    results = train_fold(dataset, fold, model, config, fold_seed(seed, index))
    if checkpoint_dir is not None:
        save_fold(results, checkpoint_dir, model, train_data, fold, config, fold_seed(seed, index), checksum)
    return results[classifier_kind(model)].model


def _loso_fold(dataset, fold, index, model, config, seed, checkpoint_dir, checksum, from_checkpoints):
    if not fold.is_usable:
        return flagged_fold(fold.subject, f"{len(fold.train)} training and {len(fold.test)} test samples")
    classifier = _fold_classifier(dataset, fold, index, model, config, seed, checkpoint_dir, checksum, from_checkpoints)
    return score_classifier(classifier, dataset, fold.test, fold.subject)


def _workers(config):
    return max(1, int(config.training.workers))


def run_loso(dataset, model, config, seed, checkpoint_dir=None, from_checkpoints=False):
    """
    Leave-one-subject-out evaluation on one dataset

    Parameters:
    dataset (DatasetManifest): Grouped or pair dataset
    model (str): 'lstm' or 'vae'
    config (PipelineConfig): Pipeline configuration
    seed (int): Experiment seed; each fold derives its own
    checkpoint_dir (str | Path): Where fold checkpoints are written or read
    from_checkpoints (bool): Load fold models instead of training them

    Returns:
    tuple: (list[FoldReport] in subject order, AggregateReport)
    """
    _check_model(model)
    folds = build_loso_folds(dataset)
    checksum = dataset_checksum(dataset)
    logger.info(f"LOSO {model} on {dataset.provenance} data: {len(folds)} folds, {len(dataset)} samples")
    reports = Parallel(n_jobs=_workers(config))(
        delayed(_loso_fold)(dataset, fold, i, model, config, seed, checkpoint_dir, checksum, from_checkpoints)
        for i, fold in enumerate(folds)
    )
    summary = aggregate(
        reports, model, dataset.provenance, dataset.provenance,
        config_hash=config_hash(config),
        dataset_checksums={dataset.provenance: checksum},
        notes={"seed": seed},
    )
    _log_aggregate(summary)
    return reports, summary


def _cross_fold(train_dataset, test_dataset, fold, index, model, config, seed, checkpoint_dir, checksum,
                from_checkpoints):
    if not fold.train:
        return flagged_fold(fold.subject, "no training samples")
    classifier = _fold_classifier(
        train_dataset, fold, index, model, config, seed, checkpoint_dir, checksum, from_checkpoints,
    )
    return score_classifier(classifier, test_dataset, range(len(test_dataset)), fold.subject)


def run_cross(train_dataset, test_dataset, model, config, seed, checkpoint_dir=None, from_checkpoints=False):
    """
    Train per LOSO fold on one dataset and test every fold model on all of another

    Parameters:
    train_dataset (DatasetManifest): Usually the grouped dataset
    test_dataset (DatasetManifest): Usually the pair dataset
    model (str): 'lstm' or 'vae'
    config (PipelineConfig): Pipeline configuration
    seed (int): Experiment seed
    checkpoint_dir (str | Path): Where fold checkpoints are written or read
    from_checkpoints (bool): Load fold models instead of training them

    Returns:
    tuple: (list[FoldReport], AggregateReport)
    """
    _check_model(model)
    check_compatible(train_dataset, test_dataset)
    if len(test_dataset) == 0:
        raise DataError(f"test dataset ({test_dataset.provenance}) has no samples")
    folds = build_loso_folds(train_dataset)
    train_checksum = dataset_checksum(train_dataset)
    logger.info(
        f"Cross evaluation {model}: {train_dataset.provenance} -> {test_dataset.provenance}, "
        f"{len(folds)} folds, {len(test_dataset)} test samples"
    )
    reports = Parallel(n_jobs=_workers(config))(
        delayed(_cross_fold)(
            train_dataset, test_dataset, fold, i, model, config, seed, checkpoint_dir, train_checksum, from_checkpoints,
        )
        for i, fold in enumerate(folds)
    )
    summary = aggregate(
        reports, model, train_dataset.provenance, test_dataset.provenance,
        config_hash=config_hash(config),
        dataset_checksums={
            train_dataset.provenance: train_checksum,
            test_dataset.provenance: dataset_checksum(test_dataset),
        },
        notes={"seed": seed},
    )
    _log_aggregate(summary)
    return reports, summary


def train_folds(dataset, model, config, seed, checkpoint_dir):
    """
    Train and checkpoint one model per LOSO fold without testing

    Returns:
    list[dict]: Per fold: subject, content hashes, final loss
    """
    _check_model(model)
    folds = build_loso_folds(dataset)
    checksum = dataset_checksum(dataset)

    def one(fold, index):
        if not fold.train:
            logger.warning(f"Fold {fold.subject} has no training samples; skipped")
            return {"fold": fold.subject, "skipped": True}
        seed_i = fold_seed(seed, index)
        results = train_fold(dataset, fold, model, config, seed_i)
        hashes = save_fold(results, checkpoint_dir, model, dataset.provenance, fold, config, seed_i, checksum)
        final = {kind: (r.loss_curve[-1] if r.loss_curve else r.initial_loss) for kind, r in results.items()}
        return {"fold": fold.subject, "skipped": False, "content_hashes": hashes, "final_loss": final}

    return Parallel(n_jobs=_workers(config))(delayed(one)(fold, i) for i, fold in enumerate(folds))


def _log_aggregate(summary):
    logger.info(
        f"{summary.experiment}: accuracy {summary.accuracy_mean:.3f} +/- {summary.accuracy_sd:.3f}, "
        f"F {summary.f_score_mean:.3f} +/- {summary.f_score_sd:.3f} over {summary.folds} folds"
    )


def confusion_frame(matrix):
    return pd.DataFrame(matrix, index=CLASS_NAMES, columns=CLASS_NAMES)


def write_reports(report_dir, summary, fold_reports):
    """
    Write folds.json, aggregate.json, table.txt and per-fold confusion CSVs

    Parameters:
    report_dir (str | Path): Report root
    summary (AggregateReport): Experiment summary
    fold_reports (list[FoldReport]): Per-fold results

    Returns:
    Path: The experiment's report directory
    """
    target = Path(report_dir) / summary.experiment
    target.mkdir(parents=True, exist_ok=True)
    (target / "folds.json").write_text(json.dumps([r.to_dict() for r in fold_reports], indent=1))
    (target / "aggregate.json").write_text(json.dumps(summary.to_dict(), indent=1, sort_keys=True))
    (target / "table.txt").write_text(format_table(results_table([summary], complete=False)) + "\n")
    for report in fold_reports:
        if report.flagged:
            continue
        confusion_frame(report.confusion).to_csv(target / f"confusion_{report.fold}.csv")
        ratios, _ = row_normalize(report.confusion)
        confusion_frame(ratios).to_csv(target / f"confusion_{report.fold}_normalized.csv", float_format="%.6f")
    logger.info(f"Wrote {summary.experiment} reports to {target}")
    return target


def load_aggregates(report_dir):
    """Every aggregate.json under a report root"""
    summaries = []
    for path in sorted(Path(report_dir).glob("*/aggregate.json")):
        summaries.append(AggregateReport.from_dict(json.loads(path.read_text())))
    return summaries


def cross_band_flag(summary):
    """
    Whether a grouped->pair accuracy lies within the band around the published value

    Returns:
    bool | None: None for experiments the band does not apply to
    """
    key = (summary.model, summary.train_data, summary.test_data)
    if key[1:] != ("grouped", "pair"):
        return None
    return bool(abs(summary.accuracy_mean - REFERENCE_RESULTS[key][0]) <= CROSS_BAND)


def results_table(summaries, complete=True):
    """
    Results grid with published reference values alongside

    Parameters:
    summaries (list[AggregateReport]): Available results
    complete (bool): Emit all six experiment rows, missing ones as NaN

    Returns:
    pd.DataFrame: One row per experiment
    """
    by_key = {(s.model, s.train_data, s.test_data): s for s in summaries}
    keys = EXPERIMENTS if complete else [k for k in EXPERIMENTS if k in by_key] + \
        [k for k in by_key if k not in REFERENCE_RESULTS]
    rows = []
    for key in keys:
        summary = by_key.get(key)
        reference = REFERENCE_RESULTS.get(key, (np.nan,) * 4)
        rows.append({
            "model": key[0].upper(),
            "train": key[1],
            "test": key[2],
            "acc_mean": summary.accuracy_mean if summary else np.nan,
            "acc_sd": summary.accuracy_sd if summary else np.nan,
            "f_mean": summary.f_score_mean if summary else np.nan,
            "f_sd": summary.f_score_sd if summary else np.nan,
            "folds": summary.folds if summary else 0,
            "ref_acc": reference[0],
            "ref_f": reference[2],
            "in_band": (cross_band_flag(summary) if summary else None),
        })
    return pd.DataFrame(rows)


def format_table(frame):
    if frame.empty:
        return "(no results)"
    text = frame.to_string(index=False, float_format=lambda v: f"{v:.3f}", na_rep="-")
    return text + "\nF score averaging: macro; SD: population (divide by N)"
