import json

import numpy as np
import pytest

from utils.checkpoint import load_sidecar
from utils.config import config_hash
from utils.dataset_store import dataset_checksum, grouped_dataset, pair_dataset, windows_dataset
from utils.errors import DataError, MissingCheckpointError, ParameterMismatchError
from utils.evaluation import (
    EXPERIMENTS,
    REFERENCE_RESULTS,
    checkpoint_file,
    cross_band_flag,
    format_table,
    load_aggregates,
    load_fold_classifier,
    results_table,
    run_cross,
    run_loso,
    train_folds,
    write_reports,
)
from utils.metrics import AggregateReport
from utils.skeleton import encode_pair_label

from conftest import make_window

LENGTH = 8


def parameters(config):
    return {
        "window_length": config.preprocessing.window_length,
        "stride": config.preprocessing.stride,
        "minmax": dict(config.preprocessing.minmax),
        "joint_map": list(config.preprocessing.joint_map),
    }


@pytest.fixture
def grouped(rng, tiny_config):
    windows = [
        make_window(rng, s, st, recording=f"{s}_{st}_1", length=LENGTH)
        for s in ("A", "B", "C") for st in "WPR"
    ]
    return grouped_dataset(windows_dataset(windows, parameters(tiny_config), ["A", "B", "C"]))


@pytest.fixture
def pairs(rng, tiny_config):
    labeled = []
    for k, (left, right) in enumerate(["WP", "RR", "PW", "WW"]):
        labeled.append((
            make_window(rng, "D", left, recording="pair_D_E_1", start=4 * k, length=LENGTH),
            make_window(rng, "E", right, recording="pair_D_E_1", start=4 * k, length=LENGTH),
            encode_pair_label(left, right),
        ))
    return pair_dataset(labeled, parameters(tiny_config), ["pair_D_E_1"])


def test_loso_reports_one_fold_per_subject(grouped, tiny_config):
    reports, summary = run_loso(grouped, "lstm", tiny_config, seed=0)
    assert [r.fold for r in reports] == ["A", "B", "C"]
    # Each held-out subject appears in 2 x 3 x 6 ordered pairs
    assert all(r.test_size == 36 for r in reports)
    assert summary.folds == 3
    assert 0.0 <= summary.accuracy_mean <= 1.0
    assert summary.config_hash == config_hash(tiny_config)
    assert summary.dataset_checksums == {"grouped": dataset_checksum(grouped)}


def test_loso_is_deterministic(grouped, tiny_config):
    _, first = run_loso(grouped, "lstm", tiny_config, seed=5)
    _, second = run_loso(grouped, "lstm", tiny_config, seed=5)
    assert first.accuracy_mean == second.accuracy_mean
    assert first.f_score_mean == second.f_score_mean


def test_loso_vae_trains_transfer_classifier(grouped, tiny_config):
    reports, summary = run_loso(grouped, "vae", tiny_config, seed=0, checkpoint_dir=tiny_config.paths.checkpoint_dir)
    assert summary.experiment == "vae_grouped_grouped"
    for subject in ("A", "B", "C"):
        for kind in ("vae", "transfer"):
            assert checkpoint_file(tiny_config.paths.checkpoint_dir, "vae", "grouped", subject, kind).exists()


def test_unknown_model_is_rejected(grouped, tiny_config):
    with pytest.raises(DataError):
        run_loso(grouped, "gru", tiny_config, seed=0)


def test_cross_evaluates_every_fold_on_the_whole_pair_set(grouped, pairs, tiny_config):
    reports, summary = run_cross(grouped, pairs, "lstm", tiny_config, seed=0)
    assert len(reports) == 3
    assert all(r.test_size == len(pairs) == 4 for r in reports)
    assert summary.experiment == "lstm_grouped_pair"
    assert set(summary.dataset_checksums) == {"grouped", "pair"}


def test_cross_needs_test_samples(grouped, tiny_config):
    empty = pair_dataset([], parameters(tiny_config))
    with pytest.raises(DataError):
        run_cross(grouped, empty, "lstm", tiny_config, seed=0)


def test_trained_folds_reload_from_checkpoints(grouped, tiny_config):
    checkpoints = tiny_config.paths.checkpoint_dir
    trained = train_folds(grouped, "lstm", tiny_config, 3, checkpoints)
    assert [t["fold"] for t in trained] == ["A", "B", "C"]
    assert not any(t["skipped"] for t in trained)

    path = checkpoint_file(checkpoints, "lstm", "grouped", "A", "lstm")
    sidecar = load_sidecar(path)
    assert sidecar["dataset_checksum"] == dataset_checksum(grouped)
    assert sidecar["content_hash"] == trained[0]["content_hashes"]["lstm"]

    inline, inline_summary = run_loso(grouped, "lstm", tiny_config, 3)
    loaded, loaded_summary = run_loso(grouped, "lstm", tiny_config, 3, checkpoint_dir=checkpoints,
                                      from_checkpoints=True)
    # checkpoints store float32 weights, so compare with a tolerance
    assert loaded_summary.accuracy_mean == pytest.approx(inline_summary.accuracy_mean, abs=0.05)
    assert [r.fold for r in loaded] == [r.fold for r in inline]


def test_missing_checkpoint_is_reported(grouped, tiny_config, tmp_path):
    with pytest.raises(MissingCheckpointError, match="run 'train' first"):
        run_loso(grouped, "lstm", tiny_config, 0, checkpoint_dir=tmp_path / "none", from_checkpoints=True)


def test_checkpoint_from_another_dataset_is_rejected(grouped, tiny_config):
    checkpoints = tiny_config.paths.checkpoint_dir
    train_folds(grouped, "lstm", tiny_config, 0, checkpoints)
    with pytest.raises(ParameterMismatchError):
        load_fold_classifier(checkpoints, "lstm", "grouped", "A", expected_checksum="0" * 64)


def _summary(model, train, test, acc):
    return AggregateReport(model, train, test, acc, 0.01, acc, 0.01, folds=3)


def test_cross_band_flag():
    assert cross_band_flag(_summary("lstm", "grouped", "pair", 0.70))
    assert not cross_band_flag(_summary("lstm", "grouped", "pair", 0.40))
    assert cross_band_flag(_summary("vae", "grouped", "pair", 0.616 + 0.14))
    assert cross_band_flag(_summary("lstm", "grouped", "grouped", 0.1)) is None


def test_results_table_lists_all_six_experiments():
    assert len(EXPERIMENTS) == 6
    frame = results_table([_summary("vae", "grouped", "pair", 0.6)])
    assert len(frame) == 6
    row = frame[(frame.model == "VAE") & (frame.train == "grouped") & (frame.test == "pair")].iloc[0]
    assert row.acc_mean == pytest.approx(0.6)
    assert row.ref_acc == REFERENCE_RESULTS[("vae", "grouped", "pair")][0]
    assert row.in_band
    assert frame.acc_mean.isna().sum() == 5
    partial = results_table([_summary("vae", "grouped", "pair", 0.6)], complete=False)
    assert len(partial) == 1
    assert "averaging: macro" in format_table(partial)


def test_write_and_load_reports(grouped, tiny_config, tmp_path):
    reports, summary = run_loso(grouped, "lstm", tiny_config, seed=0)
    target = write_reports(tmp_path / "reports", summary, reports)
    assert target.name == "lstm_grouped_grouped"
    folds = json.loads((target / "folds.json").read_text())
    assert [f["fold"] for f in folds] == ["A", "B", "C"]
    assert (target / "confusion_A.csv").exists()
    assert (target / "confusion_A_normalized.csv").exists()
    assert "LSTM" in (target / "table.txt").read_text()
    loaded = load_aggregates(tmp_path / "reports")
    assert loaded == [summary]
    assert np.isfinite(loaded[0].accuracy_sd)
