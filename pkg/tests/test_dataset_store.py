import json

import numpy as np
import pytest

from utils.dataset_store import (
    MANIFEST_NAME,
    TENSOR_NAME,
    check_compatible,
    dataset_checksum,
    grouped_dataset,
    load_dataset,
    merge_datasets,
    save_dataset,
    windows_dataset,
)
from utils.errors import ChecksumError, DataError, ParameterMismatchError, VersionMismatchError
from utils.skeleton import OutOfRangeCounter
from utils.windowing import group_by_subject, pair_windows

from conftest import make_window

PARAMETERS = {"window_length": 130, "stride": 26, "minmax": {"old_min": -2.5, "old_max": 1.75,
              "new_min": 0.0, "new_max": 1.0}, "joint_map": list(range(11))}


@pytest.fixture
def windows(rng):
    return [make_window(rng, s, st, recording=f"{s}_{st}_1") for s in ("A", "B") for st in "WPR"]


def test_grouped_dataset_materializes_like_eager_pairing(windows):
    grouped = grouped_dataset(windows_dataset(windows, PARAMETERS))
    eager = pair_windows(group_by_subject(windows))
    assert len(grouped) == len(eager) == 18
    batch = grouped.tensors(dtype=np.float64)
    for i, sample in enumerate(eager):
        # the store keeps windows as float32
        np.testing.assert_allclose(batch[i], sample.tensor, atol=1e-6)
        assert grouped.labels([i])[0] == sample.label.class_index
        assert grouped.sample(i).subjects == sample.subjects


def test_class_histogram_only_counts_present_pairs(rng):
    windows = [make_window(rng, "A", "W", recording="a"), make_window(rng, "B", "R", recording="b")]
    grouped = grouped_dataset(windows_dataset(windows, PARAMETERS))
    histogram = grouped.class_histogram()
    assert histogram.tolist() == [0, 0, 1, 0, 0, 0, 1, 0, 0]


def test_save_load_preserves_checksum(tmp_path, windows):
    grouped = grouped_dataset(windows_dataset(windows, PARAMETERS))
    checksum = save_dataset(grouped, tmp_path / "grouped")
    loaded = load_dataset(tmp_path / "grouped", expected_parameters=PARAMETERS)
    assert dataset_checksum(loaded) == checksum
    assert loaded.samples == grouped.samples
    np.testing.assert_array_equal(loaded.frames, grouped.frames)


def test_rebuilding_gives_identical_checksum(tmp_path, windows):
    first = save_dataset(grouped_dataset(windows_dataset(windows, PARAMETERS)), tmp_path / "one")
    second = save_dataset(grouped_dataset(windows_dataset(list(reversed(windows)), PARAMETERS)), tmp_path / "two")
    assert first == second
    assert (tmp_path / "one" / MANIFEST_NAME).read_bytes() == (tmp_path / "two" / MANIFEST_NAME).read_bytes()


def test_truncated_tensor_is_detected(tmp_path, windows):
    save_dataset(windows_dataset(windows, PARAMETERS), tmp_path / "w")
    tensor = tmp_path / "w" / TENSOR_NAME
    tensor.write_bytes(tensor.read_bytes()[:-4])
    with pytest.raises(ChecksumError):
        load_dataset(tmp_path / "w")


def test_version_mismatch(tmp_path, windows):
    save_dataset(windows_dataset(windows, PARAMETERS), tmp_path / "w")
    manifest = tmp_path / "w" / MANIFEST_NAME
    body = json.loads(manifest.read_text())
    body["format_version"] = 99
    manifest.write_text(json.dumps(body))
    with pytest.raises(VersionMismatchError):
        load_dataset(tmp_path / "w")


def test_missing_dataset(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nothing")


def test_parameter_mismatch_on_load_and_merge(tmp_path, windows):
    save_dataset(windows_dataset(windows, PARAMETERS), tmp_path / "w")
    other = dict(PARAMETERS, stride=13)
    with pytest.raises(ParameterMismatchError):
        load_dataset(tmp_path / "w", expected_parameters=other)
    with pytest.raises(ParameterMismatchError):
        check_compatible(PARAMETERS, other)


def test_merge_offsets_sample_indices(windows):
    first = grouped_dataset(windows_dataset(windows, PARAMETERS))
    second = grouped_dataset(windows_dataset(windows, PARAMETERS))
    merged = merge_datasets(first, second)
    assert len(merged) == 36
    assert merged.samples[18] == (second.samples[0][0] + 6, second.samples[0][1] + 6, second.samples[0][2])
    np.testing.assert_array_equal(merged.tensors([18]), first.tensors([0]))


def test_out_of_range_fraction(rng):
    window = make_window(rng, "A", "W")
    window.frames[0, 0, 0] = 5.0
    dataset = windows_dataset([window], PARAMETERS)
    assert dataset.out_of_range_fraction() == pytest.approx(1 / window.frames.size)


def test_out_of_range_fraction_matches_materialized_samples(rng):
    windows = [make_window(rng, "A", "W", recording="A1"), make_window(rng, "A", "P", recording="A2"),
               make_window(rng, "B", "R", recording="B1")]
    windows[2].frames[3, 4, 1] = -7.0
    grouped = grouped_dataset(windows_dataset(windows, PARAMETERS))
    counter = OutOfRangeCounter()
    grouped.tensors(counter=counter)
    assert counter.out_of_range == 4
    assert grouped.out_of_range_fraction() == pytest.approx(counter.fraction)
    assert grouped.out_of_range_fraction() == pytest.approx(1 / (2 * windows[2].frames.size))
