import itertools

import numpy as np
import pytest

from utils.dataset_store import grouped_dataset, pair_dataset, windows_dataset
from utils.errors import DataError
from utils.skeleton import ActivityState, encode_pair_label
from utils.windowing import (
    PairRecording,
    discard_transitions,
    build_loso_folds,
    label_change_frames,
    order_windows,
    pair_index_triples,
    pair_windows,
    slide_windows,
    window_pair_recording,
    window_starts,
)

from conftest import make_window

PARAMETERS = {"window_length": 130, "stride": 26, "minmax": {"old_min": -2.5, "old_max": 1.75,
              "new_min": 0.0, "new_max": 1.0}, "joint_map": list(range(11))}


@pytest.mark.parametrize("frames, expected", [(129, 0), (130, 1), (155, 1), (156, 2), (260, 6), (1000, 34)])
def test_window_counts(frames, expected):
    assert len(window_starts(frames)) == expected


def test_window_counts_match_brute_force(rng):
    for _ in range(200):
        frames = int(rng.integers(0, 600))
        length = int(rng.integers(1, 150))
        stride = int(rng.integers(1, length + 1))
        brute = [s for s in range(frames) if s % stride == 0 and s + length <= frames]
        assert list(window_starts(frames, length, stride)) == brute


def test_invalid_stride():
    with pytest.raises(DataError):
        window_starts(200, 130, 0)
    with pytest.raises(DataError):
        window_starts(200, 130, 131)


def test_slide_windows_spans_and_overlap(rng):
    poses = rng.normal(size=(182, 10, 3))
    windows = slide_windows(poses, subject="A", state=ActivityState.WORKING, recording_id="A_W_1")
    assert [w.source_span for w in windows] == [("A_W_1", 0, 129), ("A_W_1", 26, 155), ("A_W_1", 52, 181)]
    np.testing.assert_array_equal(windows[0].frames[26:], windows[1].frames[:104])


def test_slide_windows_reports_raw_frame_numbers(rng):
    frame_index = np.delete(np.arange(140), [3, 40])
    windows = slide_windows(rng.normal(size=(138, 10, 3)), length=130, stride=5,
                            recording_id="gappy", frame_index=frame_index)
    assert [w.source_span for w in windows] == [("gappy", 0, 131), ("gappy", 6, 136)]
    with pytest.raises(DataError):
        slide_windows(rng.normal(size=(138, 10, 3)), frame_index=np.arange(137))
    with pytest.raises(DataError):
        slide_windows(rng.normal(size=(3, 10, 3)), frame_index=[0, 2, 2])


def test_short_recording_gives_no_windows_and_warns(rng, caplog):
    assert slide_windows(rng.normal(size=(129, 10, 3)), recording_id="short") == []
    assert "short" in caplog.text


def test_pairing_two_subjects_two_and_three_windows(rng):
    windows = {
        "A": [make_window(rng, "A", "W", start=0), make_window(rng, "A", "P", start=26)],
        "B": [make_window(rng, "B", "R", start=s) for s in (0, 26, 52)],
    }
    samples = pair_windows(windows)
    assert len(samples) == 12
    assert all(s.subjects[0] != s.subjects[1] for s in samples)
    assert all(s.tensor.shape == (130, 20, 3) for s in samples)
    first = samples[0]
    assert first.subjects == ("A", "B")
    assert first.label == encode_pair_label("W", "R")


def test_pairing_one_subject_is_empty(rng):
    assert pair_windows({"A": [make_window(rng, "A", "W")]}) == []


def test_pair_index_triples_match_brute_force(rng):
    states = list(ActivityState)
    for _ in range(200):
        counts = rng.integers(0, 5, size=int(rng.integers(1, 5)))
        subjects = [f"S{i}" for i, n in enumerate(counts) for _ in range(n)]
        window_states = [states[int(rng.integers(0, 3))] for _ in subjects]
        triples = pair_index_triples(subjects, window_states)
        brute = {
            (i, j, encode_pair_label(window_states[i], window_states[j]).class_index)
            for i, j in itertools.product(range(len(subjects)), repeat=2)
            if subjects[i] != subjects[j]
        }
        present = len(set(subjects))
        expected = len(brute) if present >= 2 else 0
        assert len(triples) == expected
        if present >= 2:
            assert set(triples) == brute


def test_grouped_tensor_is_scaled_concatenation(rng):
    left = make_window(rng, "A", "W")
    right = make_window(rng, "B", "P")
    sample = pair_windows({"A": [left], "B": [right]})[0]
    np.testing.assert_allclose(sample.tensor[:, :10], (left.frames + 2.5) / 4.25)
    np.testing.assert_allclose(sample.tensor[:, 10:], (right.frames + 2.5) / 4.25)


def test_order_windows_is_deterministic(rng):
    windows = [make_window(rng, s, "W", recording=r, start=t) for s in "BA" for r in ("r2", "r1") for t in (26, 0)]
    ordered = order_windows(windows)
    keys = [(w.subject, w.source_span[0], w.source_span[1]) for w in ordered]
    assert keys == sorted(keys)
    assert [id(w) for w in order_windows(list(reversed(windows)))] == [id(w) for w in ordered]


def test_label_change_frames():
    labels = ["WP"] * 3 + ["RR"] * 2 + ["WP"]
    assert label_change_frames(labels) == [3, 5]
    assert label_change_frames(["WW"] * 4) == []


def test_discard_transitions_example(rng):
    windows = [make_window(rng, "A", "W", start=s) for s in range(0, 400, 26)]
    kept = discard_transitions(windows, [200], margin_frames=60)
    assert all(abs(w.last_frame - 200) > 60 for w in kept)
    assert len(kept) == len([w for w in windows if abs(w.last_frame - 200) > 60])
    assert discard_transitions(windows, []) == windows


def test_discard_transitions_matches_brute_force(rng):
    for _ in range(100):
        ends = sorted(int(e) for e in rng.integers(0, 2000, size=int(rng.integers(0, 40))))
        changes = [int(c) for c in rng.integers(1, 2000, size=int(rng.integers(0, 6)))]
        margin = int(rng.integers(0, 120))
        items = [("x", e) for e in ends]
        kept = discard_transitions(items, changes, margin, last_frame=lambda item: item[1])
        brute = [item for item in items if not any(k - margin <= item[1] <= k + margin for k in changes)]
        assert kept == brute


def test_window_pair_recording_labels_by_last_frame(rng):
    frames = 200
    left_states = [ActivityState.WORKING] * 140 + [ActivityState.REQUESTING] * 60
    right_states = [ActivityState.PREPARING] * frames
    recording = PairRecording("pair_A_B_1", ("A", "B"), rng.normal(size=(frames, 10, 3)),
                              rng.normal(size=(frames, 10, 3)), left_states, right_states)
    windows = window_pair_recording(recording)
    assert [w[0].last_frame for w in windows] == [129, 155, 181]
    assert [w[2].name for w in windows] == ["WP", "RP", "RP"]
    kept = discard_transitions(windows, label_change_frames(recording.label_pairs), 60)
    assert kept == []


def test_loso_folds_train_never_mentions_held_out_subject(rng):
    windows = [make_window(rng, s, st, recording=f"{s}{st}") for s in "ABC" for st in "WPR"]
    grouped = grouped_dataset(windows_dataset(windows, PARAMETERS))
    folds = build_loso_folds(grouped)
    assert [f.subject for f in folds] == ["A", "B", "C"]
    subjects = grouped.sample_subjects()
    for fold in folds:
        assert all(fold.subject not in subjects[i] for i in fold.train)
        assert all(fold.subject in subjects[i] for i in fold.test)
        assert sorted(fold.train + fold.test) == list(range(len(grouped)))
        assert fold.is_usable


def test_loso_needs_two_subjects(rng):
    windows = [make_window(rng, "A", "W")]
    with pytest.raises(DataError):
        build_loso_folds(windows_dataset(windows, PARAMETERS))


def test_pair_dataset_folds(rng):
    left = make_window(rng, "C", "W")
    right = make_window(rng, "D", "P")
    dataset = pair_dataset([(left, right, encode_pair_label("W", "P"))], PARAMETERS)
    folds = build_loso_folds(dataset)
    assert [(f.subject, f.train, f.test) for f in folds] == [("C", [], [0]), ("D", [], [0])]
    assert not folds[0].is_usable
