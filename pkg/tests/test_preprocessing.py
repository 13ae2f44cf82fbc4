import numpy as np

from utils.config import PreprocessingConfig
from utils.preprocessing import (
    normalize_pair_recording,
    preprocess_directory,
    preprocess_pair_recording,
    preprocess_recording,
    preprocessing_parameters,
)
from utils.recordings import RawPairRecording, Recording, read_recording
from utils.skeleton import ActivityState
from utils.windowing import window_starts

from conftest import random_raw_frames


def _recording(rng, frames, subject="A", state=ActivityState.WORKING):
    return Recording(f"{subject}_{state.value}_1", subject, state,
                     np.arange(frames, dtype=np.int64), random_raw_frames(rng, frames))


def test_parameters_record_what_samples_share():
    parameters = preprocessing_parameters(PreprocessingConfig())
    assert parameters["window_length"] == 130
    assert parameters["stride"] == 26
    assert parameters["minmax"]["old_min"] == -2.5
    assert len(parameters["joint_map"]) == 11


def test_recording_of_129_frames_gives_no_windows(rng):
    windows, stats = preprocess_recording(_recording(rng, 129), PreprocessingConfig())
    assert windows == []
    assert stats["windows"] == 0
    assert stats["frames_read"] == 129


def test_degenerate_frames_are_counted_and_dropped(rng):
    recording = _recording(rng, 160)
    navel, neck = 1, 3
    recording.joints[5, neck] = recording.joints[5, navel]
    windows, stats = preprocess_recording(recording, PreprocessingConfig())
    assert stats["frames_rejected"] == 1
    assert len(windows) == 2
    assert windows[0].frames.shape == (130, 10, 3)
    np.testing.assert_allclose(np.linalg.norm(windows[0].frames[:, 0], axis=-1), 1.0)
    # spans count raw frames, so they skip over the dropped frame 5
    assert [w.source_span[1:] for w in windows] == [(0, 130), (27, 156)]


def test_pair_frame_dropped_for_both_people(rng):
    frames = 10
    joints = np.stack([random_raw_frames(rng, frames), random_raw_frames(rng, frames)], axis=1)
    joints[4, 1, 3] = joints[4, 1, 1]
    labels = [(ActivityState.WORKING, ActivityState.REQUESTING)] * frames
    raw = RawPairRecording("pair_A_B_1", ("A", "B"), np.arange(frames), joints, labels)
    recording, rejected = normalize_pair_recording(raw, PreprocessingConfig())
    assert rejected == 1
    assert recording.frame_count == 9
    assert len(recording.left) == len(recording.right) == 9
    assert list(recording.frame_index) == [0, 1, 2, 3, 5, 6, 7, 8, 9]


def test_pair_recording_discards_transition_windows(raw_dir):
    from utils.recordings import read_pair_recording

    raw = read_pair_recording(raw_dir / "pair_C_D_1.ndjson")
    kept, stats = preprocess_pair_recording(raw, PreprocessingConfig())
    # 11 windows end at 129, 155, ..., 389; the change at frame 200 removes those ending in [140, 260]
    assert stats["windows"] + stats["windows_discarded"] == 11
    assert stats["windows_discarded"] == 5
    assert [w[2].name for w in kept] == ["WP"] + ["RW"] * 5


def test_preprocess_directory_is_ordered_and_parallel_safe(raw_dir):
    config = PreprocessingConfig()
    serial = preprocess_directory(raw_dir, config, workers=1)
    parallel = preprocess_directory(raw_dir, config, workers=2)
    assert serial["single_sources"] == [p.stem for p in sorted(raw_dir.glob("[AB]_*.ndjson"))]
    assert serial["pair_sources"] == ["pair_C_D_1"]
    recordings = sorted(raw_dir.glob("[AB]_*.ndjson"))
    expected = sum(
        len(window_starts(read_recording(p).frame_count, config.window_length, config.stride))
        for p in recordings
    )
    assert expected == 12
    assert len(serial["single_windows"]) == expected
    assert [w.source_span for w in serial["single_windows"]] == \
        [w.source_span for w in parallel["single_windows"]]
    assert list(serial["stats"]["windows"]) == list(parallel["stats"]["windows"])
    assert read_recording(raw_dir / "A_W_1.ndjson").frame_count == 160


def test_transition_margin_counts_raw_frames_across_dropped_ones(rng):
    frames = 200
    joints = np.stack([random_raw_frames(rng, frames), random_raw_frames(rng, frames)], axis=1)
    joints[131:141, 0, 3] = joints[131:141, 0, 1]
    labels = [(ActivityState.WORKING if t < 125 else ActivityState.REQUESTING, ActivityState.PREPARING)
              for t in range(frames)]
    raw = RawPairRecording("pair_A_B_2", ("A", "B"), np.arange(frames), joints, labels)
    kept, stats = preprocess_pair_recording(raw, PreprocessingConfig(transition_margin_s=35 / 30))
    assert stats["frames_rejected"] == 10
    # the window ending at raw frame 165 lies 40 frames after the change, outside the margin
    assert [w[0].source_span[1:] for w in kept] == [(26, 165), (52, 191)]
    assert stats["windows_discarded"] == 1
