import json

import numpy as np
import pytest

from utils.errors import DataError, SchemaError
from utils.recordings import (
    READERS,
    is_pair_file,
    list_recordings,
    read_pair_recording,
    read_recording,
    register_reader,
    write_recording,
)
from utils.skeleton import ActivityState
from utils.synthetic import timestamps

from conftest import random_raw_frames


def _line(subject="A", timestamp=0, label="W", joints=None):
    joints = np.zeros((32, 3)).tolist() if joints is None else joints
    return json.dumps({"subject": subject, "timestamp_ns": timestamp, "label": label, "joints": joints})


def test_write_then_read_single_recording(tmp_path, rng):
    joints = random_raw_frames(rng, 12)
    path = tmp_path / "A_P_1.ndjson"
    write_recording(path, "A", ActivityState.PREPARING, timestamps(12, 30), joints)
    recording = read_recording(path)
    assert recording.recording_id == "A_P_1"
    assert recording.subject == "A"
    assert recording.state is ActivityState.PREPARING
    assert recording.frame_count == 12
    np.testing.assert_allclose(recording.joints, joints, atol=1e-3)


def test_malformed_json_names_file_and_line(tmp_path):
    path = tmp_path / "A_W_1.ndjson"
    path.write_text(_line(timestamp=0) + "\n{not json\n")
    with pytest.raises(SchemaError) as info:
        read_recording(path)
    assert info.value.line == 2
    assert "A_W_1.ndjson" in str(info.value)


def test_wrong_joint_count_is_a_schema_error(tmp_path):
    path = tmp_path / "A_W_1.ndjson"
    path.write_text(_line(joints=np.zeros((31, 3)).tolist()) + "\n")
    with pytest.raises(SchemaError):
        read_recording(path)


def test_label_change_inside_single_recording_is_rejected(tmp_path):
    path = tmp_path / "A_W_1.ndjson"
    path.write_text(_line(timestamp=0) + "\n" + _line(timestamp=1, label="R") + "\n")
    with pytest.raises(SchemaError) as info:
        read_recording(path)
    assert info.value.line == 2


def test_timestamps_must_increase(tmp_path):
    path = tmp_path / "A_W_1.ndjson"
    path.write_text(_line(timestamp=5) + "\n" + _line(timestamp=5) + "\n")
    with pytest.raises(SchemaError):
        read_recording(path)


def test_schema_errors_are_data_errors():
    assert issubclass(SchemaError, DataError)
    assert SchemaError("x").exit_code == 3


def test_pair_recording_round_trip(raw_dir):
    recording = read_pair_recording(raw_dir / "pair_C_D_1.ndjson")
    assert recording.subjects == ("C", "D")
    assert recording.joints.shape == (400, 2, 32, 3)
    assert recording.labels[0] == (ActivityState.WORKING, ActivityState.PREPARING)
    assert recording.labels[-1] == (ActivityState.REQUESTING, ActivityState.WORKING)


def test_pair_recording_needs_two_distinct_subjects(tmp_path):
    path = tmp_path / "pair_A_A_1.ndjson"
    record = {"subject": ["A", "A"], "timestamp_ns": 0, "label": ["W", "W"],
              "joints": [np.zeros((32, 3)).tolist()] * 2}
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(SchemaError):
        read_pair_recording(path)


def test_list_recordings_splits_by_kind(raw_dir):
    singles, pairs = list_recordings(raw_dir)
    assert len(singles) == 6
    assert [p.name for p in pairs] == ["pair_C_D_1.ndjson"]
    assert all(is_pair_file(p) for p in pairs)
    assert [p.name for p in singles] == sorted(p.name for p in singles)


def test_missing_raw_dir(tmp_path):
    with pytest.raises(DataError):
        list_recordings(tmp_path / "absent")


def test_register_reader_adds_an_adapter():
    register_reader("test-adapter", read_recording, read_pair_recording)
    try:
        assert READERS["test-adapter"] == (read_recording, read_pair_recording)
    finally:
        READERS.pop("test-adapter")
