"""
Newline-delimited JSON skeleton recordings: reading with schema validation and
writing in the same layout.

Single-user line: {"subject", "timestamp_ns", "label", "joints": 32 x [x, y, z]}
Pair line:        {"subject": [l, r], "timestamp_ns", "label": [sl, sr],
                   "joints": [32 x [x, y, z], 32 x [x, y, z]]}
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from utils.errors import DataError, SchemaError
from utils.skeleton import RAW_JOINT_COUNT, ActivityState

logger = logging.getLogger(__name__)

RECORDING_SUFFIX = ".ndjson"
PAIR_PREFIX = "pair_"


@dataclass
class Recording:
    recording_id: str
    subject: str
    state: ActivityState
    timestamps: np.ndarray
    joints: np.ndarray  # T x 32 x 3

    @property
    def frame_count(self):
        return len(self.timestamps)


@dataclass
class RawPairRecording:
    recording_id: str
    subjects: tuple
    timestamps: np.ndarray
    joints: np.ndarray  # T x 2 x 32 x 3
    labels: list  # T x (left state, right state)

    @property
    def frame_count(self):
        return len(self.timestamps)


def _parse_joints(value, path, line):
    try:
        joints = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("joints must be numeric [x, y, z] triples", path, line)
    if joints.shape != (RAW_JOINT_COUNT, 3):
        raise SchemaError(f"expected {RAW_JOINT_COUNT} joints of 3 coordinates, got shape {joints.shape}", path, line)
    if not np.all(np.isfinite(joints)):
        raise SchemaError("joint coordinates must be finite", path, line)
    return joints


def _parse_state(value, path, line):
    try:
        return ActivityState.from_code(value)
    except DataError:
        raise SchemaError(f"unknown label {value!r}", path, line)


def _iter_records(path):
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, text in enumerate(handle, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise SchemaError(f"malformed JSON: {e.msg}", path, line_number) from e
            if not isinstance(record, dict):
                raise SchemaError("each line must be a JSON object", path, line_number)
            for key in ("subject", "timestamp_ns", "joints"):
                if key not in record:
                    raise SchemaError(f"missing field {key!r}", path, line_number)
            if isinstance(record["timestamp_ns"], bool) or not isinstance(record["timestamp_ns"], int):
                raise SchemaError("timestamp_ns must be an integer", path, line_number)
            yield line_number, record


def _check_timestamps(timestamps, lines, path):
    for i in range(1, len(timestamps)):
        if timestamps[i] <= timestamps[i - 1]:
            raise SchemaError("timestamps must be strictly increasing", path, lines[i])


def read_recording(path):
    """
    Read a single-user recording

    Parameters:
    path (str | Path): NDJSON file

    Returns:
    Recording: Parsed recording with one state for the whole file
    """
    path = Path(path)
    subject, state = None, None
    timestamps, joints, lines = [], [], []
    for line_number, record in _iter_records(path):
        if not isinstance(record["subject"], str):
            raise SchemaError("subject must be a string in a single-user recording", path, line_number)
        if subject is None:
            subject = record["subject"]
        elif record["subject"] != subject:
            raise SchemaError(f"subject changes from {subject!r} to {record['subject']!r}", path, line_number)
        if "label" in record and record["label"] is not None:
            frame_state = _parse_state(record["label"], path, line_number)
            if state is None:
                state = frame_state
            elif frame_state != state:
                raise SchemaError("single-user recordings carry one label for the whole file", path, line_number)
        timestamps.append(record["timestamp_ns"])
        joints.append(_parse_joints(record["joints"], path, line_number))
        lines.append(line_number)

    if subject is None:
        raise SchemaError("recording has no frames", path)
    if state is None:
        raise SchemaError("recording has no label", path)
    _check_timestamps(timestamps, lines, path)
    return Recording(
        recording_id=path.stem,
        subject=subject,
        state=state,
        timestamps=np.asarray(timestamps, dtype=np.int64),
        joints=np.stack(joints),
    )


def read_pair_recording(path):
    """
    Read a recording with two people in frame and per-frame label pairs

    Parameters:
    path (str | Path): NDJSON file

    Returns:
    RawPairRecording: Parsed recording
    """
    path = Path(path)
    subjects = None
    timestamps, joints, labels, lines = [], [], [], []
    for line_number, record in _iter_records(path):
        pair = record["subject"]
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(s, str) for s in pair):
            raise SchemaError("subject must be a [left, right] pair of strings", path, line_number)
        if pair[0] == pair[1]:
            raise SchemaError("pair recording needs two distinct subjects", path, line_number)
        if subjects is None:
            subjects = tuple(pair)
        elif tuple(pair) != subjects:
            raise SchemaError(f"subjects change from {list(subjects)} to {pair}", path, line_number)
        label = record.get("label")
        if not isinstance(label, list) or len(label) != 2:
            raise SchemaError("pair frames need a [left, right] label", path, line_number)
        bodies = record["joints"]
        if not isinstance(bodies, list) or len(bodies) != 2:
            raise SchemaError("pair frames need two skeletons", path, line_number)
        timestamps.append(record["timestamp_ns"])
        joints.append(np.stack([_parse_joints(body, path, line_number) for body in bodies]))
        labels.append((_parse_state(label[0], path, line_number), _parse_state(label[1], path, line_number)))
        lines.append(line_number)

    if subjects is None:
        raise SchemaError("recording has no frames", path)
    _check_timestamps(timestamps, lines, path)
    return RawPairRecording(
        recording_id=path.stem,
        subjects=subjects,
        timestamps=np.asarray(timestamps, dtype=np.int64),
        joints=np.stack(joints),
        labels=labels,
    )


def is_pair_file(path):
    return Path(path).name.startswith(PAIR_PREFIX)


READERS = {
    "ndjson": (read_recording, read_pair_recording),
}


def register_reader(name, single_reader, pair_reader):
    """
    Register an alternative loader producing Recording / RawPairRecording objects

    Parameters:
    name (str): Reader name selectable from the CLI
    single_reader (callable): path -> Recording
    pair_reader (callable): path -> RawPairRecording
    """
    READERS[name] = (single_reader, pair_reader)


def list_recordings(raw_dir):
    """
    Find recording files in a directory, split by kind, sorted by name

    Parameters:
    raw_dir (str | Path): Directory of NDJSON recordings

    Returns:
    tuple: (single-user paths, pair paths)
    """
    raw_dir = Path(raw_dir)
    if not raw_dir.is_dir():
        raise DataError(f"raw recording directory not found: {raw_dir}")
    files = sorted(raw_dir.glob(f"*{RECORDING_SUFFIX}"))
    singles = [p for p in files if not is_pair_file(p)]
    pairs = [p for p in files if is_pair_file(p)]
    return singles, pairs


def _frame_line(subject, timestamp, label, joints):
    return json.dumps({
        "subject": subject,
        "timestamp_ns": int(timestamp),
        "label": label,
        "joints": np.round(joints, 3).tolist(),
    })


def write_recording(path, subject, state, timestamps, joints):
    """
    Write a single-user recording

    Parameters:
    path (str | Path): Output file
    subject (str): Subject id
    state (ActivityState): Recorded state
    timestamps (np.ndarray): Strictly increasing nanosecond timestamps
    joints (np.ndarray): T x 32 x 3 joints in millimeters
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for timestamp, frame in zip(timestamps, joints):
            handle.write(_frame_line(subject, timestamp, state.value, frame) + "\n")


def write_pair_recording(path, subjects, timestamps, joints, labels):
    """
    Write a two-person recording

    Parameters:
    path (str | Path): Output file
    subjects (tuple): (left, right) subject ids
    timestamps (np.ndarray): Strictly increasing nanosecond timestamps
    joints (np.ndarray): T x 2 x 32 x 3 joints in millimeters
    labels (list): Per-frame (left state, right state)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for timestamp, frame, (left, right) in zip(timestamps, joints, labels):
            handle.write(_frame_line(list(subjects), timestamp, [left.value, right.value], frame) + "\n")
