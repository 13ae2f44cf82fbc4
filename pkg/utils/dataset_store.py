"""
On-disk datasets: a directory with manifest.json and a flat float32 tensor file
holding every single-user window; samples are stored as index triples and
materialized on demand.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from utils.errors import ChecksumError, DataError, ParameterMismatchError, VersionMismatchError
from utils.skeleton import (
    POSE_JOINT_COUNT,
    ActivityState,
    MinMaxParams,
    decode_pair_label,
    encode_pair_label,
    minmax_scale,
)
from utils.windowing import GroupedSample, Window, order_windows, pair_index_triples

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
TENSOR_NAME = "windows.bin"
TENSOR_DTYPE = np.dtype("<f4")

PROVENANCES = ("windows", "grouped", "pair")


@dataclass
class DatasetManifest:
    provenance: str
    parameters: dict
    frames: np.ndarray  # N x length x 10 x 3, float32
    window_meta: list  # N x {"subject", "state", "recording", "start", "end"}
    samples: list = field(default_factory=list)  # (left, right, class index)
    sources: list = field(default_factory=list)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")
        self.frames = np.ascontiguousarray(self.frames, dtype=TENSOR_DTYPE)
        if len(self.frames) != len(self.window_meta):
            raise DataError("window tensor and window metadata differ in length")
        if len(self.frames) and self.frames.shape[1:] != (self.parameters["window_length"], POSE_JOINT_COUNT, 3):
            raise DataError(f"window tensor shape {self.frames.shape[1:]} does not match parameters")
        self.samples = [tuple(int(v) for v in triple) for triple in self.samples]
        for left, right, class_index in self.samples:
            if self.window_meta[left]["subject"] == self.window_meta[right]["subject"]:
                raise DataError(f"sample pairs windows {left} and {right} of the same subject")
            decode_pair_label(class_index)

    @property
    def subjects(self):
        return sorted({meta["subject"] for meta in self.window_meta})

    @property
    def minmax(self):
        return MinMaxParams(**self.parameters["minmax"])

    def __len__(self):
        return len(self.samples)

    def sample_subjects(self):
        return [
            (self.window_meta[left]["subject"], self.window_meta[right]["subject"])
            for left, right, _ in self.samples
        ]

    def window(self, index):
        meta = self.window_meta[index]
        return Window(
            frames=self.frames[index],
            subject=meta["subject"],
            state=ActivityState.from_code(meta["state"]),
            source_span=(meta["recording"], meta["start"], meta["end"]),
        )

    def windows(self):
        return [self.window(i) for i in range(len(self.window_meta))]

    def sample(self, index, counter=None):
        """
        Materialize one grouped sample

        Parameters:
        index (int): Sample position
        counter (OutOfRangeCounter): Optional out-of-range tally

        Returns:
        GroupedSample: Scaled length x 20 x 3 tensor with label and subjects
        """
        left, right, class_index = self.samples[index]
        tensor = np.concatenate([self.frames[left], self.frames[right]], axis=1).astype(np.float64)
        left_meta, right_meta = self.window_meta[left], self.window_meta[right]
        return GroupedSample(
            tensor=minmax_scale(tensor, self.minmax, counter),
            label=encode_pair_label(*decode_pair_label(class_index)),
            subjects=(left_meta["subject"], right_meta["subject"]),
        )

    def tensors(self, indices=None, dtype=np.float64, counter=None):
        """
        Materialize a batch of scaled samples

        Parameters:
        indices (list[int]): Sample positions, all samples when None
        dtype (np.dtype): Output precision
        counter (OutOfRangeCounter): Optional out-of-range tally

        Returns:
        np.ndarray: B x length x 20 x 3 scaled tensors
        """
        if indices is None:
            indices = range(len(self.samples))
        indices = list(indices)
        if not indices:
            return np.zeros((0, self.parameters["window_length"], 2 * POSE_JOINT_COUNT, 3), dtype=dtype)
        triples = np.asarray([self.samples[i] for i in indices])
        batch = np.concatenate([self.frames[triples[:, 0]], self.frames[triples[:, 1]]], axis=2)
        return minmax_scale(batch.astype(np.float64), self.minmax, counter).astype(dtype)

    def labels(self, indices=None):
        if indices is None:
            indices = range(len(self.samples))
        return np.asarray([self.samples[i][2] for i in indices], dtype=np.int64)

    def class_histogram(self):
        counts = np.bincount(self.labels(), minlength=9) if self.samples else np.zeros(9, dtype=np.int64)
        return counts

    def out_of_range_fraction(self):
        """
        Share of scaled values that fall outside the min-max source range

        Every sample counts both of its windows, so the fraction matches what
        materializing all samples would tally; a dataset without samples counts
        each window once.

        Returns:
        float: Fraction in [0, 1], 0.0 for an empty dataset
        """
        if not len(self.frames):
            return 0.0
        params = self.minmax
        flat = self.frames.reshape(len(self.frames), -1).astype(np.float64)
        outside = np.count_nonzero((flat < params.old_min) | (flat > params.old_max), axis=1)
        if self.samples:
            triples = np.asarray(self.samples)
            uses = np.bincount(triples[:, 0], minlength=len(flat)) + np.bincount(triples[:, 1], minlength=len(flat))
        else:
            uses = np.ones(len(flat), dtype=np.int64)
        total = int(uses.sum()) * flat.shape[1]
        return float(outside @ uses) / total if total else 0.0


def check_compatible(first, second):
    """
    Raise when two datasets were preprocessed with different parameters

    Parameters:
    first (DatasetManifest | dict): Dataset or parameter dict
    second (DatasetManifest | dict): Dataset or parameter dict
    """
    a = first.parameters if isinstance(first, DatasetManifest) else first
    b = second.parameters if isinstance(second, DatasetManifest) else second
    keys = ("window_length", "stride", "minmax", "joint_map")
    differing = [key for key in keys if _canonical(a.get(key)) != _canonical(b.get(key))]
    if differing:
        raise ParameterMismatchError(f"preprocessing parameters differ: {', '.join(differing)}")


def _canonical(value):
    return json.dumps(value, sort_keys=True)


def merge_datasets(first, second):
    """
    Concatenate two datasets with identical preprocessing parameters

    Parameters:
    first (DatasetManifest): Dataset
    second (DatasetManifest): Dataset with the same provenance and parameters

    Returns:
    DatasetManifest: Combined dataset
    """
    check_compatible(first, second)
    if first.provenance != second.provenance:
        raise ParameterMismatchError(f"cannot merge {first.provenance} with {second.provenance} data")
    offset = len(first.window_meta)
    return DatasetManifest(
        provenance=first.provenance,
        parameters=dict(first.parameters),
        frames=np.concatenate([first.frames, second.frames]) if offset else second.frames,
        window_meta=first.window_meta + second.window_meta,
        samples=first.samples + [(l + offset, r + offset, c) for l, r, c in second.samples],
        sources=first.sources + second.sources,
    )


def windows_dataset(windows, parameters, sources=()):
    """
    Store single-user windows (no samples yet) in deterministic order

    Parameters:
    windows (list[Window]): Windows from any number of recordings
    parameters (dict): Preprocessing parameters
    sources (list[str]): Recording ids that were ingested

    Returns:
    DatasetManifest: Provenance 'windows'
    """
    ordered = order_windows(windows)
    frames = np.stack([w.frames for w in ordered]) if ordered else \
        np.zeros((0, parameters["window_length"], POSE_JOINT_COUNT, 3))
    meta = [_window_meta(w) for w in ordered]
    return DatasetManifest("windows", dict(parameters), frames, meta, [], list(sources))


def _window_meta(window):
    recording, start, end = window.source_span
    return {
        "subject": window.subject,
        "state": window.state.value,
        "recording": recording,
        "start": int(start),
        "end": int(end),
    }


def grouped_dataset(windows_manifest):
    """
    Lazily pair every cross-subject window combination of a windows dataset

    Parameters:
    windows_manifest (DatasetManifest): Provenance 'windows'

    Returns:
    DatasetManifest: Provenance 'grouped' sharing the window tensor
    """
    subjects = [m["subject"] for m in windows_manifest.window_meta]
    states = [ActivityState.from_code(m["state"]) for m in windows_manifest.window_meta]
    triples = pair_index_triples(subjects, states)
    return DatasetManifest(
        provenance="grouped",
        parameters=dict(windows_manifest.parameters),
        frames=windows_manifest.frames,
        window_meta=list(windows_manifest.window_meta),
        samples=triples,
        sources=list(windows_manifest.sources),
    )


def pair_dataset(labeled_windows, parameters, sources=()):
    """
    Store windows cut from two-person recordings

    Parameters:
    labeled_windows (list[tuple]): (left Window, right Window, PairLabel)
    parameters (dict): Preprocessing parameters
    sources (list[str]): Pair recording ids

    Returns:
    DatasetManifest: Provenance 'pair'
    """
    frames, meta, samples = [], [], []
    for left, right, label in labeled_windows:
        samples.append((len(meta), len(meta) + 1, label.class_index))
        for window in (left, right):
            frames.append(window.frames)
            meta.append(_window_meta(window))
    stacked = np.stack(frames) if frames else np.zeros((0, parameters["window_length"], POSE_JOINT_COUNT, 3))
    return DatasetManifest("pair", dict(parameters), stacked, meta, samples, list(sources))


def _body(manifest):
    return {
        "format_version": FORMAT_VERSION,
        "provenance": manifest.provenance,
        "parameters": manifest.parameters,
        "subjects": manifest.subjects,
        "sources": manifest.sources,
        "tensor": {
            "file": TENSOR_NAME,
            "dtype": "float32-le",
            "shape": list(manifest.frames.shape),
            "order": "window,frame,joint,coord",
        },
        "windows": manifest.window_meta,
        "samples": [list(triple) for triple in manifest.samples],
    }


def _checksum(body, tensor_bytes):
    digest = hashlib.sha256()
    digest.update(json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    digest.update(tensor_bytes)
    return digest.hexdigest()


def dataset_checksum(manifest):
    return _checksum(_body(manifest), manifest.frames.astype(TENSOR_DTYPE).tobytes(order="C"))


def save_dataset(manifest, path):
    """
    Write a dataset directory

    Parameters:
    manifest (DatasetManifest): Dataset to store
    path (str | Path): Target directory, created if needed

    Returns:
    str: The dataset checksum
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensor_bytes = manifest.frames.astype(TENSOR_DTYPE).tobytes(order="C")
    body = _body(manifest)
    body["checksum"] = _checksum(_body(manifest), tensor_bytes)
    (path / TENSOR_NAME).write_bytes(tensor_bytes)
    (path / MANIFEST_NAME).write_text(json.dumps(body, indent=1, sort_keys=True))
    logger.info(
        f"Saved {manifest.provenance} dataset to {path}: {len(manifest.window_meta)} windows, "
        f"{len(manifest.samples)} samples, {len(manifest.subjects)} subjects"
    )
    return body["checksum"]


def load_dataset(path, expected_parameters=None):
    """
    Read and verify a dataset directory

    Parameters:
    path (str | Path): Directory written by save_dataset
    expected_parameters (dict): When given, parameters must match

    Returns:
    DatasetManifest: Loaded dataset
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    tensor_path = path / TENSOR_NAME
    if not manifest_path.exists() or not tensor_path.exists():
        raise DataError(f"dataset not found at {path} (expected {MANIFEST_NAME} and {TENSOR_NAME})")
    try:
        body = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ChecksumError(f"{manifest_path}: unreadable manifest ({e.msg})") from e
    version = body.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{manifest_path}: format version {version}, expected {FORMAT_VERSION}")

    tensor_bytes = tensor_path.read_bytes()
    stored = body.pop("checksum", None)
    if stored is None or _checksum(body, tensor_bytes) != stored:
        raise ChecksumError(f"{path}: checksum mismatch, dataset is corrupt or truncated")

    shape = tuple(body["tensor"]["shape"])
    frames = np.frombuffer(tensor_bytes, dtype=TENSOR_DTYPE).reshape(shape).copy()
    manifest = DatasetManifest(
        provenance=body["provenance"],
        parameters=body["parameters"],
        frames=frames,
        window_meta=body["windows"],
        samples=[tuple(s) for s in body["samples"]],
        sources=body["sources"],
    )
    if expected_parameters is not None:
        check_compatible(manifest.parameters, expected_parameters)
    return manifest
