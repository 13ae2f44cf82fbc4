"""
Sliding windows over normalized recordings, cross-subject pairing into grouped
samples, pair-recording windowing with last-frame labels, transition discarding
and leave-one-subject-out folds.
"""

import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import DataError
from utils.skeleton import (
    DEFAULT_MINMAX,
    POSE_JOINT_COUNT,
    ActivityState,
    NormalizedPose,
    encode_pair_label,
    minmax_scale,
)

logger = logging.getLogger(__name__)

WINDOW_LENGTH = 130
WINDOW_STRIDE = 26


@dataclass(frozen=True)
class Window:
    frames: np.ndarray  # length x 10 x 3
    subject: str
    state: ActivityState
    source_span: tuple  # (recording id, first frame, last frame) inclusive

    @property
    def last_frame(self):
        return self.source_span[2]


@dataclass(frozen=True)
class GroupedSample:
    tensor: np.ndarray  # length x 20 x 3
    label: object  # PairLabel
    subjects: tuple

    def __post_init__(self):
        if self.subjects[0] == self.subjects[1]:
            raise DataError(f"grouped sample pairs subject {self.subjects[0]} with itself")


@dataclass
class PairRecording:
    recording_id: str
    subjects: tuple
    left: np.ndarray  # T x 10 x 3
    right: np.ndarray  # T x 10 x 3
    left_states: list
    right_states: list
    frame_index: np.ndarray = None  # raw frame number of each kept frame

    def __post_init__(self):
        if not (len(self.left) == len(self.right) == len(self.left_states) == len(self.right_states)):
            raise DataError(f"pair recording {self.recording_id}: per-person streams differ in length")
        self.frame_index = _frame_index(self.frame_index, len(self.left), self.recording_id)

    @property
    def frame_count(self):
        return len(self.left)

    @property
    def label_pairs(self):
        return list(zip(self.left_states, self.right_states))


def window_starts(frame_count, length=WINDOW_LENGTH, stride=WINDOW_STRIDE):
    """
    Start indices of every full window

    Parameters:
    frame_count (int): Frames in the recording
    length (int): Window length
    stride (int): Step between window starts

    Returns:
    range: Starts 0, stride, 2*stride, ... whose window fits
    """
    if length <= 0:
        raise DataError(f"window length must be positive, got {length}")
    if not 0 < stride <= length:
        raise DataError(f"stride must be in (0, {length}], got {stride}")
    if frame_count < length:
        return range(0)
    count = (frame_count - length) // stride + 1
    return range(0, count * stride, stride)


def _frame_index(frame_index, count, recording_id):
    if frame_index is None:
        return np.arange(count, dtype=np.int64)
    frame_index = np.asarray(frame_index, dtype=np.int64)
    if frame_index.shape != (count,):
        raise DataError(
            f"recording {recording_id}: frame index has {frame_index.shape} entries for {count} frames"
        )
    if count > 1 and np.any(np.diff(frame_index) <= 0):
        raise DataError(f"recording {recording_id}: frame index must be strictly increasing")
    return frame_index


def _as_pose_array(recording):
    if isinstance(recording, np.ndarray):
        poses = recording
    else:
        poses = np.stack([p.joints if isinstance(p, NormalizedPose) else np.asarray(p) for p in recording]) \
            if len(recording) else np.zeros((0, POSE_JOINT_COUNT, 3))
    if poses.ndim != 3 or poses.shape[1:] != (POSE_JOINT_COUNT, 3):
        raise DataError(f"expected T x {POSE_JOINT_COUNT} x 3 poses, got {poses.shape}")
    return poses


def slide_windows(recording, length=WINDOW_LENGTH, stride=WINDOW_STRIDE,
                  subject=None, state=None, recording_id=None, frame_index=None):
    """
    Cut a normalized recording into overlapping fixed-length windows

    Parameters:
    recording (np.ndarray | list[NormalizedPose]): T x 10 x 3 poses
    length (int): Window length in frames
    stride (int): Frames between window starts
    subject (str): Subject id carried into each window
    state (ActivityState): Recording state carried into each window
    recording_id (str): Source recording id for the span
    frame_index (np.ndarray): Raw frame number of each pose when frames were
        dropped upstream; spans are reported in raw frame numbers

    Returns:
    list[Window]: Windows in start order; trailing frames are dropped
    """
    poses = _as_pose_array(recording)
    frame_index = _frame_index(frame_index, len(poses), recording_id)
    starts = window_starts(len(poses), length, stride)
    if len(starts) == 0:
        logger.warning(
            f"Recording {recording_id or '<unnamed>'} has {len(poses)} frames, "
            f"fewer than one window of {length}; no windows cut"
        )
    return [
        Window(
            frames=poses[start:start + length],
            subject=subject,
            state=state,
            source_span=(recording_id, int(frame_index[start]), int(frame_index[start + length - 1])),
        )
        for start in starts
    ]


def order_windows(windows):
    """Deterministic window order: subject id, then recording, then start frame"""
    return sorted(windows, key=lambda w: (str(w.subject), str(w.source_span[0]), w.source_span[1]))


def group_by_subject(windows):
    grouped = {}
    for window in order_windows(windows):
        grouped.setdefault(window.subject, []).append(window)
    return grouped


def pair_index_triples(window_subjects, window_states):
    """
    Lazy form of cross-subject pairing over a flat window list

    Every ordered pair of distinct subjects (u, v) contributes one triple for
    each window of u (left) and window of v (right).

    Parameters:
    window_subjects (list[str]): Subject of each window
    window_states (list[ActivityState]): State of each window

    Returns:
    list[tuple]: (left window index, right window index, class index)
    """
    by_subject = {}
    for index, subject in enumerate(window_subjects):
        by_subject.setdefault(subject, []).append(index)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        logger.warning(f"Pairing needs at least 2 subjects, found {len(subjects)}; no grouped samples")
        return []

    classes = {}
    triples = []
    for left_subject in subjects:
        for right_subject in subjects:
            if left_subject == right_subject:
                continue
            for i in by_subject[left_subject]:
                for j in by_subject[right_subject]:
                    key = (window_states[i], window_states[j])
                    if key not in classes:
                        classes[key] = encode_pair_label(*key).class_index
                    triples.append((i, j, classes[key]))
    return triples


def materialize_sample(left, right, params=DEFAULT_MINMAX, counter=None):
    """
    Place two single-user windows side by side and scale them

    Parameters:
    left (Window): Person allocated to joints 0-9
    right (Window): Person allocated to joints 10-19
    params (MinMaxParams): Scaling ranges
    counter (OutOfRangeCounter): Optional out-of-range tally

    Returns:
    GroupedSample: length x 20 x 3 scaled tensor with its pair label
    """
    if left.frames.shape != right.frames.shape:
        raise DataError(f"window shapes differ: {left.frames.shape} vs {right.frames.shape}")
    tensor = np.concatenate([left.frames, right.frames], axis=1)
    return GroupedSample(
        tensor=minmax_scale(tensor, params, counter),
        label=encode_pair_label(left.state, right.state),
        subjects=(left.subject, right.subject),
    )


def pair_windows(windows_by_subject, params=DEFAULT_MINMAX, counter=None):
    """
    Synthesize grouped samples from single-user windows of distinct subjects

    Parameters:
    windows_by_subject (dict): subject -> list[Window]
    params (MinMaxParams): Scaling ranges applied to the paired tensors
    counter (OutOfRangeCounter): Optional out-of-range tally

    Returns:
    list[GroupedSample]: One sample per ordered cross-subject window pair
    """
    flat = []
    for subject in sorted(windows_by_subject):
        flat.extend(windows_by_subject[subject])
    triples = pair_index_triples([w.subject for w in flat], [w.state for w in flat])
    return [materialize_sample(flat[i], flat[j], params, counter) for i, j, _ in triples]


def window_pair_recording(recording, length=WINDOW_LENGTH, stride=WINDOW_STRIDE):
    """
    Window a synchronized two-person stream, labeling each window by its last frame

    Parameters:
    recording (PairRecording): Normalized two-person recording
    length (int): Window length
    stride (int): Frames between window starts

    Returns:
    list[tuple]: (left Window, right Window, PairLabel) in start order
    """
    starts = window_starts(recording.frame_count, length, stride)
    if len(starts) == 0:
        logger.warning(
            f"Pair recording {recording.recording_id} has {recording.frame_count} frames, "
            f"fewer than one window of {length}"
        )
    left_subject, right_subject = recording.subjects
    windows = []
    for start in starts:
        last = start + length - 1
        left_state = recording.left_states[last]
        right_state = recording.right_states[last]
        span = (recording.recording_id, int(recording.frame_index[start]), int(recording.frame_index[last]))
        windows.append((
            Window(recording.left[start:start + length], left_subject, left_state, span),
            Window(recording.right[start:start + length], right_subject, right_state, span),
            encode_pair_label(left_state, right_state),
        ))
    return windows


def label_change_frames(labels):
    """
    Frames where the label differs from the previous frame's

    Parameters:
    labels (list): Per-frame labels (any comparable values)

    Returns:
    list[int]: Frame indices of every registered change
    """
    return [k for k in range(1, len(labels)) if labels[k] != labels[k - 1]]


def _last_frame_of(item):
    if isinstance(item, Window):
        return item.last_frame
    if isinstance(item, tuple) and item and isinstance(item[0], Window):
        return item[0].last_frame
    raise DataError(f"cannot find a source span on {type(item).__name__}")


def discard_transitions(windows, change_frames, margin_frames=60, last_frame=_last_frame_of):
    """
    Drop windows that end close to a label change

    A window is removed iff its last-frame index lies in [k - margin, k + margin]
    for some change frame k.

    Parameters:
    windows (list): Windows, or (left, right, label) tuples from window_pair_recording
    change_frames (list[int]): Frames where the label changed
    margin_frames (int): Half-width of the discard interval
    last_frame (callable): Extracts the last-frame index of an item

    Returns:
    list: Kept items in input order
    """
    if margin_frames < 0:
        raise DataError(f"margin must be non-negative, got {margin_frames}")
    if not change_frames:
        return list(windows)
    changes = np.sort(np.asarray(change_frames))
    kept = []
    for item in windows:
        end = last_frame(item)
        position = np.searchsorted(changes, end - margin_frames, side="left")
        if position < len(changes) and changes[position] <= end + margin_frames:
            continue
        kept.append(item)
    removed = len(windows) - len(kept)
    if removed:
        logger.info(f"Discarded {removed} of {len(windows)} windows near label changes")
    return kept


@dataclass(frozen=True)
class Fold:
    subject: str
    train: list  # sample indices
    test: list

    @property
    def is_usable(self):
        return bool(self.train) and bool(self.test)


def build_loso_folds(manifest):
    """
    Leave-one-subject-out folds over a dataset

    The test set of subject s holds every sample mentioning s; the train set
    holds only the samples that do not mention s at all.

    Parameters:
    manifest (DatasetManifest): Dataset whose samples carry subject pairs

    Returns:
    list[Fold]: One fold per subject, in sorted subject order
    """
    subjects = sorted(manifest.subjects)
    if len(subjects) < 2:
        raise DataError(f"LOSO needs at least 2 subjects, found {len(subjects)}")
    sample_subjects = manifest.sample_subjects()
    folds = []
    for subject in subjects:
        train, test = [], []
        for index, pair in enumerate(sample_subjects):
            (test if subject in pair else train).append(index)
        folds.append(Fold(subject, train, test))
    return folds
