"""
Recording-level preprocessing: prune -> normalize -> window, for single-user
and two-person recordings, with per-recording statistics.
"""

import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from utils.recordings import READERS, list_recordings
from utils.skeleton import EPSILON_DEGENERATE, normalize_poses, prune_frames
from utils.windowing import (
    PairRecording,
    discard_transitions,
    label_change_frames,
    slide_windows,
    window_pair_recording,
)

logger = logging.getLogger(__name__)


def preprocessing_parameters(config):
    """
    Parameters every sample of a dataset shares

    Parameters:
    config (PreprocessingConfig): Preprocessing section of the pipeline config

    Returns:
    dict: window_length, stride, minmax, joint_map
    """
    return {
        "window_length": int(config.window_length),
        "stride": int(config.stride),
        "minmax": dict(config.minmax_params.to_dict()),
        "joint_map": [int(i) for i in config.joint_map],
    }


def preprocess_recording(recording, config):
    """
    Turn one single-user recording into windows

    Parameters:
    recording (Recording): Raw recording
    config (PreprocessingConfig): Preprocessing parameters

    Returns:
    tuple: (list[Window], stats dict)
    """
    pruned = prune_frames(recording.joints, config.joint_map)
    poses, keep = normalize_poses(pruned, EPSILON_DEGENERATE)
    rejected = int(np.count_nonzero(~keep))
    if rejected:
        logger.warning(f"Recording {recording.recording_id}: rejected {rejected} degenerate frames")
    windows = slide_windows(
        poses, config.window_length, config.stride,
        subject=recording.subject, state=recording.state, recording_id=recording.recording_id,
        frame_index=np.flatnonzero(keep),
    )
    stats = {
        "recording": recording.recording_id,
        "subject": recording.subject,
        "state": recording.state.value,
        "frames_read": recording.frame_count,
        "frames_rejected": rejected,
        "windows": len(windows),
    }
    logger.info(
        f"Recording {recording.recording_id}: {stats['frames_read']} frames read, "
        f"{len(windows)} windows cut, {rejected} frames rejected"
    )
    return windows, stats


def normalize_pair_recording(raw, config):
    """
    Prune and normalize both people of a two-person recording

    A frame is dropped for both people when either skeleton is degenerate.

    Parameters:
    raw (RawPairRecording): Raw two-person recording
    config (PreprocessingConfig): Preprocessing parameters

    Returns:
    tuple: (PairRecording, number of rejected frames)
    """
    left_pruned = prune_frames(raw.joints[:, 0], config.joint_map)
    right_pruned = prune_frames(raw.joints[:, 1], config.joint_map)
    _, left_keep = normalize_poses(left_pruned)
    _, right_keep = normalize_poses(right_pruned)
    keep = left_keep & right_keep
    left, _ = normalize_poses(left_pruned[keep])
    right, _ = normalize_poses(right_pruned[keep])
    labels = [pair for pair, kept in zip(raw.labels, keep) if kept]
    recording = PairRecording(
        recording_id=raw.recording_id,
        subjects=tuple(raw.subjects),
        left=left,
        right=right,
        left_states=[l for l, _ in labels],
        right_states=[r for _, r in labels],
        frame_index=np.flatnonzero(keep),
    )
    return recording, int(np.count_nonzero(~keep))


def preprocess_pair_recording(raw, config):
    """
    Turn one two-person recording into labeled windows, discarding transitions

    Parameters:
    raw (RawPairRecording): Raw two-person recording
    config (PreprocessingConfig): Preprocessing parameters

    Returns:
    tuple: (list of (left Window, right Window, PairLabel), stats dict)
    """
    recording, rejected = normalize_pair_recording(raw, config)
    windows = window_pair_recording(recording, config.window_length, config.stride)
    changes = [int(recording.frame_index[k]) for k in label_change_frames(recording.label_pairs)]
    kept = discard_transitions(windows, changes, config.margin_frames)
    stats = {
        "recording": raw.recording_id,
        "subject": "+".join(raw.subjects),
        "state": "pair",
        "frames_read": raw.frame_count,
        "frames_rejected": rejected,
        "windows": len(kept),
        "windows_discarded": len(windows) - len(kept),
    }
    logger.info(
        f"Pair recording {raw.recording_id}: {raw.frame_count} frames read, {len(windows)} windows cut, "
        f"{len(windows) - len(kept)} discarded near {len(changes)} label changes, {rejected} frames rejected"
    )
    return kept, stats


def _single(path, config, reader):
    return preprocess_recording(READERS[reader][0](path), config)


def _pair(path, config, reader):
    return preprocess_pair_recording(READERS[reader][1](path), config)


def preprocess_directory(raw_dir, config, workers=1, reader="ndjson"):
    """
    Preprocess every recording in a directory

    Recordings are processed in parallel; results come back in file-name order.

    Parameters:
    raw_dir (str | Path): Directory of recordings
    config (PreprocessingConfig): Preprocessing parameters
    workers (int): Parallel jobs
    reader (str): Registered reader name

    Returns:
    dict: single windows, pair windows, single sources, pair sources, stats DataFrame
    """
    singles, pairs = list_recordings(raw_dir)
    logger.info(f"Found {len(singles)} single-user and {len(pairs)} pair recordings in {raw_dir}")
    quiet = not logger.isEnabledFor(logging.INFO)
    single_results = Parallel(n_jobs=workers)(
        delayed(_single)(p, config, reader) for p in tqdm(singles, desc="recordings", disable=quiet)
    )
    pair_results = Parallel(n_jobs=workers)(
        delayed(_pair)(p, config, reader) for p in tqdm(pairs, desc="pair recordings", disable=quiet)
    )

    single_windows = [w for windows, _ in single_results for w in windows]
    pair_windows = [w for windows, _ in pair_results for w in windows]
    stats = pd.DataFrame([s for _, s in single_results] + [s for _, s in pair_results])
    return {
        "single_windows": single_windows,
        "pair_windows": pair_windows,
        "single_sources": [p.stem for p in singles],
        "pair_sources": [p.stem for p in pairs],
        "stats": stats,
    }
