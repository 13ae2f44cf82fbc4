import numpy as np
import pytest

from utils.config import PipelineConfig, SyntheticSpec, apply_overrides
from utils.recordings import write_pair_recording, write_recording
from utils.skeleton import RAW_JOINT_COUNT, ActivityState
from utils.synthetic import timestamps
from utils.windowing import Window


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_raw_frames(rng, frames):
    """T x 32 x 3 joints around a plausible body position, in millimeters"""
    return rng.normal(0.0, 300.0, size=(frames, RAW_JOINT_COUNT, 3)) + np.array([0.0, 0.0, 2500.0])


def make_window(rng, subject, state, recording="rec", start=0, length=130):
    frames = rng.uniform(-2.0, 1.5, size=(length, 10, 3))
    return Window(frames, subject, ActivityState.from_code(state), (recording, start, start + length - 1))


@pytest.fixture
def raw_dir(tmp_path, rng):
    """Two subjects x three states of 160 random frames each, plus one pair recording"""
    target = tmp_path / "raw"
    for subject in ("A", "B"):
        for state in ActivityState:
            joints = random_raw_frames(rng, 160)
            write_recording(target / f"{subject}_{state.value}_1.ndjson", subject, state,
                            timestamps(160, 30), joints)
    frames = 400
    labels = [(ActivityState.WORKING, ActivityState.PREPARING)] * 200 + \
        [(ActivityState.REQUESTING, ActivityState.WORKING)] * 200
    joints = np.stack([random_raw_frames(rng, frames), random_raw_frames(rng, frames)], axis=1)
    write_pair_recording(target / "pair_C_D_1.ndjson", ("C", "D"), timestamps(frames, 30), joints, labels)
    return target


@pytest.fixture
def tiny_config(tmp_path):
    """Small models and short training so fold runs finish quickly"""
    return apply_overrides(PipelineConfig(), {
        "paths.raw_dir": str(tmp_path / "raw"),
        "paths.dataset_dir": str(tmp_path / "datasets"),
        "paths.checkpoint_dir": str(tmp_path / "checkpoints"),
        "paths.report_dir": str(tmp_path / "reports"),
        "preprocessing.window_length": 8,
        "preprocessing.stride": 4,
        "lstm.layers": 1,
        "lstm.hidden_size": 4,
        "vae.channels": [2, 3],
        "vae.latent_dim": 2,
        "vae.temporal_kernel": 3,
        "training.batch_size": 8,
        "training.lstm_epochs": 1,
        "training.vae_epochs": 1,
        "training.head_epochs": 1,
        "training.dtype": "float64",
    })


@pytest.fixture
def synthetic_spec(tmp_path):
    return SyntheticSpec(output_dir=str(tmp_path / "raw"), subjects=3, frames_per_recording=40, noise_mm=0.0)
