"""
Synthetic skeleton recordings for desk-scale runs.

Bodies follow the 32-joint Kinect layout in millimeters, camera space with x to
the right, y down and z away from the camera. Each subject gets a seeded body
scale, position and motion tempo. Motion per state:

    W  both forearms oscillate in front of the chest
    P  the right arm reaches sideways and down to a table and returns
    R  the right hand is raised above the head and held
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from utils.recordings import PAIR_PREFIX, RECORDING_SUFFIX, write_pair_recording, write_recording
from utils.skeleton import KINECT_JOINTS, ActivityState

logger = logging.getLogger(__name__)

J = {name: index for index, name in enumerate(KINECT_JOINTS)}

# Standing pose relative to the pelvis, person facing the camera; their left is +x
BODY_TEMPLATE = {
    "PELVIS": (0, 0, 0),
    "SPINE_NAVEL": (0, -190, 0),
    "SPINE_CHEST": (0, -350, 0),
    "NECK": (0, -560, 0),
    "CLAVICLE_LEFT": (40, -520, 0),
    "SHOULDER_LEFT": (180, -500, 0),
    "ELBOW_LEFT": (200, -230, 0),
    "WRIST_LEFT": (210, 20, 0),
    "HAND_LEFT": (210, 90, 0),
    "HANDTIP_LEFT": (210, 160, 0),
    "THUMB_LEFT": (190, 110, -30),
    "CLAVICLE_RIGHT": (-40, -520, 0),
    "SHOULDER_RIGHT": (-180, -500, 0),
    "ELBOW_RIGHT": (-200, -230, 0),
    "WRIST_RIGHT": (-210, 20, 0),
    "HAND_RIGHT": (-210, 90, 0),
    "HANDTIP_RIGHT": (-210, 160, 0),
    "THUMB_RIGHT": (-190, 110, -30),
    "HIP_LEFT": (90, 0, 0),
    "KNEE_LEFT": (95, 420, 0),
    "ANKLE_LEFT": (95, 820, 0),
    "FOOT_LEFT": (95, 860, -120),
    "HIP_RIGHT": (-90, 0, 0),
    "KNEE_RIGHT": (-95, 420, 0),
    "ANKLE_RIGHT": (-95, 820, 0),
    "FOOT_RIGHT": (-95, 860, -120),
    "HEAD": (0, -700, 0),
    "NOSE": (0, -700, -100),
    "EYE_LEFT": (30, -730, -80),
    "EAR_LEFT": (70, -710, 0),
    "EYE_RIGHT": (-30, -730, -80),
    "EAR_RIGHT": (-70, -710, 0),
}
TEMPLATE = np.array([BODY_TEMPLATE[name] for name in KINECT_JOINTS], dtype=np.float64)

UPPER_BODY = [
    J[name] for name in KINECT_JOINTS
    if not name.startswith(("PELVIS", "HIP", "KNEE", "ANKLE", "FOOT", "SPINE_NAVEL"))
]

RAISE_SECONDS = 0.3
SWAY_MM = 8.0
SWAY_HZ = 0.2


@dataclass(frozen=True)
class SubjectProfile:
    subject: str
    scale: float
    offset: tuple  # pelvis position in camera space, mm
    phase: float
    tempo: float


def subject_ids(count, prefix="S"):
    return [f"{prefix}{i:02d}" for i in range(1, count + 1)]


def make_profile(subject, rng):
    """Seeded anthropometry and position for one synthetic subject"""
    return SubjectProfile(
        subject=subject,
        scale=float(rng.uniform(0.9, 1.1)),
        offset=(
            float(rng.uniform(-100, 100)),
            float(rng.uniform(170, 230)),
            float(rng.uniform(2100, 2600)),
        ),
        phase=float(rng.uniform(0, 2 * np.pi)),
        tempo=float(rng.uniform(0.9, 1.1)),
    )


def _side(name, side):
    return J[f"{name}_{side}"]


def _place_arm(pose, side, elbow, wrist):
    """Move one arm's elbow and wrist; the hand joints follow the forearm direction"""
    pose[_side("ELBOW", side)] = elbow
    pose[_side("WRIST", side)] = wrist
    forearm = wrist - elbow
    direction = forearm / max(np.linalg.norm(forearm), 1e-9)
    pose[_side("HAND", side)] = wrist + 70 * direction
    pose[_side("HANDTIP", side)] = wrist + 140 * direction
    pose[_side("THUMB", side)] = wrist + 60 * direction + np.array([0.0, 0.0, -30.0])


def state_pose(state, t, profile, spec):
    """
    Body pose for one state at time t seconds into the activity

    Parameters:
    state (ActivityState): Activity being performed
    t (float): Seconds since the activity started
    profile (SubjectProfile): Subject tempo and phase
    spec (SyntheticSpec): Motion parameters

    Returns:
    np.ndarray: 32 x 3 pose in template units, pelvis at the origin
    """
    pose = TEMPLATE.copy()
    if state == ActivityState.WORKING:
        omega = 2 * np.pi * spec.work_frequency_hz * profile.tempo
        amplitude = spec.work_amplitude_mm
        for side, sign, shift in (("LEFT", 1.0, 0.0), ("RIGHT", -1.0, np.pi)):
            angle = omega * t + profile.phase + shift
            elbow = np.array([sign * 200.0, -250.0, -80.0])
            wrist = np.array([
                sign * 100.0 + 0.3 * amplitude * np.cos(angle),
                -380.0 + amplitude * np.sin(angle),
                -320.0,
            ])
            _place_arm(pose, side, elbow, wrist)
    elif state == ActivityState.PREPARING:
        period = spec.reach_period_s / profile.tempo
        reach = 0.5 * (1 - np.cos(2 * np.pi * t / period))
        rest = TEMPLATE[J["WRIST_RIGHT"]]
        target = rest + np.array([-spec.reach_distance_mm, 130.0, -200.0])
        wrist = rest + reach * (target - rest)
        shoulder = TEMPLATE[J["SHOULDER_RIGHT"]]
        elbow = shoulder + 0.5 * (wrist - shoulder) + np.array([-30.0, 30.0, 30.0]) * (1 - reach)
        _place_arm(pose, "RIGHT", elbow, wrist)
        pose[UPPER_BODY] += np.array([-60.0 * reach, 20.0 * reach, 0.0])
    elif state == ActivityState.REQUESTING:
        progress = min(1.0, t / RAISE_SECONDS)
        head_y = TEMPLATE[J["HEAD"], 1]
        wrist_target = np.array([-150.0, head_y - spec.raise_height_mm, -60.0])
        elbow_target = np.array([-230.0, head_y + 60.0, -40.0])
        wrist = TEMPLATE[J["WRIST_RIGHT"]] + progress * (wrist_target - TEMPLATE[J["WRIST_RIGHT"]])
        elbow = TEMPLATE[J["ELBOW_RIGHT"]] + progress * (elbow_target - TEMPLATE[J["ELBOW_RIGHT"]])
        tremor = 10.0 * np.sin(2 * np.pi * 0.5 * t + profile.phase)
        _place_arm(pose, "RIGHT", elbow, wrist + np.array([tremor, 0.0, 0.0]))
    return pose


def simulate(profile, states, segment_starts, spec, rng):
    """
    Joint trajectories for one person stepping through per-frame states

    Parameters:
    profile (SubjectProfile): Subject body and tempo
    states (list[ActivityState]): State of every frame
    segment_starts (list[int]): Frame where each activity segment begins
    spec (SyntheticSpec): Motion and noise parameters
    rng (np.random.Generator): Noise source

    Returns:
    np.ndarray: T x 32 x 3 joints in camera space, mm
    """
    frames = len(states)
    starts = np.asarray(sorted(segment_starts))
    joints = np.empty((frames, len(KINECT_JOINTS), 3))
    for k, state in enumerate(states):
        start = starts[np.searchsorted(starts, k, side="right") - 1]
        t = (k - start) / spec.fps
        pose = state_pose(state, t, profile, spec) * profile.scale
        sway = SWAY_MM * np.sin(2 * np.pi * SWAY_HZ * k / spec.fps + profile.phase)
        joints[k] = pose + np.asarray(profile.offset) + np.array([sway, 0.0, 0.0])
    if spec.noise_mm > 0:
        joints += rng.normal(0.0, spec.noise_mm, size=joints.shape)
    return joints


def timestamps(frames, fps):
    step = int(round(1e9 / fps))
    return np.arange(frames, dtype=np.int64) * step


def _recording_rng(spec, *key):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, *key]))


def pair_partners(subjects):
    """Subject pairs for pair recordings: each with the next, cyclically"""
    if len(subjects) == 2:
        return [(subjects[0], subjects[1])]
    return [(subjects[i], subjects[(i + 1) % len(subjects)]) for i in range(len(subjects))]


def generate_recordings(spec):
    """
    Write single-user and, optionally, pair recordings

    Parameters:
    spec (SyntheticSpec): Generator settings

    Returns:
    dict: 'singles' and 'pairs' lists of written paths
    """
    spec.validate()
    output = Path(spec.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    states = list(ActivityState)

    profiles = [make_profile(s, rng) for s in subject_ids(spec.subjects)]
    singles = []
    jobs = [(i, p, j, s, n) for i, p in enumerate(profiles) for j, s in enumerate(states)
            for n in range(spec.recordings_per_state)]
    for i, profile, j, state, n in tqdm(jobs, desc="synthetic", disable=not logger.isEnabledFor(logging.INFO)):
        joints = simulate(profile, [state] * spec.frames_per_recording, [0], spec, _recording_rng(spec, i, j, n))
        path = output / f"{profile.subject}_{state.value}_{n + 1}{RECORDING_SUFFIX}"
        write_recording(path, profile.subject, state, timestamps(spec.frames_per_recording, spec.fps), joints)
        singles.append(path)
    logger.info(f"Wrote {len(singles)} single-user recordings for {len(profiles)} subjects to {output}")

    pairs = []
    if spec.pair_subjects:
        pair_profiles = {s: make_profile(s, rng) for s in subject_ids(spec.pair_subjects, prefix="Q")}
        for p, (left_id, right_id) in enumerate(pair_partners(sorted(pair_profiles))):
            left = _beside(pair_profiles[left_id], -500.0)
            right = _beside(pair_profiles[right_id], 500.0)
            for n in range(spec.pair_recordings):
                pairs.append(_write_pair(output, spec, left, right, p, n, states))
        logger.info(f"Wrote {len(pairs)} pair recordings for {spec.pair_subjects} subjects to {output}")
    return {"singles": singles, "pairs": pairs}


def _beside(profile, x_center):
    x, y, z = profile.offset
    return replace(profile, offset=(x + x_center, y, z))


def _write_pair(output, spec, left, right, p, n, states):
    rng = _recording_rng(spec, 1000 + p, n)
    combos = [(a, b) for a in states for b in states]
    order = rng.permutation(len(combos))
    segment = spec.pair_segment_frames
    labels, starts = [], []
    for k in order:
        starts.append(len(labels))
        labels.extend([combos[k]] * segment)
    left_joints = simulate(left, [a for a, _ in labels], starts, spec, rng)
    right_joints = simulate(right, [b for _, b in labels], starts, spec, rng)
    path = output / f"{PAIR_PREFIX}{left.subject}_{right.subject}_{n + 1}{RECORDING_SUFFIX}"
    write_pair_recording(
        path, (left.subject, right.subject), timestamps(len(labels), spec.fps),
        np.stack([left_joints, right_joints], axis=1), labels,
    )
    return path
