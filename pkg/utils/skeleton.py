"""
Skeleton domain types and per-frame transforms: joint pruning, neck/navel
normalization, fixed-range min-max scaling and pair label encoding.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from utils.errors import DataError, DegenerateFrameError

logger = logging.getLogger(__name__)

# Azure Kinect body tracking joint order
KINECT_JOINTS = [
    "PELVIS", "SPINE_NAVEL", "SPINE_CHEST", "NECK",
    "CLAVICLE_LEFT", "SHOULDER_LEFT", "ELBOW_LEFT", "WRIST_LEFT",
    "HAND_LEFT", "HANDTIP_LEFT", "THUMB_LEFT",
    "CLAVICLE_RIGHT", "SHOULDER_RIGHT", "ELBOW_RIGHT", "WRIST_RIGHT",
    "HAND_RIGHT", "HANDTIP_RIGHT", "THUMB_RIGHT",
    "HIP_LEFT", "KNEE_LEFT", "ANKLE_LEFT", "FOOT_LEFT",
    "HIP_RIGHT", "KNEE_RIGHT", "ANKLE_RIGHT", "FOOT_RIGHT",
    "HEAD", "NOSE", "EYE_LEFT", "EAR_LEFT", "EYE_RIGHT", "EAR_RIGHT",
]
RAW_JOINT_COUNT = len(KINECT_JOINTS)
PRUNED_JOINT_COUNT = 11
POSE_JOINT_COUNT = PRUNED_JOINT_COUNT - 1

# Position 0 must be the spine navel and position 1 the neck
DEFAULT_JOINT_MAP = [
    KINECT_JOINTS.index(name) for name in [
        "SPINE_NAVEL", "NECK", "PELVIS", "SPINE_CHEST", "HEAD",
        "SHOULDER_LEFT", "SHOULDER_RIGHT", "ELBOW_LEFT", "ELBOW_RIGHT",
        "WRIST_LEFT", "WRIST_RIGHT",
    ]
]

# Rows of a NormalizedPose (spine navel dropped)
POSE_JOINTS = [
    "NECK", "PELVIS", "SPINE_CHEST", "HEAD",
    "SHOULDER_LEFT", "SHOULDER_RIGHT", "ELBOW_LEFT", "ELBOW_RIGHT",
    "WRIST_LEFT", "WRIST_RIGHT",
]

# Anatomical tree over POSE_JOINTS; pelvis bridges to the chest because the navel is gone
SKELETON_EDGES = [
    (1, 2),  # pelvis - spine chest
    (2, 0),  # spine chest - neck
    (0, 3),  # neck - head
    (2, 4), (2, 5),  # chest - shoulders
    (4, 6), (6, 8),  # left arm
    (5, 7), (7, 9),  # right arm
]

EPSILON_DEGENERATE = 1e-6


class Joint3D(NamedTuple):
    x: float
    y: float
    z: float


class ActivityState(Enum):
    WORKING = "W"
    PREPARING = "P"
    REQUESTING = "R"

    @property
    def ordinal(self):
        return _STATE_ORDER.index(self)

    @classmethod
    def from_code(cls, code):
        """
        Parse a state from its one-letter code or full name

        Parameters:
        code (str | ActivityState): 'W', 'P', 'R', 'Working', ...

        Returns:
        ActivityState: Parsed state
        """
        if isinstance(code, cls):
            return code
        if isinstance(code, str):
            text = code.strip()
            for state in cls:
                if text.upper() in (state.value, state.name):
                    return state
                if text.lower() == state.name.lower():
                    return state
        raise DataError(f"unknown activity state {code!r}")

    @classmethod
    def from_ordinal(cls, ordinal):
        return _STATE_ORDER[ordinal]


_STATE_ORDER = [ActivityState.WORKING, ActivityState.PREPARING, ActivityState.REQUESTING]
NUM_STATES = len(_STATE_ORDER)
NUM_CLASSES = NUM_STATES * NUM_STATES


@dataclass(frozen=True)
class PairLabel:
    left: ActivityState
    right: ActivityState
    class_index: int

    def __post_init__(self):
        expected = NUM_STATES * self.left.ordinal + self.right.ordinal
        if self.class_index != expected:
            raise DataError(
                f"class index {self.class_index} does not match pair "
                f"({self.left.value},{self.right.value}) -> {expected}"
            )

    @property
    def name(self):
        return f"{self.left.value}{self.right.value}"


CLASS_NAMES = [f"{a.value}{b.value}" for a in _STATE_ORDER for b in _STATE_ORDER]


@dataclass(frozen=True)
class MinMaxParams:
    old_min: float = -2.5
    old_max: float = 1.75
    new_min: float = 0.0
    new_max: float = 1.0

    def __post_init__(self):
        if not self.old_min < self.old_max:
            raise DataError(f"old_min {self.old_min} must be below old_max {self.old_max}")
        if not self.new_min < self.new_max:
            raise DataError(f"new_min {self.new_min} must be below new_max {self.new_max}")

    def to_dict(self):
        return {
            "old_min": self.old_min,
            "old_max": self.old_max,
            "new_min": self.new_min,
            "new_max": self.new_max,
        }


DEFAULT_MINMAX = MinMaxParams()


@dataclass
class OutOfRangeCounter:
    """Tally of values fed to minmax_scale and how many fell outside the source range"""

    total: int = 0
    out_of_range: int = 0

    @property
    def fraction(self):
        return self.out_of_range / self.total if self.total else 0.0


@dataclass(frozen=True)
class RawFrame:
    joints: np.ndarray
    timestamp_ns: int
    subject: str

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (RAW_JOINT_COUNT, 3):
            raise DataError(f"raw frame needs {RAW_JOINT_COUNT}x3 joints, got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise DataError("raw frame contains non-finite coordinates")
        object.__setattr__(self, "joints", joints)

    def joint(self, index):
        return Joint3D(*self.joints[index])


@dataclass(frozen=True)
class PrunedFrame:
    joints: np.ndarray

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (PRUNED_JOINT_COUNT, 3):
            raise DataError(f"pruned frame needs {PRUNED_JOINT_COUNT}x3 joints, got {joints.shape}")
        object.__setattr__(self, "joints", joints)

    @property
    def spine_navel(self):
        return Joint3D(*self.joints[0])

    @property
    def neck(self):
        return Joint3D(*self.joints[1])


@dataclass(frozen=True)
class NormalizedPose:
    joints: np.ndarray = field(repr=False)

    @property
    def neck(self):
        return self.joints[0]


def validate_joint_map(joint_map):
    """
    Check a joint map selects 11 distinct raw joints

    Parameters:
    joint_map (list[int]): Source indices, position 0 spine navel, position 1 neck

    Returns:
    np.ndarray: The map as an integer array
    """
    indices = np.asarray(list(joint_map))
    if indices.shape != (PRUNED_JOINT_COUNT,):
        raise DataError(f"joint map needs {PRUNED_JOINT_COUNT} indices, got {len(indices)}")
    if not np.issubdtype(indices.dtype, np.integer):
        raise DataError("joint map indices must be integers")
    if indices.min() < 0 or indices.max() >= RAW_JOINT_COUNT:
        raise DataError(f"joint map index out of range [0, {RAW_JOINT_COUNT - 1}]: {indices.tolist()}")
    if len(set(indices.tolist())) != PRUNED_JOINT_COUNT:
        raise DataError(f"joint map has duplicate indices: {indices.tolist()}")
    return indices


def prune_frame(raw, joint_map=DEFAULT_JOINT_MAP):
    """
    Keep the 11 joints named by the joint map, in map order

    Parameters:
    raw (RawFrame): 32-joint sensor frame
    joint_map (list[int]): 11 distinct source indices

    Returns:
    PrunedFrame: Selected joints
    """
    indices = validate_joint_map(joint_map)
    return PrunedFrame(raw.joints[indices])


def prune_frames(joints, joint_map=DEFAULT_JOINT_MAP):
    """
    Vectorized prune over a whole recording

    Parameters:
    joints (np.ndarray): T x 32 x 3 raw joints
    joint_map (list[int]): 11 distinct source indices

    Returns:
    np.ndarray: T x 11 x 3 pruned joints
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 3 or joints.shape[1:] != (RAW_JOINT_COUNT, 3):
        raise DataError(f"expected T x {RAW_JOINT_COUNT} x 3 joints, got {joints.shape}")
    return joints[:, validate_joint_map(joint_map)]


def normalize_poses(pruned, epsilon=EPSILON_DEGENERATE):
    """
    Vectorized neck/navel normalization over a recording

    Each joint becomes (J_i - J_0) / ||J_1 - J_0||, then the all-zero navel row
    is dropped.

    Parameters:
    pruned (np.ndarray): T x 11 x 3 pruned joints
    epsilon (float): Minimum navel-neck distance for a usable frame

    Returns:
    tuple: (T' x 10 x 3 normalized poses, boolean mask of kept frames over T)
    """
    pruned = np.asarray(pruned, dtype=np.float64)
    if pruned.ndim != 3 or pruned.shape[1:] != (PRUNED_JOINT_COUNT, 3):
        raise DataError(f"expected T x {PRUNED_JOINT_COUNT} x 3 joints, got {pruned.shape}")
    navel = pruned[:, :1, :]
    scale = np.linalg.norm(pruned[:, 1, :] - pruned[:, 0, :], axis=-1)
    keep = scale > epsilon
    centered = pruned[keep] - navel[keep]
    poses = centered[:, 1:, :] / scale[keep][:, None, None]
    return poses, keep


def normalize_pose(frame, epsilon=EPSILON_DEGENERATE):
    """
    Normalize one pruned frame against its spine navel and neck

    Parameters:
    frame (PrunedFrame): 11-joint frame
    epsilon (float): Minimum navel-neck distance

    Returns:
    NormalizedPose: 10 x 3 pose with unit-length neck row
    """
    poses, keep = normalize_poses(frame.joints[None], epsilon)
    if not keep[0]:
        raise DegenerateFrameError(
            f"neck and spine navel coincide within {epsilon}; frame rejected"
        )
    return NormalizedPose(poses[0])


def minmax_scale(x, params=DEFAULT_MINMAX, counter=None):
    """
    Fixed-range min-max scaling

    Values outside [old_min, old_max] are mapped by the same affine rule, not
    clamped; the optional counter records how many there were.

    Parameters:
    x (float | np.ndarray): Values to scale
    params (MinMaxParams): Source and target ranges
    counter (OutOfRangeCounter): Optional tally to update

    Returns:
    float | np.ndarray: Scaled values, same shape as x
    """
    values = np.asarray(x, dtype=np.float64)
    scaled = (values - params.old_min) / (params.old_max - params.old_min) \
        * (params.new_max - params.new_min) + params.new_min
    if counter is not None:
        outside = int(np.count_nonzero((values < params.old_min) | (values > params.old_max)))
        counter.total += int(values.size)
        counter.out_of_range += outside
        if outside:
            logger.debug(f"{outside} values outside [{params.old_min}, {params.old_max}]")
    if np.ndim(x) == 0:
        return float(scaled)
    return scaled


def encode_pair_label(left, right):
    """
    Map an ordered pair of states to its class

    Parameters:
    left (ActivityState): State of the person allocated to joints 0-9
    right (ActivityState): State of the person allocated to joints 10-19

    Returns:
    PairLabel: Label with class index 3*ord(left) + ord(right)
    """
    left = ActivityState.from_code(left)
    right = ActivityState.from_code(right)
    return PairLabel(left, right, NUM_STATES * left.ordinal + right.ordinal)


def decode_pair_label(class_index):
    """
    Inverse of encode_pair_label

    Parameters:
    class_index (int): Class in [0, 8]

    Returns:
    tuple: (left ActivityState, right ActivityState)
    """
    if isinstance(class_index, bool) or not isinstance(class_index, (int, np.integer)):
        raise DataError(f"class index must be an integer, got {class_index!r}")
    if not 0 <= class_index < NUM_CLASSES:
        raise DataError(f"class index {class_index} outside [0, {NUM_CLASSES - 1}]")
    left, right = divmod(int(class_index), NUM_STATES)
    return ActivityState.from_ordinal(left), ActivityState.from_ordinal(right)


def label_from_index(class_index):
    return encode_pair_label(*decode_pair_label(class_index))


def one_hot(label):
    """
    One-hot target vector for a pair label

    Parameters:
    label (PairLabel | int | np.ndarray): Label, class index, or array of class indices

    Returns:
    np.ndarray: Length-9 vector with a single 1, or one such row per class index
    """
    if isinstance(label, PairLabel):
        label = label.class_index
    indices = np.asarray(label, dtype=np.int64)
    if indices.ndim == 0:
        indices = np.int64(label_from_index(int(indices)).class_index)
    elif np.any((indices < 0) | (indices >= NUM_CLASSES)):
        raise DataError(f"class indices must lie in [0, {NUM_CLASSES - 1}]")
    return np.eye(NUM_CLASSES)[indices]
