"""Core skeletal-motion types: poses, contexts, trajectories and episodes.

All containers are immutable after construction (arrays are marked
read-only) so they can be shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Upper-body skeleton layout. The order is fixed so that serialized
# episodes and per-joint weight vectors index consistently.
JOINT_NAMES = (
    "left_wrist",
    "right_wrist",
    "left_elbow",
    "right_elbow",
    "left_shoulder",
    "right_shoulder",
    "upper_back",
)
N_JOINTS = 7
WRIST_INDICES = (0, 1)

# Working rates: 10 frames (0.4 s) of history predict 25 frames (1 s).
HISTORY_LEN = 10
HORIZON_LEN = 25
DEFAULT_DT = 0.04
DEFAULT_FPS = 25.0

# (shoulder->elbow, elbow->wrist) index pairs per arm.
ARM_BONES = ((4, 2), (2, 0), (5, 3), (3, 1))
BONE_MIN = 0.15
BONE_MAX = 0.45

TASKS = ("stir", "handover", "tableset")


class MotionError(ValueError):
    """Raised for malformed poses, episodes or window requests."""


def _readonly(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    arr = arr.copy() if arr.flags.writeable else arr
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Pose:
    """A single upper-body pose: (7, 3) joint positions in meters."""

    joints: np.ndarray

    def __post_init__(self):
        joints = _readonly(self.joints)
        if joints.shape != (N_JOINTS, 3):
            raise MotionError(f"pose must have shape ({N_JOINTS}, 3), got {joints.shape}")
        if not np.isfinite(joints).all():
            raise MotionError("pose contains non-finite coordinates")
        object.__setattr__(self, "joints", joints)

    def bone_lengths(self) -> np.ndarray:
        """Lengths of the four arm bones (shoulder->elbow, elbow->wrist per arm)."""
        return np.array([np.linalg.norm(self.joints[a] - self.joints[b]) for a, b in ARM_BONES])

    def check_bones(self) -> None:
        lengths = self.bone_lengths()
        if not ((lengths > BONE_MIN) & (lengths < BONE_MAX)).all():
            raise MotionError(f"arm bone lengths {lengths} outside ({BONE_MIN}, {BONE_MAX}) m")


@dataclass(frozen=True)
class Context:
    """The forecaster input: the last `HISTORY_LEN` poses, oldest first."""

    frames: np.ndarray  # (k, J, 3)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        frames = _readonly(self.frames)
        if frames.ndim != 3 or frames.shape[0] != HISTORY_LEN or frames.shape[1:] != (N_JOINTS, 3):
            raise MotionError(f"context must have shape ({HISTORY_LEN}, {N_JOINTS}, 3), got {frames.shape}")
        if self.dt <= 0:
            raise MotionError("context dt must be positive")
        object.__setattr__(self, "frames", frames)

    def last_pose(self) -> Pose:
        return Pose(self.frames[-1])


@dataclass(frozen=True)
class Trajectory:
    """A `HORIZON_LEN`-frame future of poses."""

    frames: np.ndarray  # (T, J, 3)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        frames = _readonly(self.frames)
        if frames.ndim != 3 or frames.shape[0] != HORIZON_LEN or frames.shape[1:] != (N_JOINTS, 3):
            raise MotionError(f"trajectory must have shape ({HORIZON_LEN}, {N_JOINTS}, 3), got {frames.shape}")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class Episode:
    """A recorded (or generated) sequence of poses with transition annotations.

    ``transitions`` are closed [start, end] frame-index intervals marking the
    close-proximity interaction windows.  ``extras`` carries task metadata
    (pot position, handover goals, per-frame object-in-hand flags).
    """

    fps: float
    frames: np.ndarray  # (n, J, 3)
    transitions: tuple = ()
    task: str = "stir"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = _readonly(self.frames)
        if frames.ndim != 3 or frames.shape[1:] != (N_JOINTS, 3):
            raise MotionError(f"episode frames must have shape (n, {N_JOINTS}, 3), got {frames.shape}")
        if not np.isfinite(frames).all():
            raise MotionError("episode contains non-finite coordinates")
        if self.fps <= 0:
            raise MotionError("fps must be positive")
        if self.task not in TASKS:
            raise MotionError(f"unknown task {self.task!r}")
        n = frames.shape[0]
        trans = tuple((int(s), int(e)) for s, e in self.transitions)
        prev_end = -1
        for s, e in trans:
            if not (0 <= s <= e < n):
                raise MotionError(f"transition ({s}, {e}) outside frame range [0, {n})")
            if s <= prev_end:
                raise MotionError("transition intervals must be sorted and non-overlapping")
            prev_end = e
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "transitions", trans)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def pose(self, i: int) -> Pose:
        return Pose(self.frames[i])


def in_transition(episode: Episode, frame_index: int) -> bool:
    """Whether a frame index lies inside any annotated transition interval."""
    return any(s <= frame_index <= e for s, e in episode.transitions)


def slide_windows(episode: Episode, k: int = HISTORY_LEN, T: int = HORIZON_LEN,
                  stride: int = 1):
    """Cut an episode into (context, future, is_transition) windows.

    Window i uses frames [i*stride, i*stride + k) as context and the next T
    frames as the ground-truth future.  The transition flag is set when any
    future frame falls inside an annotated transition interval.
    """
    if stride < 1:
        raise MotionError("stride must be >= 1")
    n = len(episode)
    if n < k + T:
        raise MotionError(f"episode has {n} frames, needs at least {k + T} for k={k}, T={T}")
    dt = episode.dt
    out = []
    for start in range(0, n - k - T + 1, stride):
        ctx = Context(episode.frames[start:start + k], dt=dt)
        fut = Trajectory(episode.frames[start + k:start + k + T], dt=dt)
        fut_lo, fut_hi = start + k, start + k + T - 1
        flag = any(s <= fut_hi and e >= fut_lo for s, e in episode.transitions)
        out.append((ctx, fut, flag))
    return out


def pose_distance(a: Pose, b: Pose) -> float:
    """Mean per-joint Euclidean distance between two poses, in meters."""
    return float(np.mean(np.linalg.norm(a.joints - b.joints, axis=-1)))


def resample(episode: Episode, target_fps: float) -> Episode:
    """Resample an episode to a new frame rate by per-coordinate linear interpolation.

    Transition intervals are remapped by time and rounded outward so no
    transition frame is lost at a rate boundary.
    """
    if target_fps <= 0:
        raise MotionError("target_fps must be positive")
    n = len(episode)
    if n == 0:
        raise MotionError("cannot resample an empty episode")
    duration = (n - 1) / episode.fps
    n_new = int(np.floor(duration * target_fps + 1e-9)) + 1
    t_new = np.arange(n_new) / target_fps
    src = t_new * episode.fps  # fractional source indices
    lo = np.clip(np.floor(src).astype(int), 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    frac = (src - lo)[:, None, None]
    frames = (1.0 - frac) * episode.frames[lo] + frac * episode.frames[hi]

    ratio = target_fps / episode.fps
    transitions = []
    for s, e in episode.transitions:
        ns = int(np.floor(s * ratio + 1e-9))
        ne = int(np.ceil(e * ratio - 1e-9))
        transitions.append((max(0, ns), min(n_new - 1, ne)))
    # Outward rounding can merge adjacent intervals; coalesce to keep them valid.
    merged = []
    for s, e in transitions:
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return Episode(fps=target_fps, frames=frames, transitions=tuple(merged),
                   task=episode.task, extras=episode.extras)


def episode_to_dict(episode: Episode) -> dict:
    return {
        "fps": episode.fps,
        "joint_names": list(JOINT_NAMES),
        "frames": [[list(map(float, p)) for p in frame] for frame in episode.frames],
        "transitions": [[s, e] for s, e in episode.transitions],
        "task": episode.task,
        "extras": episode.extras,
    }


def episode_from_dict(doc: dict) -> Episode:
    names = doc.get("joint_names")
    if names is not None and list(names) != list(JOINT_NAMES):
        raise MotionError(f"unexpected joint names {names}")
    frames = np.asarray(doc["frames"], dtype=float)
    if frames.ndim != 3 or frames.shape[1] != N_JOINTS:
        raise MotionError(f"episode file has wrong joint count: {frames.shape}")
    if not np.isfinite(frames).all():
        raise MotionError("episode file contains non-finite values")
    return Episode(
        fps=float(doc["fps"]),
        frames=frames,
        transitions=tuple((int(s), int(e)) for s, e in doc.get("transitions", [])),
        task=doc.get("task", "stir"),
        extras=doc.get("extras", {}),
    )


def save_episode(episode: Episode, path) -> None:
    Path(path).write_text(json.dumps(episode_to_dict(episode)))


def load_episode(path) -> Episode:
    return episode_from_dict(json.loads(Path(path).read_text()))
