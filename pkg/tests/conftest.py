"""Shared helpers for the test suite: random valid poses, contexts and
small hand-built episodes."""

import numpy as np
import pytest

from costcast.motion import (
    Context,
    Episode,
    HISTORY_LEN,
    HORIZON_LEN,
    N_JOINTS,
    Pose,
    Trajectory,
)

BASE_POSE = np.array([
    [0.05, -0.40, 0.60],   # left wrist
    [0.30, -0.05, 0.85],   # right wrist
    [0.10, -0.55, 0.78],   # left elbow
    [0.45, -0.05, 0.80],   # right elbow
    [0.20, -0.50, 1.05],   # left shoulder
    [0.45, -0.20, 1.05],   # right shoulder
    [0.30, -0.35, 1.25],   # upper back
])


def random_pose_array(rng, scale=0.03):
    """A valid pose: small perturbation of a fixed skeleton (bones stay legal)."""
    return BASE_POSE + rng.normal(0.0, scale, size=(N_JOINTS, 3))


def random_pose(rng, scale=0.03):
    return Pose(random_pose_array(rng, scale))


def random_context(rng, dt=0.04):
    frames = np.stack([random_pose_array(rng, 0.005) for _ in range(HISTORY_LEN)])
    return Context(frames, dt=dt)


def random_trajectory(rng, dt=0.04):
    frames = np.stack([random_pose_array(rng, 0.005) for _ in range(HORIZON_LEN)])
    return Trajectory(frames, dt=dt)


def linear_episode(n_frames, velocity, fps=25.0, transitions=()):
    """Every joint translates at a constant velocity (m/s)."""
    v = np.asarray(velocity, dtype=float)
    t = np.arange(n_frames)[:, None, None] / fps
    frames = BASE_POSE[None] + t * v[None, None, :]
    return Episode(fps=fps, frames=frames, transitions=transitions)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
