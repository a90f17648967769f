"""Shared fixtures: a small grid/camera/label configuration and scene stubs."""

from dataclasses import dataclass

import numpy as np
import pytest

from gridpose import geometry as geo
from gridpose.codec import LabelSpec
from gridpose.rigidpose import Pose6D, random_rotation


@dataclass
class SceneStub:
    """Minimal stand-in for synth.SceneFrame: just what encode_frame reads."""

    hand_points: np.ndarray
    object_points: np.ndarray
    action_id: int
    object_id: int


PAPER_GRID = geo.GridSpec(h=13, w=13, d=5, cell_u_px=32.0, cell_v_px=32.0,
                          cell_z_m=0.15, z_min=0.0, sharpness=2.0,
                          cutoff_px=75.0, cutoff_m=0.075)
PAPER_CAM = geo.CameraIntrinsics(fx=600.0, fy=600.0, cx=208.0, cy=208.0)


@pytest.fixture
def paper_grid():
    return PAPER_GRID


@pytest.fixture
def paper_cam():
    return PAPER_CAM


@pytest.fixture
def toy_labels():
    return LabelSpec(n_objects=3, n_actions=4, n_interactions=12)


def hand_around(root, rng=None, spread=0.05):
    """21 hand points with the wrist at `root` and the rest scattered nearby."""
    root = np.asarray(root, dtype=float)
    if rng is None:
        rng = np.random.default_rng(0)
    pts = root + rng.uniform(-spread, spread, size=(21, 3))
    pts[0] = root
    return pts


def random_scene(rng, grid=PAPER_GRID, cam=PAPER_CAM, n_actions=4, n_objects=3):
    """A random in-volume scene: hand cloud + posed cuboid control points.

    Depths start 1.5 cells into the volume so scattered non-root points
    stay in front of the camera even when z_min = 0.
    """
    margin = 0.02
    def sample_root():
        w = rng.uniform([margin, margin, 1.5],
                        [grid.w - margin, grid.h - margin, grid.d - margin])
        return geo.grid_to_camera(w, cam, grid)

    hand = hand_around(sample_root(), rng)
    cuboid = geo.Cuboid(*rng.uniform(0.02, 0.08, size=3))
    pose = Pose6D(random_rotation(rng), sample_root())
    obj_pts = pose.apply(geo.cuboid_control_points(cuboid).points)
    return SceneStub(
        hand_points=hand,
        object_points=obj_pts,
        action_id=int(rng.integers(n_actions)),
        object_id=int(rng.integers(n_objects)),
    ), cuboid, pose
