"""Lateral lane-shift edits of a recorded camera trajectory."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose

WORLD_UP = (0.0, 0.0, 1.0)
_DEGENERATE = 1e-9


class Direction(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class ShiftMode(str, enum.Enum):
    RAMP = "ramp"
    CONSTANT = "constant"


class LateralAxis(str, enum.Enum):
    """How the lateral direction is derived from a camera pose.

    HORIZONTAL takes the horizontal direction perpendicular to the camera's
    forward axis, on the camera's +x side (for a camera without roll this is
    the camera x-axis projected onto the ground plane). CAMERA uses the
    camera x-axis as is.
    """

    HORIZONTAL = "horizontal"
    CAMERA = "camera"


@dataclass(frozen=True, eq=False)
class Trajectory:
    poses: tuple[Pose, ...]
    timestamps: tuple[int, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        timestamps = tuple(int(t) for t in self.timestamps)
        if len(poses) == 0:
            raise InvalidInputError("trajectory needs at least one pose")
        if len(poses) != len(timestamps):
            raise InvalidInputError("poses and timestamps must have equal length")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "timestamps", timestamps)

    def __len__(self):
        return len(self.poses)


@dataclass(frozen=True)
class ShiftSpec:
    per_frame_shift: float = 0.1
    max_shift: float = 4.0
    direction: Direction = Direction.LEFT
    mode: ShiftMode = ShiftMode.RAMP
    axis: LateralAxis = LateralAxis.HORIZONTAL

    def __post_init__(self):
        if not self.per_frame_shift >= 0:
            raise InvalidInputError(f"per_frame_shift must be >= 0, got {self.per_frame_shift}")
        if not self.max_shift >= 0:
            raise InvalidInputError(f"max_shift must be >= 0, got {self.max_shift}")
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "mode", ShiftMode(self.mode))
        object.__setattr__(self, "axis", LateralAxis(self.axis))

    def offset(self, i: int) -> float:
        """Shift magnitude in meters at frame ``i``."""
        if self.mode is ShiftMode.CONSTANT:
            return self.max_shift
        return min(i * self.per_frame_shift, self.max_shift)

    def to_dict(self) -> dict:
        return {
            "per_frame_shift": self.per_frame_shift,
            "max_shift": self.max_shift,
            "direction": self.direction.value,
            "mode": self.mode.value,
            "axis": self.axis.value,
        }


def lateral_axes(poses: Sequence[Pose], axis: LateralAxis = LateralAxis.HORIZONTAL, up=WORLD_UP) -> np.ndarray:
    """Unit lateral (rightward) axis per pose.

    In HORIZONTAL mode a camera looking (nearly) straight up or down has no
    horizontal perpendicular; it reuses the previous frame's axis, or the
    next usable one at the start of the trajectory.
    """
    axis = LateralAxis(axis)
    up = np.asarray(up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    out = np.full((len(poses), 3), np.nan)
    for i, pose in enumerate(poses):
        x = pose.rotation[:, 0]
        if axis is LateralAxis.HORIZONTAL:
            lateral = np.cross(pose.rotation[:, 2], up)
            x = -lateral if np.dot(lateral, x) < 0 else lateral
        n = np.linalg.norm(x)
        if n > _DEGENERATE:
            out[i] = x / n
    usable = ~np.isnan(out[:, 0])
    if not usable.any():
        raise InvalidInputError("no pose has a usable lateral axis")
    first = int(np.argmax(usable))
    out[:first] = out[first]
    for i in range(first + 1, len(out)):
        if not usable[i]:
            out[i] = out[i - 1]
    return out


def shift_trajectory(recorded: Trajectory, spec: ShiftSpec, up=WORLD_UP) -> Trajectory:
    """Translate each pose sideways on the ``ShiftSpec`` schedule; rotations are kept.

    "right" is the camera's +x side, "left" the -x side.
    """
    sign = 1.0 if spec.direction is Direction.RIGHT else -1.0
    axes = lateral_axes(recorded.poses, spec.axis, up)
    poses = []
    for i, (pose, lateral) in enumerate(zip(recorded.poses, axes)):
        offset = sign * spec.offset(i)
        if offset == 0.0:
            poses.append(pose)
        else:
            poses.append(Pose(pose.rotation, pose.translation + offset * lateral))
    return Trajectory(tuple(poses), recorded.timestamps)
