"""Pinhole camera model, rigid camera-to-world poses and the
unprojection / projection primitives used by every other module.

Conventions:
    - pixel centers sit at integer coordinates, ``u`` along the image width,
      ``v`` along the height;
    - depth is measured along the camera z-axis;
    - poses map camera coordinates to world coordinates.

The elementwise helpers (:func:`unproject_arrays`, :func:`project_arrays`)
spell out every product and sum explicitly instead of using matrix
multiplication, so a scalar call and a vectorized call on the same inputs
produce bit-identical results, independent of BLAS and of how a batch is
partitioned across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjectionError, InvalidInputError

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole intrinsics plus the image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"intrinsics {name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidInputError("width and height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(f"image size must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), the numpy array shape of an image."""
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = _readonly(self.rotation)
        translation = _readonly(self.translation).reshape(-1)
        if rotation.shape != (3, 3):
            raise InvalidInputError(f"rotation must be 3x3, got shape {rotation.shape}")
        if translation.shape != (3,):
            raise InvalidInputError(f"translation must be a 3-vector, got shape {translation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidInputError("pose contains non-finite values")
        err = orthonormality_error(rotation)
        if err > ORTHONORMAL_TOL:
            raise InvalidInputError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        det = float(np.linalg.det(rotation))
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise InvalidInputError(f"rotation determinant must be +1, got {det:.6g}")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape == (16,):
            matrix = matrix.reshape(4, 4)
        if matrix.shape != (4, 4):
            raise InvalidInputError(f"pose matrix must be 4x4, got shape {matrix.shape}")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.translation

    def inverse(self) -> "Pose":
        rot_t = self.rotation.T
        return Pose(rot_t, -(rot_t @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def translated(self, offset) -> "Pose":
        return Pose(self.rotation, self.translation + np.asarray(offset, dtype=np.float64))

    def apply(self, points) -> np.ndarray:
        """Map (..., 3) camera-frame points to world coordinates."""
        points = np.asarray(points, dtype=np.float64)
        x, y, z = _transform(points[..., 0], points[..., 1], points[..., 2], self.rotation, self.translation)
        return np.stack([x, y, z], axis=-1)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def orthonormality_error(rotation) -> float:
    rotation = np.asarray(rotation, dtype=np.float64)
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel z-depth in meters with an explicit validity grid.

    When ``validity`` is omitted it is derived from the values: a pixel is
    valid iff its depth is finite and strictly positive.
    """

    values: np.ndarray
    validity: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise InvalidInputError(f"depth map must be 2-D, got shape {values.shape}")
        with np.errstate(invalid="ignore"):
            usable = np.isfinite(values) & (values > 0)
        if self.validity is None:
            validity = usable
        else:
            validity = np.array(self.validity, dtype=bool, copy=True)
            if validity.shape != values.shape:
                raise InvalidInputError(
                    f"validity shape {validity.shape} does not match depth shape {values.shape}"
                )
            if np.any(validity & ~usable):
                raise InvalidInputError("valid depth pixels must be finite and > 0")
        values.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "validity", validity)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def constant(cls, height: int, width: int, depth: float) -> "DepthMap":
        return cls(np.full((height, width), depth, dtype=np.float64))


@dataclass(frozen=True)
class PixelHomog:
    """Homogeneous pixel ``[u, v, 1]``."""

    u: float
    v: float

    def vector(self) -> np.ndarray:
        return np.array([self.u, self.v, 1.0])


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (np.round rounds ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, np.floor(x + 0.5), -np.floor(-x + 0.5))


def _transform(x, y, z, rot, trans):
    r = [[float(rot[i, j]) for j in range(3)] for i in range(3)]
    t = [float(v) for v in trans]
    wx = r[0][0] * x + r[0][1] * y + r[0][2] * z + t[0]
    wy = r[1][0] * x + r[1][1] * y + r[1][2] * z + t[1]
    wz = r[2][0] * x + r[2][1] * y + r[2][2] * z + t[2]
    return wx, wy, wz


def unproject_arrays(u, v, depth, K: Intrinsics, T: Pose):
    """Elementwise ``T · (depth · K⁻¹ · [u, v, 1])``; returns (x, y, z) world arrays.

    No validation; callers filter invalid depth first.
    """
    xc = depth * ((u - K.cx) / K.fx)
    yc = depth * ((v - K.cy) / K.fy)
    return _transform(xc, yc, depth, T.rotation, T.translation)


def world_to_camera_arrays(x, y, z, T: Pose):
    """Elementwise ``T⁻¹ · [x, y, z, 1]`` (first three components)."""
    r = [[float(T.rotation[i, j]) for j in range(3)] for i in range(3)]
    t = [float(v) for v in T.translation]
    dx = x - t[0]
    dy = y - t[1]
    dz = z - t[2]
    xc = r[0][0] * dx + r[1][0] * dy + r[2][0] * dz
    yc = r[0][1] * dx + r[1][1] * dy + r[2][1] * dz
    zc = r[0][2] * dx + r[1][2] * dy + r[2][2] * dz
    return xc, yc, zc


def project_arrays(x, y, z, K: Intrinsics, T: Pose):
    """Elementwise projection of world points; returns (u, v, cam_depth).

    Pixel coordinates are undefined (inf/nan) where ``cam_depth == 0``;
    callers gate on ``cam_depth > 0``.
    """
    xc, yc, zc = world_to_camera_arrays(x, y, z, T)
    px = K.fx * xc + K.cx * zc
    py = K.fy * yc + K.cy * zc
    with np.errstate(divide="ignore", invalid="ignore"):
        u = px / zc
        v = py / zc
    return u, v, zc


def unproject(pixel: PixelHomog, depth: float, K: Intrinsics, T: Pose) -> np.ndarray:
    """Lift one pixel with known z-depth to a world point."""
    if not math.isfinite(depth) or depth <= 0:
        raise InvalidInputError(f"depth must be finite and positive, got {depth}")
    if not (0 <= pixel.u < K.width and 0 <= pixel.v < K.height):
        raise InvalidInputError(
            f"pixel ({pixel.u}, {pixel.v}) outside image bounds {K.width}x{K.height}"
        )
    x, y, z = unproject_arrays(float(pixel.u), float(pixel.v), float(depth), K, T)
    return np.array([x, y, z])


def project(point, K: Intrinsics, T: Pose) -> tuple[tuple[float, float], float, bool]:
    """Project a world point into a camera.

    Returns:
        ((u, v), cam_depth, in_front) where ``in_front`` is ``cam_depth > 0``.

    Raises:
        DegenerateProjectionError: the point lies on the camera plane.
    """
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise InvalidInputError(f"point must be a finite 3-vector, got {point!r}")
    xc, yc, zc = world_to_camera_arrays(float(point[0]), float(point[1]), float(point[2]), T)
    if zc == 0.0:
        raise DegenerateProjectionError("point lies on the camera plane (cam_depth == 0)")
    u = (K.fx * xc + K.cx * zc) / zc
    v = (K.fy * yc + K.cy * zc) / zc
    return (u, v), zc, zc > 0
