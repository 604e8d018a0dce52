"""Dense depth supervision: LiDAR projection, scale-shift alignment of a
relative depth map, the L1 dense-depth loss and the pairwise distortion loss
on ray weight distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyOverlapError,
    EmptySamplesError,
    IllPosedFitError,
    InsufficientSamplesError,
    InvalidInputError,
)
from .geometry import DepthMap, Intrinsics, Pose, project_arrays, round_half_away


@dataclass(frozen=True, eq=False)
class SparseDepthSamples:
    pixels: np.ndarray  # (N, 2) integer (u, v)
    depths: np.ndarray  # (N,) meters

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        if len(pixels) != len(depths):
            raise InvalidInputError("pixels and depths must have equal length")
        if not np.all(np.isfinite(depths) & (depths > 0)):
            raise InvalidInputError("sample depths must be finite and > 0")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "depths", depths)

    def __len__(self):
        return len(self.depths)


@dataclass(frozen=True)
class ScaleShift:
    scale: float
    shift: float

    def apply(self, relative):
        return self.scale * np.asarray(relative, dtype=np.float64) + self.shift


def project_lidar(points, frame_K: Intrinsics, frame_T: Pose) -> SparseDepthSamples:
    """Project world-frame LiDAR points into a camera, z-buffering per pixel.

    Points behind the camera or landing outside the image (after rounding
    half away from zero) are dropped; where several points share a pixel the
    nearest one is kept. Samples come out in row-major pixel order.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise InvalidInputError("at least one LiDAR point is required")
    finite = np.all(np.isfinite(points), axis=1)
    points = points[finite]
    u, v, z = project_arrays(points[:, 0], points[:, 1], points[:, 2], frame_K, frame_T)
    front = z > 0
    with np.errstate(invalid="ignore"):
        col = round_half_away(np.where(front, u, -1.0))
        row = round_half_away(np.where(front, v, -1.0))
        keep = front & (col >= 0) & (col < frame_K.width) & (row >= 0) & (row < frame_K.height)
    if not np.any(keep):
        raise EmptySamplesError("no LiDAR point projects into the image")
    col = col[keep].astype(np.int64)
    row = row[keep].astype(np.int64)
    z = z[keep]
    flat = row * frame_K.width + col
    order = np.lexsort((z, flat))  # by pixel, then nearest first
    flat, z = flat[order], z[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, z = flat[first], z[first]
    pixels = np.stack([flat % frame_K.width, flat // frame_K.width], axis=1)
    return SparseDepthSamples(pixels, z)


def _gather(relative_depth: DepthMap, samples: SparseDepthSamples):
    cols, rows = samples.pixels[:, 0], samples.pixels[:, 1]
    h, w = relative_depth.shape
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    if not np.all(inside):
        raise InvalidInputError("sample pixel outside the relative depth map")
    usable = relative_depth.validity[rows, cols]
    return relative_depth.values[rows[usable], cols[usable]], samples.depths[usable]


def fit_scale_shift(relative_depth: DepthMap, samples: SparseDepthSamples, inverse: bool = False) -> ScaleShift:
    """Ordinary least squares fit of ``scale * relative + shift ≈ lidar``.

    With ``inverse=True`` the fit targets inverse LiDAR depth instead, for
    relative maps that are affine in disparity.
    """
    x, y = _gather(relative_depth, samples)
    if inverse:
        y = 1.0 / y
    if len(x) < 2:
        raise InsufficientSamplesError(f"need at least 2 usable samples, got {len(x)}")
    if np.all(x == x[0]):
        raise IllPosedFitError("relative depth is constant at every sample pixel")
    # centered form of the normal equations; better conditioned than the raw sums
    mx, my = x.mean(), y.mean()
    dx = x - mx
    scale = float(np.dot(dx, y - my) / np.dot(dx, dx))
    shift = float(my - scale * mx)
    return ScaleShift(scale, shift)


def align_depth(relative_depth: DepthMap, fit: ScaleShift, inverse: bool = False) -> DepthMap:
    """Metric depth map from a relative one; pixels mapping to non-positive depth become invalid."""
    aligned = fit.apply(relative_depth.values)
    with np.errstate(divide="ignore", invalid="ignore"):
        if inverse:
            aligned = 1.0 / aligned
        valid = relative_depth.validity & np.isfinite(aligned) & (aligned > 0)
    return DepthMap(np.where(valid, aligned, 0.0), valid)


def fit_mse(relative_depth: DepthMap, samples: SparseDepthSamples, fit: ScaleShift) -> float:
    x, y = _gather(relative_depth, samples)
    r = fit.scale * x + fit.shift - y
    return float(np.mean(r * r))


def dense_depth_loss(aligned_estimate: DepthMap, rendered: DepthMap) -> float:
    """Mean absolute depth difference over pixels valid in both maps."""
    if aligned_estimate.shape != rendered.shape:
        raise InvalidInputError(f"shape mismatch: {aligned_estimate.shape} vs {rendered.shape}")
    both = aligned_estimate.validity & rendered.validity
    if not np.any(both):
        raise EmptyOverlapError("depth maps share no valid pixel")
    return float(np.mean(np.abs(aligned_estimate.values[both] - rendered.values[both])))


def distortion_loss(weights, depths) -> float:
    """Pairwise distortion ``sum_i sum_j w_i w_j |t_i - t_j|`` in O(n log n).

    After sorting by depth each unordered pair is counted once as
    ``w_i * (t_i * W_<i - S_<i)``, where ``W_<i`` and ``S_<i`` are the running
    sums of ``w`` and ``w * t`` over shallower samples; the double sum is
    twice that. Depths are measured from the heaviest sample so that mass
    concentrated at a single depth yields exactly zero.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    t = np.asarray(depths, dtype=np.float64).reshape(-1)
    if len(w) != len(t) or len(w) == 0:
        raise InvalidInputError("weights and depths must be non-empty and of equal length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite and non-negative")
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("depths must be finite")
    t = t - t[np.argmax(w)]
    order = np.argsort(t, kind="stable")
    w, t = w[order], t[order]
    wt = w * t
    w_before = np.concatenate(([0.0], np.cumsum(w)[:-1]))
    wt_before = np.concatenate(([0.0], np.cumsum(wt)[:-1]))
    total = 2.0 * math.fsum(w * (t * w_before - wt_before))
    return max(total, 0.0)
