"""Geometry-guided pseudo-view synthesis by backward reprojection.

Pipeline for one target camera:

1. every valid target-depth pixel is lifted to a world point
   (:func:`build_point_cloud`);
2. each point is projected into every source view;
3. a source colors the point only if the point is in view and the source's
   rendered depth at the landing pixel agrees with the point's camera depth
   to within ``delta`` (:func:`sample_visibility`);
4. among the sources that pass, the one whose camera center is nearest to
   the target camera center supplies the color; the colored points are then
   written back to the target pixels they came from (:func:`synthesize`).

Points no source can see stay black and are flagged invalid.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyGeometryError, InvalidInputError
from .geometry import (
    DepthMap,
    Intrinsics,
    Pose,
    project_arrays,
    round_half_away,
    unproject_arrays,
)

DEFAULT_DELTA = 0.05
NO_SOURCE = -1


@dataclass(frozen=True, eq=False)
class Frame:
    """One posed RGB-D observation."""

    image: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    depth: DepthMap
    timestamp: int = 0
    name: str = ""

    def __post_init__(self):
        image = np.asarray(self.image)
        if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
            raise InvalidInputError(f"image must be HxWx3 uint8, got {image.dtype} {image.shape}")
        if image.shape[:2] != self.depth.shape:
            raise InvalidInputError(
                f"image size {image.shape[:2]} does not match depth size {self.depth.shape}"
            )
        if image.shape[:2] != self.intrinsics.shape:
            raise InvalidInputError(
                f"image size {image.shape[:2]} does not match intrinsics size {self.intrinsics.shape}"
            )
        object.__setattr__(self, "image", image)


@dataclass(frozen=True, eq=False)
class WorldPointCloud:
    """Points lifted from a target depth map, one per valid target pixel.

    ``origin_pixels`` holds (u, v) = (column, row). ``color_set`` marks the
    points that received a color; unset colors are black.
    """

    points: np.ndarray
    colors: np.ndarray
    color_set: np.ndarray
    origin_pixels: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if not (len(self.colors) == len(self.color_set) == len(self.origin_pixels) == n):
            raise InvalidInputError("point cloud fields must have equal length")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class PseudoView:
    image: np.ndarray
    validity: np.ndarray
    source_index: np.ndarray  # int16, NO_SOURCE where invalid
    intrinsics: Intrinsics
    pose: Pose

    @property
    def validity_ratio(self) -> float:
        return float(self.validity.mean())


@dataclass(frozen=True)
class CorruptionConfig:
    drop_fraction: float = 0.0
    noise_half_width: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise InvalidInputError(f"drop_fraction must lie in [0, 1], got {self.drop_fraction}")
        if not (self.noise_half_width >= 0.0 and math.isfinite(self.noise_half_width)):
            raise InvalidInputError(f"noise_half_width must be >= 0, got {self.noise_half_width}")


class Visibility(enum.IntEnum):
    VISIBLE = 0
    OCCLUDED = 1
    OUT_OF_VIEW = 2


class Sample(NamedTuple):
    status: Visibility
    color: tuple[int, int, int] | None = None


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not delta >= 0.0:
        raise InvalidInputError(f"visibility tolerance must be >= 0, got {delta}")
    return delta


def build_point_cloud(target_depth: DepthMap, target_K: Intrinsics, target_T: Pose) -> WorldPointCloud:
    """Unproject every valid target pixel (row-major order) to world space."""
    if target_depth.shape != target_K.shape:
        raise InvalidInputError(
            f"depth size {target_depth.shape} does not match intrinsics size {target_K.shape}"
        )
    rows, cols = np.nonzero(target_depth.validity)
    if rows.size == 0:
        raise EmptyGeometryError("target depth map has no valid pixel")
    d = target_depth.values[rows, cols]
    x, y, z = unproject_arrays(cols.astype(np.float64), rows.astype(np.float64), d, target_K, target_T)
    n = rows.size
    return WorldPointCloud(
        points=np.stack([x, y, z], axis=1),
        colors=np.zeros((n, 3), dtype=np.uint8),
        color_set=np.zeros(n, dtype=bool),
        origin_pixels=np.stack([cols, rows], axis=1).astype(np.int64),
    )


def _classify(points: np.ndarray, source: Frame, delta: float, check_visibility: bool = True):
    """Vectorized visibility verdicts of ``points`` in one source.

    Returns (status, rows, cols); rows/cols are only meaningful where the
    status is not OUT_OF_VIEW.
    """
    K = source.intrinsics
    u, v, zc = project_arrays(points[:, 0], points[:, 1], points[:, 2], K, source.pose)
    in_front = zc > 0
    with np.errstate(invalid="ignore"):
        col = round_half_away(np.where(in_front, u, -1.0))
        row = round_half_away(np.where(in_front, v, -1.0))
        in_view = in_front & (col >= 0) & (col < K.width) & (row >= 0) & (row < K.height)
    cols = np.where(in_view, col, 0).astype(np.int64)
    rows = np.where(in_view, row, 0).astype(np.int64)
    in_view &= source.depth.validity[rows, cols]
    status = np.full(len(points), Visibility.OUT_OF_VIEW, dtype=np.int8)
    if check_visibility:
        agree = np.abs(source.depth.values[rows, cols] - zc) < delta
        status[in_view & agree] = Visibility.VISIBLE
        status[in_view & ~agree] = Visibility.OCCLUDED
    else:
        status[in_view] = Visibility.VISIBLE
    return status, rows, cols


def sample_visibility(point, source: Frame, delta: float = DEFAULT_DELTA) -> Sample:
    """Visibility-gated color lookup of a single world point in one source.

    Out of view means: behind (or on) the camera plane, landing outside the
    image after rounding, or landing on a pixel without rendered depth.
    Occluded means ``|source_depth - cam_depth| >= delta``.
    """
    delta = _check_delta(delta)
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(point)):
        raise InvalidInputError("point must be finite")
    status, rows, cols = _classify(point, source, delta)
    verdict = Visibility(int(status[0]))
    if verdict is Visibility.VISIBLE:
        r, g, b = source.image[rows[0], cols[0]]
        return Sample(verdict, (int(r), int(g), int(b)))
    return Sample(verdict)


def source_order(sources: Sequence[Frame], target_T: Pose) -> list[int]:
    """Source indices sorted nearest-first by camera-center distance; ties go to the lower index."""
    dist = [float(np.linalg.norm(s.pose.center - target_T.center)) for s in sources]
    return sorted(range(len(sources)), key=lambda i: (dist[i], i))


def _aggregate_chunk(points, sources, order, delta, check_visibility):
    chosen = np.full(len(points), NO_SOURCE, dtype=np.int16)
    colors = np.zeros((len(points), 3), dtype=np.uint8)
    for idx in order:
        src = sources[idx]
        status, rows, cols = _classify(points, src, delta, check_visibility)
        take = (chosen == NO_SOURCE) & (status == Visibility.VISIBLE)
        chosen[take] = idx
        colors[take] = src.image[rows[take], cols[take]]
    return chosen, colors


def color_point_cloud(
    sources: Sequence[Frame],
    cloud: WorldPointCloud,
    target_T: Pose,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
    check_visibility: bool = True,
) -> tuple[WorldPointCloud, np.ndarray]:
    """Assign each point the color of its nearest valid source.

    Returns the colored cloud and the per-point source index (NO_SOURCE if none).
    ``check_visibility=False`` skips the depth-agreement test; it exists to
    demonstrate what the test prevents.
    """
    if len(sources) == 0:
        raise InvalidInputError("at least one source frame is required")
    if len(sources) > np.iinfo(np.int16).max:
        raise InvalidInputError("too many source frames")
    delta = _check_delta(delta)
    order = source_order(sources, target_T)
    points = np.asarray(cloud.points, dtype=np.float64)
    workers = max(1, int(workers))
    if workers == 1 or len(points) < 2 * workers:
        chosen, colors = _aggregate_chunk(points, sources, order, delta, check_visibility)
    else:
        bounds = np.linspace(0, len(points), workers + 1).astype(int)
        chunks = [points[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _aggregate_chunk(c, sources, order, delta, check_visibility), chunks))
        chosen = np.concatenate([p[0] for p in parts])
        colors = np.concatenate([p[1] for p in parts])
    colored = replace(cloud, colors=colors, color_set=chosen != NO_SOURCE)
    return colored, chosen


def render_cloud(cloud: WorldPointCloud, chosen: np.ndarray, target_K: Intrinsics, target_T: Pose) -> PseudoView:
    """Write each colored point back to its origin pixel."""
    h, w = target_K.shape
    image = np.zeros((h, w, 3), dtype=np.uint8)
    validity = np.zeros((h, w), dtype=bool)
    source_index = np.full((h, w), NO_SOURCE, dtype=np.int16)
    cols = cloud.origin_pixels[:, 0]
    rows = cloud.origin_pixels[:, 1]
    hit = cloud.color_set
    image[rows[hit], cols[hit]] = cloud.colors[hit]
    validity[rows[hit], cols[hit]] = True
    source_index[rows[hit], cols[hit]] = chosen[hit]
    return PseudoView(image, validity, source_index, target_K, target_T)


def synthesize(
    sources: Sequence[Frame],
    target_K: Intrinsics,
    target_T: Pose,
    target_depth: DepthMap,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
    check_visibility: bool = True,
) -> PseudoView:
    """Synthesize the pseudo-view seen from ``(target_K, target_T)``.

    Args:
        sources: recorded frames sharing the target's world frame.
        target_K: target intrinsics; must match ``target_depth`` in size.
        target_T: target camera-to-world pose.
        target_depth: depth rendered at the target pose.
        delta: visibility tolerance in meters.
        workers: number of threads the points are split across; the
            result does not depend on it.
        check_visibility: disable only to reproduce occlusion artifacts.
    """
    if len(sources) == 0:
        raise InvalidInputError("at least one source frame is required")
    cloud = build_point_cloud(target_depth, target_K, target_T)
    return synthesize_from_cloud(sources, cloud, target_K, target_T, delta, workers, check_visibility)


def synthesize_from_cloud(
    sources: Sequence[Frame],
    cloud: WorldPointCloud,
    target_K: Intrinsics,
    target_T: Pose,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
    check_visibility: bool = True,
) -> PseudoView:
    """Color and render an already built (possibly corrupted) target cloud."""
    colored, chosen = color_point_cloud(sources, cloud, target_T, delta, workers, check_visibility)
    return render_cloud(colored, chosen, target_K, target_T)


def _drop_and_jitter(n: int, config: CorruptionConfig):
    rng = np.random.default_rng(config.seed)
    n_drop = int(math.floor(config.drop_fraction * n + 0.5))
    keep = np.sort(rng.permutation(n)[n_drop:])
    if config.noise_half_width > 0:
        eps = config.noise_half_width
        return keep, rng.uniform(-eps, eps, size=(keep.size, 3))
    return keep, None


def corrupt_geometry(geometry, config: CorruptionConfig):
    """Drop a seeded random subset of points and jitter the rest.

    Exactly ``round(drop_fraction * N)`` points are removed; every surviving
    coordinate gets independent uniform noise in ``[-eps, eps]``. Accepts a
    :class:`WorldPointCloud` or an (N, 3) array and returns the same kind.
    """
    if isinstance(geometry, WorldPointCloud):
        keep, noise = _drop_and_jitter(len(geometry), config)
        points = geometry.points[keep]
        return WorldPointCloud(
            points=points if noise is None else points + noise,
            colors=geometry.colors[keep],
            color_set=geometry.color_set[keep],
            origin_pixels=geometry.origin_pixels[keep],
        )
    points = np.asarray(geometry)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidInputError(f"expected an (N, 3) point array, got shape {points.shape}")
    keep, noise = _drop_and_jitter(len(points), config)
    if noise is None:
        return points[keep].copy()
    return (points[keep] + noise).astype(points.dtype)
