"""Simulated pseudo-view degradation for building (condition, target) training pairs.

A clean frame goes through four steps, always in this order:

1. Gaussian blur;
2. random blending of pixels with a nearby pixel;
3. random black pixels;
4. black bands where the estimated depth changes sharply.

Randomness is counter based: every draw is a hash of (seed, step, frame
index, pixel row, pixel column), so results do not depend on traversal
order or on how rows are split across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import DepthMap
from .synthesis import Frame

# stream ids keep the per-step draws independent under one seed
_BLEND_SELECT = 1
_BLEND_OFFSET = 2
_RANDOM_MASK = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class DegradationConfig:
    """Parameters of the four simulation steps.

    ``depth_grad_threshold=None`` selects the per-image threshold at
    ``depth_grad_percentile`` of the depth gradient magnitude, which suits
    relative depth of arbitrary scale; a number is an absolute threshold.
    """

    blur_sigma: float = 0.8
    blur_radius: int = 2
    blend_probability: float = 0.3
    blend_radius: int = 2
    blend_alpha: float = 0.5
    mask_probability: float = 0.05
    depth_grad_threshold: float | None = None
    depth_grad_percentile: float = 95.0
    depth_mask_dilation: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("blend_probability", "blend_alpha", "mask_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if not self.blur_sigma >= 0:
            raise InvalidInputError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        for name in ("blur_radius", "blend_radius", "depth_mask_dilation"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InvalidInputError(f"{name} must be a non-negative integer, got {value}")
        if self.depth_grad_threshold is not None and not self.depth_grad_threshold > 0:
            raise InvalidInputError(f"depth_grad_threshold must be > 0, got {self.depth_grad_threshold}")
        if not 0.0 <= self.depth_grad_percentile <= 100.0:
            raise InvalidInputError("depth_grad_percentile must lie in [0, 100]")

    @classmethod
    def identity(cls, seed: int = 0) -> "DegradationConfig":
        """A configuration under which every step is a no-op."""
        return cls(
            blur_sigma=0.0, blend_probability=0.0, mask_probability=0.0,
            depth_grad_threshold=math.inf, depth_mask_dilation=0, seed=seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TrainingPair:
    condition: np.ndarray
    target: np.ndarray
    mask: np.ndarray


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def pixel_uniform(seed: int, stream: int, frame_index: int, rows, cols) -> np.ndarray:
    """Uniform [0, 1) draws keyed on (seed, stream, frame, row, col)."""
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed % 2**64) + _GOLDEN)
        key = _mix(key ^ (np.uint64(stream) * _GOLDEN))
        key = _mix(key ^ (np.uint64(frame_index % 2**64) + _GOLDEN))
        z = _mix(key ^ ((rows << np.uint64(32)) | cols))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def _round_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(image: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Separable truncated Gaussian blur with edge replication."""
    if sigma < 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    image = np.asarray(image)
    if sigma == 0 or radius == 0:
        return image.copy()
    k = gaussian_kernel(sigma, radius)
    h, w = image.shape[:2]
    src = image.astype(np.float64)
    padded = np.pad(src, [(0, 0), (radius, radius)] + [(0, 0)] * (src.ndim - 2), mode="edge")
    horiz = sum(k[i] * padded[:, i:i + w] for i in range(2 * radius + 1))
    padded = np.pad(horiz, [(radius, radius), (0, 0)] + [(0, 0)] * (src.ndim - 2), mode="edge")
    out = sum(k[i] * padded[i:i + h] for i in range(2 * radius + 1))
    return _round_u8(out)


def _row_bands(height: int, workers: int):
    workers = max(1, min(int(workers), height))
    bounds = np.linspace(0, height, workers + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_bands(fn, height: int, workers: int):
    bands = _row_bands(height, workers)
    if len(bands) == 1:
        return [fn(*bands[0])]
    with ThreadPoolExecutor(max_workers=len(bands)) as pool:
        return list(pool.map(lambda band: fn(*band), bands))


def local_blend(
    image: np.ndarray,
    probability: float,
    radius: int,
    alpha: float,
    seed: int,
    frame_index: int = 0,
    workers: int = 1,
) -> np.ndarray:
    """Blend randomly chosen pixels with a random neighbor.

    A selected pixel becomes ``(1 - alpha) * self + alpha * neighbor`` where
    the neighbor offset is uniform over the non-zero offsets of the
    Chebyshev ball of ``radius``; neighbors beyond the border are clamped.
    Blending reads the unmodified input, so pixels never see each other's
    output.
    """
    image = np.asarray(image)
    if probability == 0 or alpha == 0 or radius == 0:
        return image.copy()
    offsets = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
               if (dy, dx) != (0, 0)]
    offsets = np.array(offsets, dtype=np.int64)
    h, w = image.shape[:2]
    out = image.copy()

    def band(r0, r1):
        rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(w), indexing="ij")
        pick = pixel_uniform(seed, _BLEND_SELECT, frame_index, rows, cols) < probability
        which = (pixel_uniform(seed, _BLEND_OFFSET, frame_index, rows, cols) * len(offsets)).astype(np.int64)
        which = np.minimum(which, len(offsets) - 1)
        r, c = rows[pick], cols[pick]
        nr = np.clip(r + offsets[which[pick], 0], 0, h - 1)
        nc = np.clip(c + offsets[which[pick], 1], 0, w - 1)
        mixed = (1.0 - alpha) * image[r, c].astype(np.float64) + alpha * image[nr, nc].astype(np.float64)
        out[r, c] = _round_u8(mixed)

    _run_bands(band, h, workers)
    return out


def random_mask(
    image: np.ndarray, probability: float, seed: int, frame_index: int = 0, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Black out each pixel independently with ``probability``; returns (image, mask)."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    if probability > 0:
        def band(r0, r1):
            rows, cols = np.meshgrid(np.arange(r0, r1), np.arange(w), indexing="ij")
            mask[r0:r1] = pixel_uniform(seed, _RANDOM_MASK, frame_index, rows, cols) < probability

        _run_bands(band, h, workers)
    out = image.copy()
    out[mask] = 0
    return out, mask


def depth_gradient(depth: DepthMap) -> np.ndarray:
    """Max of the absolute forward differences to the right and downward neighbors.

    Differences touching an invalid pixel or the border count as zero.
    """
    d = depth.values
    valid = depth.validity
    grad = np.zeros(d.shape, dtype=np.float64)
    both = valid[:, :-1] & valid[:, 1:]
    grad[:, :-1] = np.where(both, np.abs(d[:, 1:] - d[:, :-1]), 0.0)
    both = valid[:-1, :] & valid[1:, :]
    grad[:-1, :] = np.maximum(grad[:-1, :], np.where(both, np.abs(d[1:, :] - d[:-1, :]), 0.0))
    return grad


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a (2r+1)x(2r+1) square."""
    if radius == 0:
        return mask.copy()
    out = mask.copy()
    for axis in (0, 1):
        src = out
        out = src.copy()
        n = src.shape[axis]
        for s in range(1, radius + 1):
            if s >= n:
                break
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[axis], hi[axis] = slice(0, n - s), slice(s, n)
            out[tuple(lo)] |= src[tuple(hi)]
            out[tuple(hi)] |= src[tuple(lo)]
    return out


def depth_edge_mask(
    image: np.ndarray,
    estimated_depth: DepthMap,
    threshold: float | None,
    dilation: int,
    percentile: float = 95.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Black out pixels near sharp depth changes; returns (image, mask).

    A pixel is marked when its depth gradient exceeds ``threshold`` (or, if
    ``threshold`` is None, the given percentile of the image's gradient
    magnitudes); the marked set is then dilated by ``dilation`` pixels.
    """
    image = np.asarray(image)
    if image.shape[:2] != estimated_depth.shape:
        raise InvalidInputError(
            f"image size {image.shape[:2]} does not match depth size {estimated_depth.shape}"
        )
    grad = depth_gradient(estimated_depth)
    if threshold is None:
        threshold = float(np.percentile(grad, percentile))
    mask = dilate(grad > threshold, int(dilation))
    out = image.copy()
    out[mask] = 0
    return out, mask


def simulate(
    frame: Frame,
    estimated_depth: DepthMap,
    config: DegradationConfig,
    frame_index: int | None = None,
    workers: int = 1,
) -> TrainingPair:
    """Turn a clean frame into a (simulated pseudo-view, clean frame) pair.

    ``frame_index`` keys the random draws and defaults to the frame's
    timestamp, so different frames under one seed get different patterns.
    """
    target = frame.image
    if estimated_depth.shape != target.shape[:2]:
        raise InvalidInputError(
            f"estimated depth size {estimated_depth.shape} does not match image size {target.shape[:2]}"
        )
    if frame_index is None:
        frame_index = frame.timestamp
    c = config
    img = gaussian_filter(target, c.blur_sigma, c.blur_radius)
    img = local_blend(img, c.blend_probability, c.blend_radius, c.blend_alpha, c.seed, frame_index, workers)
    img, random_holes = random_mask(img, c.mask_probability, c.seed, frame_index, workers)
    img, edge_holes = depth_edge_mask(
        img, estimated_depth, c.depth_grad_threshold, c.depth_mask_dilation, c.depth_grad_percentile
    )
    return TrainingPair(condition=img, target=target.copy(), mask=random_holes | edge_holes)
