"""Segment-wise conditioning: split a trajectory into windows of ``T`` frames
that overlap by one frame, and chain a segment generator across them.

The first segment is anchored on the recorded start frame; every later
segment is anchored on the last frame the previous segment generated. The
remaining ``T - 1`` slots of each segment are filled with pseudo-views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ChainingContractError, InvalidInputError, ShapeError

LATENT_CHANNELS = 16
DEFAULT_TEMPORAL_FACTOR = 4
DEFAULT_SPATIAL_FACTOR = 8


@dataclass(frozen=True)
class Segment:
    index: int
    anchor: int  # trajectory index of the anchor frame
    slots: tuple[int, ...]  # trajectory indices filled by pseudo-views

    @property
    def anchor_source(self) -> str:
        return "recorded" if self.index == 0 else "previous_segment"

    @property
    def frames(self) -> tuple[int, ...]:
        return (self.anchor,) + self.slots

    def to_dict(self) -> dict:
        return {
            "segment": self.index,
            "anchor_frame": self.anchor,
            "anchor_source": self.anchor_source,
            "slot_frames": list(self.slots),
        }


@dataclass(frozen=True)
class SegmentPlan:
    segments: tuple[Segment, ...]
    segment_length: int
    trajectory_length: int

    def __len__(self):
        return len(self.segments)

    def to_dict(self) -> dict:
        return {
            "trajectory_length": self.trajectory_length,
            "segment_length": self.segment_length,
            "segments": [s.to_dict() for s in self.segments],
        }


def plan_segments(trajectory_length: int, segment_length: int = 16, strict: bool = False) -> SegmentPlan:
    """Chunk ``trajectory_length`` frames into one-frame-overlapping segments.

    The final segment is shortened when fewer than ``segment_length - 1`` new
    frames remain, unless ``strict`` is set, in which case such lengths are
    rejected.
    """
    m, t = int(trajectory_length), int(segment_length)
    if m < 2:
        raise InvalidInputError(f"trajectory needs at least 2 frames, got {m}")
    if t < 2:
        raise InvalidInputError(f"segment length must be at least 2, got {t}")
    step = t - 1
    if strict and (m - 1) % step:
        raise InvalidInputError(
            f"strict mode: {m} frames do not split into full segments of {t} "
            f"(need trajectory_length = 1 + k*{step})"
        )
    count = math.ceil((m - 1) / step)
    segments = []
    for k in range(count):
        anchor = k * step
        last = min(anchor + step, m - 1)
        segments.append(Segment(k, anchor, tuple(range(anchor + 1, last + 1))))
    return SegmentPlan(tuple(segments), t, m)


@dataclass(frozen=True)
class LatentShape:
    t: int
    h: int
    w: int
    q: int
    p: int

    latent_channels = LATENT_CHANNELS
    combined_channels = 2 * LATENT_CHANNELS

    @property
    def latent(self) -> tuple[int, int, int, int]:
        return (self.t // self.q, self.h // self.p, self.w // self.p, self.latent_channels)

    @property
    def combined(self) -> tuple[int, int, int, int]:
        return self.latent[:3] + (self.combined_channels,)

    @property
    def combined_elements(self) -> int:
        return int(np.prod(self.combined))


def latent_shape(t: int, h: int, w: int, q: int = DEFAULT_TEMPORAL_FACTOR, p: int = DEFAULT_SPATIAL_FACTOR) -> LatentShape:
    """Shape bookkeeping for encoding a T x H x W x 3 conditioning segment."""
    for name, value in (("t", t), ("h", h), ("w", w), ("q", q), ("p", p)):
        if int(value) != value or value < 1:
            raise InvalidInputError(f"{name} must be a positive integer, got {value}")
    if t % q:
        raise ShapeError("temporal", t, q)
    if h % p:
        raise ShapeError("height", h, p)
    if w % p:
        raise ShapeError("width", w, p)
    return LatentShape(int(t), int(h), int(w), int(q), int(p))


def _same_frame(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    return a is b or a == b


SegmentGenerator = Callable[[Any, Sequence[Any]], Sequence[Any]]


def run_chained(
    plan: SegmentPlan,
    first_frame: Any,
    pseudo_views: Callable[[int], Any] | Sequence[Any],
    generator: SegmentGenerator,
) -> list:
    """Run ``generator`` segment by segment, threading anchors forward.

    Args:
        plan: output of :func:`plan_segments`.
        first_frame: the recorded frame anchoring segment 0.
        pseudo_views: trajectory index -> pseudo-view, as a callable or a
            sequence indexed by trajectory position.
        generator: ``generator(anchor, slot_views)`` must return
            ``len(slot_views) + 1`` frames whose first frame is ``anchor``.

    Returns:
        One frame per trajectory index; overlap frames appear once.
    """
    lookup = pseudo_views if callable(pseudo_views) else pseudo_views.__getitem__
    # pseudo-view preparation does not depend on generated output
    slot_views = [[lookup(i) for i in seg.slots] for seg in plan.segments]

    output = [first_frame]
    anchor = first_frame
    for seg, views in zip(plan.segments, slot_views):
        frames = list(generator(anchor, views))
        if len(frames) != len(views) + 1:
            raise ChainingContractError(
                f"segment {seg.index}: generator returned {len(frames)} frames, expected {len(views) + 1}"
            )
        if not _same_frame(frames[0], anchor):
            raise ChainingContractError(
                f"segment {seg.index}: first generated frame differs from the anchor frame"
            )
        output.extend(frames[1:])
        anchor = frames[-1]
    return output
