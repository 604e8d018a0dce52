"""Analytic test scenes made of axis-aligned rectangles at constant world z.

Cameras are ray-cast exactly, so every rendered depth and color is known
in closed form, and occlusion can be decided by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pseudoview.geometry import DepthMap, Intrinsics, Pose
from pseudoview.synthesis import Frame

INF = math.inf


@dataclass(frozen=True)
class Rect:
    z: float
    x0: float = -INF
    x1: float = INF
    y0: float = -INF
    y1: float = INF
    plane_id: int = 0

    def contains(self, x, y) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def color(self, x, y):
        # texture varies over the plane so a wrong lookup is visible
        return (
            40 + 100 * self.plane_id,
            int(math.floor(x * 37.0)) % 256,
            int(math.floor(y * 53.0)) % 256,
        )


def rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def cast(rects, center, direction):
    """Nearest hit of a ray; returns (s, rect, point) with s the ray parameter, or None."""
    best = None
    for rect in rects:
        if direction[2] == 0:
            continue
        s = (rect.z - center[2]) / direction[2]
        if s <= 0:
            continue
        x = center[0] + s * direction[0]
        y = center[1] + s * direction[1]
        if rect.contains(x, y) and (best is None or s < best[0]):
            best = (s, rect, (x, y, rect.z))
    return best


def render(rects, K: Intrinsics, T: Pose, timestamp=0, name=""):
    """Ray-cast depth and color at every pixel center.

    The ray direction is ``R @ K^-1 [u, v, 1]``, whose camera-frame z is 1,
    so the ray parameter of a hit equals its camera z-depth.
    """
    h, w = K.shape
    depth = np.zeros((h, w))
    image = np.zeros((h, w, 3), dtype=np.uint8)
    center = T.translation
    R = T.rotation
    for v in range(h):
        for u in range(w):
            ray_cam = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
            hit = cast(rects, center, R @ ray_cam)
            if hit is not None:
                depth[v, u] = hit[0]
                image[v, u] = hit[1].color(hit[2][0], hit[2][1])
    return Frame(image, K, T, DepthMap(depth), timestamp, name)


def blocked(rects, source_center, point, target_rect) -> bool:
    """True if the segment from a source center to ``point`` crosses another rectangle first."""
    direction = np.asarray(point) - np.asarray(source_center)
    for rect in rects:
        if rect is target_rect or direction[2] == 0:
            continue
        s = (rect.z - source_center[2]) / direction[2]
        if 0 < s < 1 - 1e-9:
            x = source_center[0] + s * direction[0]
            y = source_center[1] + s * direction[1]
            if rect.contains(x, y):
                return True
    return False


def occlusion_scene(size=32):
    """Narrow near strip at z=2 in front of a wide far wall at z=4."""
    near = Rect(2.0, -0.3, 0.3, -INF, INF, plane_id=1)
    far = Rect(4.0, plane_id=0)
    K = Intrinsics(size / 2, size / 2, (size - 1) / 2, (size - 1) / 2, size, size)
    target = Pose.identity()
    source = Pose(np.eye(3), [1.0, 0.0, 0.0])
    return [near, far], K, target, source


def random_two_plane_case(rng: np.random.Generator, size=8, max_sources=4):
    """A random near/far scene with 1..max_sources sources and a target camera."""
    near_depth = rng.uniform(1.5, 2.5)
    far_depth = near_depth + rng.uniform(1.0, 3.0)
    half = rng.uniform(0.2, 0.8)
    cx0 = rng.uniform(-0.5, 0.5)
    near = Rect(near_depth, cx0 - half, cx0 + half, rng.uniform(-2, -0.2), rng.uniform(0.2, 2), plane_id=1)
    far = Rect(far_depth, plane_id=0)
    f = rng.uniform(4.0, 10.0)
    K = Intrinsics(f, f * rng.uniform(0.9, 1.1), (size - 1) / 2 + rng.uniform(-0.5, 0.5),
                   (size - 1) / 2 + rng.uniform(-0.5, 0.5), size, size)

    def random_pose():
        R = rot_y(rng.uniform(-0.15, 0.15)) @ rot_x(rng.uniform(-0.1, 0.1))
        t = [rng.uniform(-1.0, 1.0), rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.3)]
        return Pose(R, t)

    rects = [near, far]
    n_sources = int(rng.integers(1, max_sources + 1))
    sources = [render(rects, K, random_pose(), name=f"s{i}") for i in range(n_sources)]
    target_pose = random_pose()
    target = render(rects, K, target_pose)
    return rects, sources, K, target_pose, target.depth


def write_scene(root, frames, scene_id="scene", lidar=None, relative=None):
    """Write frames (and optional LiDAR / relative depth) plus a manifest; returns the manifest path.

    ``lidar`` maps timestamp -> (N, 3) points, ``relative`` maps frame index -> DepthMap.
    """
    import json
    from pathlib import Path

    from pseudoview import dataio

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, f in enumerate(frames):
        stem = f"f{i:03d}"
        dataio.write_rgb(root / f"{stem}.png", f.image)
        dataio.write_depth(root / f"{stem}.depth", f.depth)
        extra = {"name": f.name} if f.name else {}
        if relative and i in relative:
            dataio.write_depth(root / f"{stem}_rel.depth", relative[i])
            extra["relative_depth"] = f"{stem}_rel.depth"
        entries.append(dataio.frame_entry(f"{stem}.png", f"{stem}.depth", f.intrinsics, f.pose,
                                          f.timestamp, **extra))
    doc = {"scene_id": scene_id, "frames": entries, "lidar": []}
    for ts, pts in (lidar or {}).items():
        dataio.write_points(root / f"lidar_{ts}.bin", pts)
        doc["lidar"].append({"timestamp": ts, "path": f"lidar_{ts}.bin"})
    path = root / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path
