"""File codecs and scene manifests.

Formats:
    RGB         8-bit PNG.
    depth       raw little-endian: ``width`` u32, ``height`` u32, then
                ``width * height`` float32 values row-major; 0 (or inf)
                marks a pixel without depth, NaN is rejected.
    depth16     16-bit PNG of integer depth in units of ``scale`` meters,
                0 = no depth (interchange only, it quantizes far range).
    mask        8-bit PNG, 0 = false, 255 = true.
    source map  8-bit PNG of source indices, 255 = no source.
    points      little-endian: point count u32, then count * (x, y, z) float32.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DecodeError,
    DimensionMismatchError,
    InvalidPoseError,
    ManifestError,
    MissingFileError,
)
from .geometry import DepthMap, Intrinsics, Pose, orthonormality_error
from .synthesis import NO_SOURCE, Frame, PseudoView
from .trajectory import Trajectory

log = logging.getLogger(__name__)

POSE_REJECT_TOL = 1e-4
POSE_WARN_TOL = 1e-6
DEFAULT_PNG_DEPTH_SCALE = 0.001
_DEPTH_HEADER = struct.Struct("<II")
_POINTS_HEADER = struct.Struct("<I")


# -- images -----------------------------------------------------------------

def read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.array(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: cannot decode RGB image ({exc})") from exc


def write_rgb(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 uint8 image, got {image.dtype} {image.shape}")
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            data = np.array(im.convert("L") if im.mode != "L" else im)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: cannot decode mask ({exc})") from exc
    if not np.all((data == 0) | (data == 255)):
        raise DecodeError(f"{path}: mask values must be 0 or 255")
    return data == 255


def write_mask(path, mask: np.ndarray) -> None:
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def write_source_index(path, source_index: np.ndarray) -> None:
    source_index = np.asarray(source_index)
    if source_index.size and source_index.max() >= 255:
        raise ValueError("source index map supports at most 255 sources")
    data = np.where(source_index == NO_SOURCE, 255, source_index).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def read_source_index(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            data = np.array(im).astype(np.int16)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: cannot decode source index map ({exc})") from exc
    data[data == 255] = NO_SOURCE
    return data


def write_pseudo_view(out_dir, stem: str, view: PseudoView) -> dict:
    out_dir = Path(out_dir)
    paths = {
        "image": out_dir / f"{stem}_rgb.png",
        "mask": out_dir / f"{stem}_mask.png",
        "source_index": out_dir / f"{stem}_source.png",
    }
    write_rgb(paths["image"], view.image)
    write_mask(paths["mask"], view.validity)
    write_source_index(paths["source_index"], view.source_index)
    return {k: str(v) for k, v in paths.items()}


# -- depth ------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: cannot read ({exc})") from exc


def read_depth_header(path) -> tuple[int, int]:
    """(height, width) of a raw depth file, reading only the header."""
    with open(path, "rb") as fh:
        head = fh.read(_DEPTH_HEADER.size)
    if len(head) < _DEPTH_HEADER.size:
        raise DecodeError(f"{path}: truncated depth header")
    width, height = _DEPTH_HEADER.unpack(head)
    return height, width


def read_depth_array(path) -> np.ndarray:
    """Raw float32 depth values exactly as stored."""
    data = _read_bytes(path)
    if len(data) < _DEPTH_HEADER.size:
        raise DecodeError(f"{path}: truncated depth header")
    width, height = _DEPTH_HEADER.unpack_from(data)
    expected = _DEPTH_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise DecodeError(f"{path}: depth payload is {len(data)} bytes, header implies {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_DEPTH_HEADER.size).reshape(height, width)
    if np.isnan(values).any():
        raise DecodeError(f"{path}: depth raster contains NaN")
    return values.astype(np.float32)


def write_depth(path, values) -> None:
    if isinstance(values, DepthMap):
        values = np.where(values.validity, values.values, 0.0)
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"depth raster must be 2-D, got shape {values.shape}")
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(width, height))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_depth(path) -> DepthMap:
    return DepthMap(read_depth_array(path).astype(np.float64))


def read_depth_png16(path, scale: float = DEFAULT_PNG_DEPTH_SCALE) -> DepthMap:
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise DecodeError(f"{path}: cannot decode 16-bit depth PNG ({exc})") from exc
    if raw.ndim != 2 or raw.dtype.kind not in "ui":
        raise DecodeError(f"{path}: expected single-channel integer PNG")
    return DepthMap(raw.astype(np.float64) * scale)


def write_depth_png16(path, depth: DepthMap, scale: float = DEFAULT_PNG_DEPTH_SCALE) -> None:
    counts = np.where(depth.validity, np.floor(depth.values / scale + 0.5), 0)
    if counts.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    Image.fromarray(counts.astype(np.uint16)).save(path, format="PNG")


def load_depth_file(path, scale: float = DEFAULT_PNG_DEPTH_SCALE) -> DepthMap:
    """Dispatch on extension: ``.png`` is the 16-bit interchange format, anything else raw float32."""
    if str(path).lower().endswith(".png"):
        return read_depth_png16(path, scale)
    return read_depth(path)


def _depth_file_shape(path) -> tuple[int, int]:
    if str(path).lower().endswith(".png"):
        with Image.open(path) as im:
            return im.height, im.width
    return read_depth_header(path)


# -- LiDAR ------------------------------------------------------------------

def read_points(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < _POINTS_HEADER.size:
        raise DecodeError(f"{path}: truncated point file header")
    (count,) = _POINTS_HEADER.unpack_from(data)
    expected = _POINTS_HEADER.size + 12 * count
    if len(data) < expected:
        raise DecodeError(f"{path}: header announces {count} points but payload holds {(len(data) - 4) // 12}")
    if len(data) > expected:
        raise DecodeError(f"{path}: {len(data) - expected} trailing bytes after {count} points")
    return np.frombuffer(data, dtype="<f4", offset=_POINTS_HEADER.size).reshape(count, 3).astype(np.float32)


def write_points(path, points) -> None:
    points = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_POINTS_HEADER.pack(len(points)))
        fh.write(points.tobytes())


# -- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    index: int
    image: Path | None
    depth: Path
    relative_depth: Path | None
    intrinsics: Intrinsics
    pose: Pose
    timestamp: int
    camera: str = ""
    depth_scale: float = DEFAULT_PNG_DEPTH_SCALE
    name: str = ""

    @property
    def stem(self) -> str:
        return self.name or f"t{self.timestamp:06d}_f{self.index:04d}"


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    frames: tuple[FrameRecord, ...]
    lidar: dict
    root: Path

    def load_depth(self, i: int) -> DepthMap:
        rec = self.frames[i]
        return load_depth_file(rec.depth, rec.depth_scale)

    def load_relative_depth(self, i: int) -> DepthMap | None:
        rec = self.frames[i]
        if rec.relative_depth is None:
            return None
        return load_depth_file(rec.relative_depth, rec.depth_scale)

    def load_frame(self, i: int) -> Frame:
        rec = self.frames[i]
        depth = self.load_depth(i)
        if rec.image is None:
            image = np.zeros(depth.shape + (3,), dtype=np.uint8)
        else:
            image = read_rgb(rec.image)
        return Frame(image, rec.intrinsics, rec.pose, depth, rec.timestamp, rec.stem)

    def load_lidar(self, timestamp: int) -> np.ndarray | None:
        path = self.lidar.get(int(timestamp))
        return None if path is None else read_points(path)

    def indices_at(self, timestamp: int) -> list[int]:
        return [r.index for r in self.frames if r.timestamp == timestamp]

    def trajectory(self, camera: str | None = None) -> tuple[Trajectory, list[int]]:
        """Poses ordered by timestamp (optionally one camera only) and their frame indices."""
        recs = [r for r in self.frames if camera is None or r.camera == camera]
        if not recs:
            raise ManifestError(f"no frames for camera {camera!r}")
        recs.sort(key=lambda r: (r.timestamp, r.index))
        return Trajectory(tuple(r.pose for r in recs), tuple(r.timestamp for r in recs)), [r.index for r in recs]


def parse_pose(values, frame_index=None) -> Pose:
    try:
        matrix = np.asarray(values, dtype=np.float64).reshape(4, 4)
    except (TypeError, ValueError) as exc:
        raise InvalidPoseError("pose must be 16 numbers (row-major 4x4)", frame_index) from exc
    if not np.all(np.isfinite(matrix)):
        raise InvalidPoseError("pose contains non-finite values", frame_index)
    if not np.allclose(matrix[3], [0, 0, 0, 1]):
        raise InvalidPoseError("pose bottom row must be [0, 0, 0, 1]", frame_index)
    rot = matrix[:3, :3]
    det = float(np.linalg.det(rot))
    if det <= 0:
        raise InvalidPoseError(f"rotation determinant is {det:.6g}; reflections are not rigid", frame_index)
    err = orthonormality_error(rot)
    if err > POSE_REJECT_TOL:
        raise InvalidPoseError(f"rotation is not orthonormal (error {err:.3g})", frame_index)
    if err > POSE_WARN_TOL:
        log.warning("frame %s: re-orthonormalizing rotation (error %.3g)", frame_index, err)
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
    return Pose(rot, matrix[:3, 3])


def pose_to_list(pose: Pose) -> list[float]:
    return [float(v) for v in pose.matrix().reshape(-1)]


def _resolve(root: Path, value, what: str, frame_index) -> Path:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{what} path missing", frame_index)
    path = Path(value)
    if not path.is_absolute():
        path = root / path
    if not path.is_file():
        raise MissingFileError(f"{what} file not found: {path}", frame_index)
    return path


def _image_shape(path, frame_index) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.height, im.width
    except (OSError, SyntaxError) as exc:
        raise ManifestError(f"cannot read image {path}: {exc}", frame_index) from exc


def _parse_intrinsics(raw, frame_index) -> Intrinsics:
    if not isinstance(raw, dict):
        raise ManifestError("intrinsics must be an object", frame_index)
    keys = {"fx", "fy", "cx", "cy", "width", "height"}
    if set(raw) != keys:
        raise ManifestError(f"intrinsics need exactly the keys {sorted(keys)}", frame_index)
    try:
        return Intrinsics(**raw)
    except (ValueError, TypeError) as exc:
        raise ManifestError(f"bad intrinsics: {exc}", frame_index) from exc


_FRAME_KEYS = {"image", "depth", "relative_depth", "intrinsics", "pose", "timestamp", "camera", "depth_scale", "name"}


def parse_manifest(doc: dict, root, require_images: bool = True) -> SceneManifest:
    root = Path(root)
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise ManifestError("manifest must be an object with a 'frames' list")
    unknown = set(doc) - {"scene_id", "frames", "lidar"}
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    records = []
    for i, raw in enumerate(doc["frames"]):
        if not isinstance(raw, dict):
            raise ManifestError("frame entry must be an object", i)
        unknown = set(raw) - _FRAME_KEYS
        if unknown:
            raise ManifestError(f"unknown frame keys: {sorted(unknown)}", i)
        K = _parse_intrinsics(raw.get("intrinsics"), i)
        if "pose" not in raw:
            raise InvalidPoseError("pose missing", i)
        pose = parse_pose(raw["pose"], i)
        if not isinstance(raw.get("timestamp"), int):
            raise ManifestError("timestamp must be an integer", i)
        scale = float(raw.get("depth_scale", DEFAULT_PNG_DEPTH_SCALE))
        image = None
        if require_images or raw.get("image") is not None:
            image = _resolve(root, raw.get("image"), "image", i)
            shape = _image_shape(image, i)
            if shape != K.shape:
                raise DimensionMismatchError(
                    f"image is {shape[1]}x{shape[0]} but intrinsics say {K.width}x{K.height}", i
                )
        depth = _resolve(root, raw.get("depth"), "depth", i)
        relative = None
        if raw.get("relative_depth") is not None:
            relative = _resolve(root, raw["relative_depth"], "relative depth", i)
        for what, path in (("depth", depth), ("relative depth", relative)):
            if path is None:
                continue
            try:
                shape = _depth_file_shape(path)
            except (DecodeError, OSError) as exc:
                raise ManifestError(f"cannot read {what} {path}: {exc}", i) from exc
            if shape != K.shape:
                raise DimensionMismatchError(
                    f"{what} raster is {shape[1]}x{shape[0]} but intrinsics say {K.width}x{K.height}", i
                )
        records.append(FrameRecord(
            index=i, image=image, depth=depth, relative_depth=relative, intrinsics=K, pose=pose,
            timestamp=raw["timestamp"], camera=str(raw.get("camera", "")), depth_scale=scale,
            name=str(raw.get("name", "")),
        ))
    lidar = {}
    for entry in doc.get("lidar", []) or []:
        if not isinstance(entry, dict) or not isinstance(entry.get("timestamp"), int):
            raise ManifestError("lidar entries need an integer 'timestamp' and a 'path'")
        lidar[entry["timestamp"]] = _resolve(root, entry.get("path"), "lidar", None)
    return SceneManifest(str(doc.get("scene_id", "")), tuple(records), lidar, root)


def load_manifest(path, require_images: bool = True) -> SceneManifest:
    """Load and eagerly validate a scene manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise MissingFileError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest JSON in {path}: {exc}") from exc
    return parse_manifest(doc, path.parent, require_images)


def frame_entry(image, depth, intrinsics: Intrinsics, pose: Pose, timestamp: int, **extra) -> dict:
    """Build one manifest frame entry (paths are stored as given)."""
    entry = {
        "image": None if image is None else str(image),
        "depth": str(depth),
        "intrinsics": intrinsics.to_dict(),
        "pose": pose_to_list(pose),
        "timestamp": int(timestamp),
    }
    if image is None:
        del entry["image"]
    entry.update({k: (str(v) if isinstance(v, os.PathLike) else v) for k, v in extra.items()})
    return entry
