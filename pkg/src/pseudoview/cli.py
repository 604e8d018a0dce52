"""Command-line entry point: ``pseudoview <subcommand> ...``.

Every subcommand loads an :class:`EngineConfig` (``--config`` file, else
``$GADRIVE_CONFIG``, else defaults), applies flag overrides, runs, writes
its artifacts, and emits a JSON run report (``--report`` path, default
stdout) with per-frame results, timings and a config echo that reproduces
the run when passed back as ``--config``.

Exit status is 0 when every frame succeeded, 1 when some frame failed
(the batch keeps going unless ``--strict``), 2 on usage/config errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio
from .config import EngineConfig, load_config
from .degrade import simulate
from .depth_align import align_depth, dense_depth_loss, fit_mse, fit_scale_shift, project_lidar
from .errors import PseudoViewError
from .segments import latent_shape, plan_segments
from .synthesis import (
    CorruptionConfig,
    build_point_cloud,
    corrupt_geometry,
    synthesize,
    synthesize_from_cloud,
)
from .trajectory import shift_trajectory


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise PseudoViewError(f"--set expects key=value, got {item!r}")
        out[key] = _parse_value(value)
    for key, attr in args.flag_map:
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    if args.workers is not None:
        out["workers"] = args.workers
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def resolve_config(args) -> EngineConfig:
    return load_config(args.config).with_overrides(_overrides(args))


def _run_batch(items, fn, workers: int, strict: bool):
    """Apply ``fn`` to every item; returns (results, errors) in input order."""

    def guarded(item):
        start = time.perf_counter()
        try:
            result = fn(item)
            result["seconds"] = round(time.perf_counter() - start, 6)
            return result, None
        except (PseudoViewError, ValueError, OSError) as exc:
            return None, {"frame": str(item), "error": f"{type(exc).__name__}: {exc}"}

    results, errors = [], []
    if workers <= 1 or strict:
        for item in items:
            res, err = guarded(item)
            if err:
                errors.append(err)
                if strict:
                    break
            else:
                results.append(res)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for res, err in pool.map(guarded, items):
                (errors if err else results).append(err or res)
    return results, errors


def _finish(args, cfg: EngineConfig, command: str, results, errors, started: float, extra=None) -> int:
    report = {
        "command": command,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "config": cfg.to_dict(),
        "frames": results,
        "errors": errors,
        "total_seconds": round(time.perf_counter() - started, 6),
    }
    if extra:
        report.update(extra)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    else:
        print(text)
    for err in errors:
        print(f"error: {err['frame']}: {err['error']}", file=sys.stderr)
    return 1 if errors else 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------

def _targets(args, manifest):
    if args.targets:
        tm = dataio.load_manifest(args.targets, require_images=False)
    else:
        tm = manifest
    idx = [r.index for r in tm.frames if args.target_timestamp is None or r.timestamp == args.target_timestamp]
    if not idx:
        raise PseudoViewError("no target frame matches the requested timestamp")
    return tm, idx


def _sources_for(manifest, target_rec, policy: str, cache: dict):
    if policy == "all":
        indices = [r.index for r in manifest.frames]
    else:
        indices = manifest.indices_at(target_rec.timestamp)
    if not indices:
        raise PseudoViewError(f"no source frame at timestamp {target_rec.timestamp}")
    for i in indices:
        if i not in cache:
            cache[i] = manifest.load_frame(i)
    return [cache[i] for i in indices]


def cmd_synthesize(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    manifest = dataio.load_manifest(args.manifest)
    tm, idx = _targets(args, manifest)
    out = _out_dir(args)
    cache = {}
    # preload sources once; workers only read them
    for i in idx:
        _sources_for(manifest, tm.frames[i], args.source_policy, cache)

    def one(i):
        rec = tm.frames[i]
        sources = _sources_for(manifest, rec, args.source_policy, cache)
        view = synthesize(sources, rec.intrinsics, rec.pose, tm.load_depth(i), cfg.delta)
        files = dataio.write_pseudo_view(out, rec.stem, view)
        return {"frame": rec.stem, "timestamp": rec.timestamp, "sources": len(sources),
                "validity_ratio": view.validity_ratio, "files": _rel(files, out)}

    results, errors = _run_batch(idx, one, cfg.workers, args.strict)
    return _finish(args, cfg, "synthesize", results, errors, started)


def _rel(files: dict, root: Path) -> dict:
    return {k: str(Path(v).relative_to(root)) for k, v in files.items()}


def cmd_degrade(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    manifest = dataio.load_manifest(args.manifest)
    out = _out_dir(args)
    dcfg = cfg.degradation

    def one(i):
        rec = manifest.frames[i]
        frame = manifest.load_frame(i)
        estimated = manifest.load_relative_depth(i)
        if estimated is None:
            estimated = frame.depth
        pair = simulate(frame, estimated, dcfg, frame_index=i)
        stem = rec.stem
        dataio.write_rgb(out / f"{stem}_condition.png", pair.condition)
        dataio.write_rgb(out / f"{stem}_target.png", pair.target)
        dataio.write_mask(out / f"{stem}_mask.png", pair.mask)
        sidecar = {"frame": stem, "frame_index": i, "seed": dcfg.seed, "config": dcfg.to_dict()}
        (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return {"frame": stem, "masked_ratio": float(pair.mask.mean())}

    results, errors = _run_batch(range(len(manifest.frames)), one, cfg.workers, args.strict)
    return _finish(args, cfg, "degrade", results, errors, started)


def cmd_align_depth(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    manifest = dataio.load_manifest(args.manifest)
    out = _out_dir(args)
    inverse = cfg.align.inverse

    def one(i):
        rec = manifest.frames[i]
        relative = manifest.load_relative_depth(i)
        if relative is None:
            raise PseudoViewError(f"frame {i}: no relative depth in manifest")
        points = manifest.load_lidar(rec.timestamp)
        if points is None:
            raise PseudoViewError(f"frame {i}: no LiDAR for timestamp {rec.timestamp}")
        samples = project_lidar(points, rec.intrinsics, rec.pose)
        fit = fit_scale_shift(relative, samples, inverse=inverse)
        aligned = align_depth(relative, fit, inverse=inverse)
        dataio.write_depth(out / f"{rec.stem}_aligned.depth", aligned)
        result = {"frame": rec.stem, "scale": fit.scale, "shift": fit.shift, "samples": len(samples),
                  "fit_mse": fit_mse(relative, samples, fit) if not inverse else None}
        try:
            result["dense_depth_loss"] = dense_depth_loss(aligned, manifest.load_depth(i))
        except PseudoViewError:
            result["dense_depth_loss"] = None
        return result

    results, errors = _run_batch(range(len(manifest.frames)), one, cfg.workers, args.strict)
    return _finish(args, cfg, "align-depth", results, errors, started)


def cmd_plan_segments(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    seg = cfg.segment
    if args.length is not None:
        length = args.length
    elif args.manifest:
        traj, _ = dataio.load_manifest(args.manifest).trajectory(args.camera)
        length = len(traj)
    else:
        raise PseudoViewError("plan-segments needs --length or --manifest")
    plan = plan_segments(length, seg.length, strict=seg.strict)
    doc = plan.to_dict()
    if args.height and args.width:
        shape = latent_shape(seg.length, args.height, args.width, seg.temporal_factor, seg.spatial_factor)
        doc["latent"] = {"latent_shape": list(shape.latent), "combined_shape": list(shape.combined)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return _finish(args, cfg, "plan-segments", [], [], started, {"plan": doc})


def cmd_shift_trajectory(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    traj, _ = dataio.load_manifest(args.manifest, require_images=False).trajectory(args.camera)
    shifted = shift_trajectory(traj, cfg.shift)
    doc = {"poses": [{"timestamp": t, "pose": dataio.pose_to_list(p)}
                     for t, p in zip(shifted.timestamps, shifted.poses)]}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    displacement = [float(np.linalg.norm(a.translation - b.translation))
                    for a, b in zip(shifted.poses, traj.poses)]
    return _finish(args, cfg, "shift-trajectory", [], [], started,
                   {"frames_written": len(doc["poses"]), "max_displacement": max(displacement)})


def cmd_corrupt(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    ccfg: CorruptionConfig = cfg.corruption
    if args.points:
        points = dataio.read_points(args.points)
        corrupted = corrupt_geometry(points, ccfg)
        dataio.write_points(args.out, corrupted)
        return _finish(args, cfg, "corrupt", [{"input_points": len(points), "output_points": len(corrupted)}],
                       [], started)
    if not args.manifest:
        raise PseudoViewError("corrupt needs --points or --manifest")
    manifest = dataio.load_manifest(args.manifest)
    tm, idx = _targets(args, manifest)
    out = _out_dir(args)
    cache = {}
    for i in idx:
        _sources_for(manifest, tm.frames[i], args.source_policy, cache)

    def one(i):
        rec = tm.frames[i]
        sources = _sources_for(manifest, rec, args.source_policy, cache)
        cloud = build_point_cloud(tm.load_depth(i), rec.intrinsics, rec.pose)
        clean = synthesize_from_cloud(sources, cloud, rec.intrinsics, rec.pose, cfg.delta)
        view = synthesize_from_cloud(sources, corrupt_geometry(cloud, ccfg), rec.intrinsics, rec.pose, cfg.delta)
        files = dataio.write_pseudo_view(out, rec.stem, view)
        return {"frame": rec.stem, "points": len(cloud), "clean_validity_ratio": clean.validity_ratio,
                "validity_ratio": view.validity_ratio, "files": _rel(files, out)}

    results, errors = _run_batch(idx, one, cfg.workers, args.strict)
    return _finish(args, cfg, "corrupt", results, errors, started)


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="engine config JSON (default: $GADRIVE_CONFIG)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. degradation.blur_sigma=1.2")
    common.add_argument("--workers", type=int, help="worker threads")
    common.add_argument("--seed", type=int, help="seed for every random step")
    common.add_argument("--strict", action="store_true", help="stop at the first failing frame")
    common.add_argument("--report", help="write the JSON run report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="pseudoview", description="Pseudo-view synthesis and training-data tools for recorded driving scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, flag_map=()):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn, flag_map=list(flag_map))
        return p

    p = add("synthesize", cmd_synthesize, "render pseudo-views from recorded frames", [("delta", "delta")])
    p.add_argument("--manifest", required=True)
    p.add_argument("--targets", help="manifest of target cameras (images optional); default: the scene manifest")
    p.add_argument("--target-timestamp", type=int)
    p.add_argument("--source-policy", choices=["timestamp", "all"], default="timestamp")
    p.add_argument("--delta", type=float, help="visibility tolerance in meters")
    p.add_argument("--out", required=True)

    p = add("degrade", cmd_degrade, "simulate pseudo-view degradation training pairs", [
        ("degradation.blur_sigma", "blur_sigma"),
        ("degradation.blend_probability", "blend_probability"),
        ("degradation.mask_probability", "mask_probability"),
        ("degradation.depth_grad_threshold", "depth_threshold"),
    ])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blur-sigma", type=float)
    p.add_argument("--blend-probability", type=float)
    p.add_argument("--mask-probability", type=float)
    p.add_argument("--depth-threshold", type=float, help="absolute depth-gradient threshold")

    p = add("align-depth", cmd_align_depth, "align relative depth to LiDAR", [("align.inverse", "inverse")])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inverse", action="store_const", const=True, help="fit in inverse-depth space")

    p = add("plan-segments", cmd_plan_segments, "plan segment-wise conditioning", [
        ("segment.length", "segment_length"),
        ("segment.temporal_factor", "q"),
        ("segment.spatial_factor", "p"),
    ])
    p.add_argument("--length", type=int, help="trajectory length in frames")
    p.add_argument("--manifest")
    p.add_argument("--camera")
    p.add_argument("--segment-length", type=int)
    p.add_argument("--q", type=int, help="temporal downsampling factor")
    p.add_argument("--p", type=int, help="spatial downsampling factor")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--out", help="write the plan JSON here")

    p = add("shift-trajectory", cmd_shift_trajectory, "lane-shift a recorded trajectory", [
        ("shift.per_frame_shift", "per_frame_shift"),
        ("shift.max_shift", "max_shift"),
        ("shift.direction", "direction"),
        ("shift.mode", "mode"),
        ("shift.axis", "axis"),
    ])
    p.add_argument("--manifest", required=True)
    p.add_argument("--camera")
    p.add_argument("--per-frame-shift", type=float)
    p.add_argument("--max-shift", type=float)
    p.add_argument("--direction", choices=["left", "right"])
    p.add_argument("--mode", choices=["ramp", "constant"])
    p.add_argument("--axis", choices=["horizontal", "camera"])
    p.add_argument("--out", required=True)

    p = add("corrupt", cmd_corrupt, "drop and jitter geometry", [
        ("corruption.drop_fraction", "drop"),
        ("corruption.noise_half_width", "noise"),
        ("delta", "delta"),
    ])
    p.add_argument("--points", help="point file to corrupt")
    p.add_argument("--manifest", help="synthesize on corrupted target geometry instead")
    p.add_argument("--targets")
    p.add_argument("--target-timestamp", type=int)
    p.add_argument("--source-policy", choices=["timestamp", "all"], default="timestamp")
    p.add_argument("--drop", type=float, help="fraction of points to drop")
    p.add_argument("--noise", type=float, help="uniform noise half-width in meters")
    p.add_argument("--delta", type=float)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PseudoViewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
