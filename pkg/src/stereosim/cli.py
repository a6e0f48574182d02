"""Command-line entry point: render, match, simulate, eval, pose-eval.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .core import DepthMap, ImageRGB, StereoSimError, ValidationError, to_grayscale
from .metrics import PoseSample, depth_metrics, mean_reports, pose_report
from .parallel import set_threads
from .refine import MatchConfig, match_stereo
from .scenegen import (
    IrProjectorSpec,
    RenderMode,
    SequenceSpec,
    render_stereo_frame,
    simulate_sequence,
)

logger = logging.getLogger("stereosim")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
CLI_DEPTH_PNG_SCALE = 1e-3


class CliIOError(StereoSimError):
    pass


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliIOError(f"cannot read {path}: {e.strerror or e}") from None


def _load_rig(path):
    return sio.parse_rig(_read_text(path))


def _load_projector(args):
    if args.projector is None:
        return IrProjectorSpec(seed=args.seed)
    if args.projector == "none":
        return None
    return sio.projector_from_dict(sio.load_json(args.projector))


def _mode_arg(mode: str):
    return None if mode == "auto" else RenderMode(mode)


def _png_safe(z: DepthMap, scale_m: float) -> DepthMap:
    """Drop pixels the 16-bit encoding cannot hold (the PFM keeps them)."""
    ok = z.mask & (np.round(np.where(z.mask, z.values, 0) / scale_m) <= 65535)
    if (z.mask & ~ok).any():
        logger.warning("%d pixels beyond PNG16 range at scale %g m left invalid in PNG", int((z.mask & ~ok).sum()), scale_m)
    return DepthMap(z.values, ok)


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliIOError(f"cannot create output directory {out}: {e.strerror or e}") from None
    return out


def _write_frame_images(out: Path, name: str, frame, scale_m: float) -> sio.FrameEntry:
    entry = sio.FrameEntry(
        frame_index=frame.frame_index,
        mode=frame.mode.value,
        left=f"{name}_left.png",
        right=f"{name}_right.png",
        gt_depth=f"{name}_gt_depth.pfm",
        gt_depth_png=f"{name}_gt_depth.png",
    )
    sio.write_image_png(frame.left, out / entry.left)
    sio.write_image_png(frame.right, out / entry.right)
    sio.write_pfm(frame.gt_depth, out / entry.gt_depth)
    sio.write_depth_png16(_png_safe(frame.gt_depth, scale_m), out / entry.gt_depth_png, scale_m)
    return entry


def cmd_render(args) -> int:
    scene_text = _read_text(args.scene)
    rig = _load_rig(args.rig)
    scene = sio.parse_scene_spec(scene_text)
    seq = sio.parse_sequence_spec(_read_text(args.sequence)) if args.sequence else SequenceSpec(args.frames or 1)
    if args.sequence and args.frames is not None:
        seq = SequenceSpec(args.frames, seq.camera_track, seq.object_tracks)
    projector = _load_projector(args)
    out = _prepare_out(args.out)
    manifest = sio.DatasetManifest(
        rig=sio.rig_to_dict(rig), scene=str(args.scene), sequence=args.sequence and str(args.sequence),
        seed=args.seed, depth_png_scale_m=args.depth_png_scale,
    )
    for t in range(seq.frame_count):
        frame = render_stereo_frame(
            seq.scene_at(scene, t), rig, seq.camera_pose(t), projector, args.threshold,
            mode=_mode_arg(args.mode), seed=args.seed, frame_index=t,
        )
        manifest.frames.append(_write_frame_images(out, f"frame_{t:04d}", frame, args.depth_png_scale))
        logger.info("frame %d rendered in %s mode", t, frame.mode.value)
    sio.write_manifest(manifest, out)
    return EXIT_OK


def _load_gray(path):
    try:
        img = sio.read_image_png(path)
    except OSError as e:
        raise CliIOError(f"cannot read {path}: {e}") from None
    return to_grayscale(img) if isinstance(img, ImageRGB) else img


def cmd_match(args) -> int:
    left = _load_gray(args.left)
    right = _load_gray(args.right)
    rig = _load_rig(args.rig)
    cfg = sio.parse_match_config(_read_text(args.config)) if args.config else MatchConfig()
    out = _prepare_out(args.out)
    timings: dict[str, float] = {}
    disp, depth = match_stereo(left, right, rig, cfg, timings)
    sio.write_pfm(disp, out / "disparity.pfm")
    sio.write_pfm(depth, out / "depth.pfm")
    sio.write_depth_png16(_png_safe(depth, args.depth_png_scale), out / "depth.png", args.depth_png_scale)
    stats = {
        "valid_pixel_ratio": disp.valid_ratio(),
        "runtime_ms": 1000.0 * timings["total"],
        "stage_ms": {k: 1000.0 * v for k, v in timings.items() if k != "total"},
        "image_size": list(rig.image_size),
        "d_max": cfg.d_max,
        "paths": cfg.sgm.paths,
        "depth_png_scale_m": args.depth_png_scale,
    }
    sio.dump_json(stats, out / "stats.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scene = sio.parse_scene_spec(_read_text(args.scene))
    seq = sio.parse_sequence_spec(_read_text(args.sequence)) if args.sequence else SequenceSpec(1)
    rig = _load_rig(args.rig)
    cfg = sio.parse_match_config(_read_text(args.config)) if args.config else MatchConfig()
    projector = _load_projector(args)
    out = _prepare_out(args.out)
    scale = args.depth_png_scale
    frames = simulate_sequence(
        scene, seq, rig, projector, cfg, threshold_m=args.threshold, mode=_mode_arg(args.mode), seed=args.seed,
    )
    manifest = sio.DatasetManifest(
        rig=sio.rig_to_dict(rig), scene=str(args.scene), sequence=args.sequence and str(args.sequence),
        seed=args.seed, depth_png_scale_m=scale, match_config=sio.match_config_to_dict(cfg),
    )
    for sim in frames:
        name = f"frame_{sim.frame.frame_index:04d}"
        entry = _write_frame_images(out, name, sim.frame, scale)
        entry.sim_depth = f"{name}_sim_depth.pfm"
        entry.sim_depth_png = f"{name}_sim_depth.png"
        entry.disparity = f"{name}_disparity.pfm"
        sio.write_pfm(sim.depth, out / entry.sim_depth)
        sio.write_depth_png16(_png_safe(sim.depth, scale), out / entry.sim_depth_png, scale)
        sio.write_pfm(sim.disparity, out / entry.disparity)
        manifest.frames.append(entry)
        logger.info("frame %d: mode %s, valid %.3f", sim.frame.frame_index, sim.frame.mode.value, sim.disparity.valid_ratio())
    sio.write_manifest(manifest, out)
    return EXIT_OK


def _depth_files(path: Path, role: str) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise CliIOError(f"{path} does not exist")
    if (path / sio.MANIFEST_NAME).is_file():
        manifest = sio.read_manifest(path)
        key = "sim_depth" if role == "pred" else "gt_depth"
        files = [getattr(f, key) for f in manifest.frames]
        if any(f is None for f in files):
            raise ValidationError(f"manifest in {path} has frames without {key}")
        return [path / f for f in files]
    files = sorted(path.glob("*.pfm")) or sorted(path.glob("*.png"))
    if not files:
        raise CliIOError(f"no depth files in {path}")
    return files


def _read_depth(path: Path, scale_m: float) -> DepthMap:
    try:
        if path.suffix.lower() == ".pfm":
            return sio.read_pfm(path, DepthMap)
        return sio.read_depth_png16(path, scale_m)
    except OSError as e:
        raise CliIOError(f"cannot read {path}: {e}") from None


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"resize dims must be positive, got {text!r}")
    return h, w


def cmd_eval(args) -> int:
    preds = _depth_files(Path(args.pred), "pred")
    gts = _depth_files(Path(args.gt), "gt")
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} prediction files but {len(gts)} ground-truth files")
    reports = [
        depth_metrics(_read_depth(p, args.png_scale), _read_depth(g, args.png_scale), args.resize, args.delta_convention)
        for p, g in zip(preds, gts)
    ]
    report = mean_reports(reports).to_dict()
    report["n_images"] = len(reports)
    sio.dump_json(report, args.out)
    return EXIT_OK


def _mat(v, shape, where):
    a = np.asarray(v, dtype=np.float64)
    if a.shape != shape:
        raise sio.ConfigError(where, f"expected shape {shape}, got {a.shape}")
    return a


def parse_pose_samples(data: dict) -> list[tuple[PoseSample, np.ndarray, np.ndarray]]:
    """``{"models": {id: {points, diameter, symmetric}}, "samples": [{model, R_gt, t_gt, R_est, t_est}]}``.

    A sample may inline ``points``/``diameter``/``symmetric`` instead of naming a model.
    """
    if not isinstance(data, dict):
        raise sio.ConfigError("$", "expected an object")
    unknown = set(data) - {"models", "samples"}
    if unknown:
        raise sio.ConfigError(sorted(unknown)[0], "unknown key")
    models = data.get("models", {})
    out = []
    for i, s in enumerate(data.get("samples", [])):
        where = f"samples[{i}]"
        unknown = set(s) - {"model", "R_gt", "t_gt", "R_est", "t_est", "points", "diameter", "symmetric"}
        if unknown:
            raise sio.ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown key")
        if "model" in s:
            if s["model"] not in models:
                raise sio.ConfigError(f"{where}.model", f"unknown model {s['model']!r}")
            model = models[s["model"]]
        else:
            model = s
        try:
            pts = np.asarray(model["points"], dtype=np.float64)
            gt = PoseSample(
                _mat(s["R_gt"], (3, 3), f"{where}.R_gt"),
                _mat(s["t_gt"], (3,), f"{where}.t_gt"),
                pts,
                float(model["diameter"]),
                bool(model.get("symmetric", False)),
            )
        except KeyError as e:
            raise sio.ConfigError(where, f"missing field {e.args[0]!r}") from None
        except ValidationError as e:
            if isinstance(e, sio.ConfigError):
                raise
            raise sio.ConfigError(where, str(e)) from None
        r_est = _mat(s.get("R_est"), (3, 3), f"{where}.R_est")
        t_est = _mat(s.get("t_est"), (3,), f"{where}.t_est")
        out.append((gt, r_est, t_est))
    return out


def cmd_pose_eval(args) -> int:
    samples = parse_pose_samples(sio.load_json(args.samples))
    sio.dump_json(pose_report(samples, not args.no_adds_for_symmetric), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="kernel thread cap (default: $RASIM_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stereosim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def scene_opts(sp):
        sp.add_argument("--scene", required=True)
        sp.add_argument("--rig", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--sequence", default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--mode", choices=("auto", "ir", "rgb"), default="auto")
        sp.add_argument("--threshold", type=float, default=2.0, help="IR/RGB switch distance in meters")
        sp.add_argument("--projector", default=None, help="projector JSON, or 'none' to disable")
        sp.add_argument("--depth-png-scale", type=float, default=CLI_DEPTH_PNG_SCALE, help="meters per PNG16 unit")

    sp = sub.add_parser("render", parents=[common], help="render stereo frames and ground-truth depth")
    scene_opts(sp)
    sp.add_argument("--frames", type=int, default=None)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("match", parents=[common], help="run the stereo matcher on an image pair")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--rig", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--depth-png-scale", type=float, default=CLI_DEPTH_PNG_SCALE)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("simulate", parents=[common], help="render and match every frame of a sequence")
    scene_opts(sp)
    sp.add_argument("--config", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("eval", parents=[common], help="depth metrics of predictions against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--resize", type=_parse_size, default=None, help="HxW, e.g. 144x256")
    sp.add_argument("--out", required=True)
    sp.add_argument("--png-scale", type=float, default=CLI_DEPTH_PNG_SCALE, help="meters per unit for PNG16 inputs")
    sp.add_argument("--delta-convention", choices=("lt", "le"), default="lt")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pose-eval", parents=[common], help="ADD / ADD-S accuracy and AUC")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-adds-for-symmetric", action="store_true")
    sp.set_defaults(func=cmd_pose_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        set_threads(args.threads)
        if getattr(args, "frames", None) is not None and args.frames < 1:
            raise ValidationError(f"--frames must be >= 1, got {args.frames}")
        return args.func(args)
    except (CliIOError, sio.FormatError, OSError) as e:
        logger.error("%s", e)
        return EXIT_IO
    except (ValidationError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
