"""Command-line entry point.

Subcommands: compose, pipeline, preview, metrics, synth, serve. Exit codes:
0 success, 1 validation or usage error, 2 I/O error. All randomness flows
from --seed. The MOTIONFORGE_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import metrics as metrics_mod
from . import pipeline as pipeline_mod
from . import scene as scene_mod
from . import trajectory as traj_mod
from .compose import MotionScript
from .compose import compose as compose_tensor
from .compose import read_tensor, render_preview, write_tensor
from .errors import MotionForgeError, MotionForgeIOError

log = logging.getLogger("motionforge")

DEFAULT_FRAMES = 24
DEFAULT_WIDTH = 704
DEFAULT_HEIGHT = 448


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="motionforge", description=__doc__)
    parser.add_argument("--config", help="JSON file with flag overrides")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="scene manifest + script -> control tensor")
    p.add_argument("--scene", required=True)
    p.add_argument("--script")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=DEFAULT_FRAMES)

    p = sub.add_parser("pipeline", help="scene + tracks + segments -> tensor + provenance")
    p.add_argument("--scene")
    p.add_argument("--tracks")
    p.add_argument("--out")
    p.add_argument("--batch", help="batch manifest: process several scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold-ratio", type=float, default=pipeline_mod.DEFAULT_DYNAMIC_RATIO)

    p = sub.add_parser("preview", help="tensor -> per-frame point JSON / raster PNG")
    p.add_argument("--tensor", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--raster", action="store_true")

    p = sub.add_parser("metrics", help="tracks vs reference -> report")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref")
    p.add_argument("--mask")
    p.add_argument("--threshold-px", type=float, default=1.0)
    p.add_argument("--out")
    p.add_argument("--csv")

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="translate", choices=sorted(pipeline_mod.PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int)

    p = sub.add_parser("serve", help="start the HTTP authoring service")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--state-dir")
    p.add_argument("--scene-dir", help="directory manifests may reference files from")
    p.add_argument("--ui-dir", help="serve the built browser client from this directory")
    return parser


def _apply_config_overrides(args: argparse.Namespace):
    if not args.config:
        return
    doc = json.loads(Path(args.config).read_text())
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr):
            setattr(args, attr, value)
        else:
            raise _UsageError(f"config key {key!r} is not a flag of this subcommand")


def _cmd_compose(args) -> int:
    scene, masks, categories = scene_mod.load_manifest(args.scene)
    partition = scene_mod.build_partition(scene, masks, categories)
    if args.script:
        script = MotionScript.from_json(json.loads(Path(args.script).read_text()))
    else:
        script = MotionScript.identity(args.frames)
    tensor = compose_tensor(scene, partition, script)
    write_tensor(tensor, args.out)
    log.info("wrote %s (%d frames, %dx%d)", args.out, tensor.frame_count,
             tensor.width, tensor.height)
    return 0


def _cmd_pipeline(args) -> int:
    if args.batch:
        summaries = pipeline_mod.process_batch(args.batch)
        log.info("processed %d scenes", len(summaries))
        return 0
    if not (args.scene and args.tracks and args.out):
        raise _UsageError("pipeline needs --scene, --tracks and --out (or --batch)")
    scene, masks, _ = scene_mod.load_manifest(args.scene)
    camera_traj = traj_mod.read_tracks(args.tracks)
    if camera_traj.point_count != scene.valid_count:
        raise MotionForgeError(
            f"track file has {camera_traj.point_count} points but the scene "
            f"has {scene.valid_count} valid pixels")
    tensor, provenance = pipeline_mod.build_training_sample(
        scene, masks, camera_traj, rng_seed=args.seed,
        threshold_ratio=args.threshold_ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(tensor, out / "sample.ctrl")
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True))
    return 0


def _cmd_preview(args) -> int:
    tensor = read_tensor(args.tensor)
    frame = render_preview(tensor, args.frame, stride=args.stride,
                                       raster=args.raster)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"frame{args.frame:04d}.json").write_text(
        json.dumps(frame.points, sort_keys=True))
    if args.raster:
        from PIL import Image

        Image.fromarray(frame.raster).save(out / f"frame{args.frame:04d}.png")
    return 0


def _tracks_as_2d(traj: traj_mod.TrajectoryField):
    return traj.positions[:, :, :2], traj.valid


def _cmd_metrics(args) -> int:
    gen, gen_valid = _tracks_as_2d(traj_mod.read_tracks(args.gen))
    reference = None
    valid = gen_valid
    if args.ref:
        ref, ref_valid = _tracks_as_2d(traj_mod.read_tracks(args.ref))
        reference = ref
        valid = gen_valid & ref_valid
    mask = scene_mod.read_mask(args.mask) if args.mask else None
    report = metrics_mod.evaluate(gen, reference, valid, mask,
                                  threshold_px=args.threshold_px)
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload)
        if args.csv:
            report.write_csv(args.csv)
    else:
        print(payload)
    return 0


def _cmd_synth(args) -> int:
    config = pipeline_mod.PRESETS[args.preset]
    config = pipeline_mod.SyntheticConfig.from_json(config.to_json())  # deep copy
    config.seed = args.seed
    if args.width:
        config.width = args.width
    if args.height:
        config.height = args.height
    if args.frames:
        config.frame_count = args.frames
    syn = pipeline_mod.generate_synthetic(config)
    pipeline_mod.write_synthetic_files(syn, args.out)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(state_dir=args.state_dir, scene_dir=args.scene_dir,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "compose": _cmd_compose,
    "pipeline": _cmd_pipeline,
    "preview": _cmd_preview,
    "metrics": _cmd_metrics,
    "synth": _cmd_synth,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MOTIONFORGE_LOG", "WARNING").upper())
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_overrides(args)
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MotionForgeIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MotionForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
