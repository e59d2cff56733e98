"""Command line entry point ``scene-fusion``."""

import argparse
import os
import sys
from typing import Any, List, Optional, Sequence  # pylint: disable=unused-import

import simplejson as json
import structlog

from .exceptions import ConfigError, SceneFusionException, StageError
from .fusion import FusionConfig, FusionPipeline, load_recurrent_state, novel_state, save_recurrent_state
from .geom import Camera, RigidTransform
from .harness import (
    ExperimentConfig,
    ExperimentRunner,
    RunManifest,
    evaluate_test_state,
    stage_table,
    write_csv,
)
from .image_io import write_image, write_ppm
from .render import DEFAULT_BACKGROUND, render
from .scene import load_scene, save_scene
from .synth import generate, load_generation_spec, load_ground_truth, save_ground_truth
from .utils import format_scores

EXPERIMENTS = ("ablation", "noise", "scaling", "lambda", "voxel")
MANIFEST_FILE = "manifest.json"
EXIT_FAILURE = 2


def configure_logging(verbose=False):
    # type: (bool) -> None
    """Key/value console logs on stderr; debug events only with ``verbose``."""
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M.%S"),
            structlog.processors.format_exc_info,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(10 if verbose else 20),
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
        cache_logger_on_first_use=False,
    )


def _load_json(path):
    # type: (Optional[str]) -> Any
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as error:
            raise ConfigError(f"{path}: {error}", original_exc=error)  # pylint: disable=raise-missing-from


def _final_state_dir(run):
    # type: (str) -> str
    return os.path.join(run, "final")


def _run_background(manifest):
    # type: (RunManifest) -> tuple
    return tuple(manifest.data["config"].get("fusion", {}).get("background", DEFAULT_BACKGROUND))


def cmd_generate(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    spec, rig, script = load_generation_spec(_load_json(args.spec) if args.spec else {"scenario": "move"})
    gt = generate(spec, rig, script, args.seed)
    save_ground_truth(gt, args.out)
    pipeline.log("info", "generate", states=len(gt.scenes), views=len(gt.cameras), out=args.out)
    return 0


def cmd_fuse(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    config = ExperimentConfig.from_dict(_load_json(args.config)) if args.config else ExperimentConfig()
    cfg = config.fusion_config()
    gt = load_ground_truth(args.data)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(
        os.path.join(args.out, MANIFEST_FILE),
        {"data": os.path.abspath(args.data), "experiment": config.to_dict(), "fusion": cfg.to_dict()},
    )
    runner = ExperimentRunner(config, pipeline)
    run = runner.run_sequence(gt, cfg, config.seeds[0], manifest=manifest)
    for state, rs in enumerate(run.states):
        save_recurrent_state(rs, os.path.join(args.out, "states", str(state)))
    save_recurrent_state(run.states[-1], _final_state_dir(args.out))
    write_csv(os.path.join(args.out, "metrics.csv"), run.rows)
    manifest.data["stage_seconds"] = stage_table(run.results)
    manifest.data["test"] = {"psnr": run.test_psnr, "ssim": run.test_ssim}
    manifest.flush()
    pipeline.log("info", "fuse", states=len(run.states), test_psnr=run.test_psnr, out=args.out)
    return 0


def cmd_eval(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    manifest = RunManifest.load(os.path.join(args.run, MANIFEST_FILE))
    rs = load_recurrent_state(_final_state_dir(args.run))
    gt = load_ground_truth(manifest.data["config"]["data"])
    background = _run_background(manifest)
    if not args.test_state:
        raise ConfigError("Only --test-state evaluation is available.")
    value, structural = evaluate_test_state(rs, gt, background)
    print(format_scores({"psnr": value, "ssim": structural}))
    pipeline.log("info", "eval", psnr=value, ssim=structural)
    return 0


def cmd_manipulate(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    rs = load_recurrent_state(_final_state_dir(args.run))
    background = _run_background(RunManifest.load(os.path.join(args.run, MANIFEST_FILE)))
    if len(args.transform) != 16:
        raise ConfigError(f"--transform needs 16 values, got {len(args.transform)}.")
    scene = novel_state(rs, args.object, RigidTransform.from_list(args.transform))
    out = args.out or os.path.join(args.run, "manipulated")
    os.makedirs(out, exist_ok=True)
    save_scene(scene, os.path.join(out, "scene.gsc"))
    for view, cam in enumerate(rs.cameras[rs.state_index]):
        write_ppm(os.path.join(out, f"view_{view}.ppm"), render(scene, cam, background)[0])
    pipeline.log("info", "manipulate", object_id=args.object, out=out)
    return 0


def cmd_sweep(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    config = ExperimentConfig.from_dict(_load_json(args.config)) if args.config else ExperimentConfig()
    runner = ExperimentRunner(config, pipeline)
    os.makedirs(args.out, exist_ok=True)
    if args.experiment == "ablation":
        rows = runner.run_ablation()
    elif args.experiment == "noise":
        rows = runner.run_noise_sweep()
    elif args.experiment == "scaling":
        rows = runner.run_scaling()
    else:
        # lambda and voxel share one call
        rows = runner.run_sweeps()[args.experiment]
    path = os.path.join(args.out, f"{args.experiment}.csv")
    write_csv(path, rows)
    pipeline.log("info", "sweep", experiment=args.experiment, rows=len(rows), out=path)
    return 0


def cmd_render(args, pipeline):
    # type: (argparse.Namespace, FusionPipeline) -> int
    scene = load_scene(args.scene)
    data = _load_json(args.camera)
    cams = [Camera.from_dict(cam) for cam in (data if isinstance(data, list) else [data])]
    background = tuple(args.background)
    outputs = []
    for view, cam in enumerate(cams):
        root, extension = os.path.splitext(args.out)
        path = args.out if len(cams) == 1 else f"{root}_{view}{extension or '.ppm'}"
        write_image(path, render(scene, cam, background)[0])
        outputs.append(path)
    pipeline.log("info", "render", views=len(cams), out=outputs)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # type: (str) -> Any
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    # type: () -> argparse.ArgumentParser
    parser = _Parser(prog="scene-fusion", description="Recurrent Gaussian scene fusion.")
    parser.add_argument("--verbose", action="store_true", help="log debug events")
    commands = parser.add_subparsers(dest="command", required=True)

    generate_parser = commands.add_parser("generate", help="write a synthetic ground-truth sequence")
    generate_parser.add_argument("--spec", help="JSON generation spec, e.g. {\"scenario\": \"move\"}")
    generate_parser.add_argument("--seed", type=int, default=0)
    generate_parser.add_argument("--out", required=True)
    generate_parser.set_defaults(handler=cmd_generate)

    fuse_parser = commands.add_parser("fuse", help="fuse every state of a ground-truth directory")
    fuse_parser.add_argument("--data", required=True)
    fuse_parser.add_argument("--config", help="JSON ExperimentConfig")
    fuse_parser.add_argument("--out", required=True)
    fuse_parser.set_defaults(handler=cmd_fuse)

    eval_parser = commands.add_parser("eval", help="score a fused run")
    eval_parser.add_argument("--run", required=True)
    eval_parser.add_argument("--test-state", action="store_true")
    eval_parser.set_defaults(handler=cmd_eval)

    manipulate_parser = commands.add_parser("manipulate", help="move one object of a fused run")
    manipulate_parser.add_argument("--run", required=True)
    manipulate_parser.add_argument("--object", type=int, required=True)
    manipulate_parser.add_argument("--transform", type=float, nargs="+", required=True)
    manipulate_parser.add_argument("--out")
    manipulate_parser.set_defaults(handler=cmd_manipulate)

    sweep_parser = commands.add_parser("sweep", help="run one experiment table")
    sweep_parser.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    sweep_parser.add_argument("--config", help="JSON ExperimentConfig")
    sweep_parser.add_argument("--out", default=".")
    sweep_parser.set_defaults(handler=cmd_sweep)

    render_parser = commands.add_parser("render", help="render a scene file")
    render_parser.add_argument("--scene", required=True)
    render_parser.add_argument("--camera", required=True, help="JSON camera or list of cameras")
    render_parser.add_argument("--out", default="render.ppm", help="output image, .ppm or .png")
    render_parser.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    render_parser.set_defaults(handler=cmd_render)
    return parser


def main(argv=None, pipeline=None):
    # type: (Optional[Sequence[str]], Optional[FusionPipeline]) -> int
    """Run one subcommand; scene-fusion errors exit with code 2."""
    args = build_parser().parse_args(argv)
    if pipeline is None:
        configure_logging(args.verbose)
        pipeline = FusionPipeline(FusionConfig(), category="cli")
    try:
        return args.handler(args, pipeline)
    except SceneFusionException as error:
        stage = error.stage if isinstance(error, StageError) else args.command
        sys.stderr.write(f"scene-fusion: [{stage}] {type(error).__name__}: {Exception.__str__(error)}\n")
        pipeline.log("error", f"{args.command}.failed", error_type=type(error).__name__, description=str(error))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
