"""Experiment runners over synthetic ground truth.

Every runner is deterministic given its :class:`ExperimentConfig`; tables are
lists of namedtuples that :func:`write_csv` stores with exact float text.
"""

import csv
import time
from collections import namedtuple
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
import simplejson as json

from .exceptions import ConfigError, EmptyMask
from .fusion import (
    FusionConfig,
    FusionPipeline,
    FusionResult,
    Observations,
    RecurrentState,
    reconstruct_state,
    replay_render,
    novel_state,
)
from .geom import Camera, RigidTransform, compose, pose_error, se3_exp
from .losses import ssim
from .metrics import MetricsRow, mean_finite, psnr
from .register import refine_pose
from .render import RenderPass
from .scene import GaussianScene, apply_transform
from .synth import GroundTruth, generate, gt_proposals, scenario
from .utils import make_rng

NOISE_REFERENCE_EXTENT = 10.0
LAMBDA_SWEEP = (0.2, 0.4, 0.5, 0.6, 0.8)
VOXEL_SWEEP = (0.5, 0.1, 0.05, 0.01)
NOISE_LEVELS = ((0.0, 0.0), (5.0, 0.25), (10.0, 0.5))

# Desk-scale schedule; the library defaults keep the full-length schedule.
HARNESS_FUSION = {
    "iterations": 300,
    "quick_iterations": 200,
    "refine_iterations": 200,
    "seed_count": 2000,
    "densify_interval": 100,
}

__all__ = [
    "AblationRow",
    "ExperimentConfig",
    "ExperimentRunner",
    "MetricsRow",
    "NoiseRow",
    "RunManifest",
    "SequenceRun",
    "SweepRow",
    "evaluate_test_state",
    "evaluate_views",
    "psnr",
    "read_csv",
    "run_ablation",
    "run_noise_sweep",
    "run_scaling",
    "run_sequence",
    "run_sweeps",
    "write_csv",
]

AblationRow = namedtuple(
    "AblationRow", ["variant", "psnr", "ssim", "wall_time_s", "optimized_primitives", "peak_primitives"]
)
NoiseRow = namedtuple(
    "NoiseRow",
    ["seed", "noise_deg", "noise_m", "initial_psnr", "refined_psnr", "rotation_error_deg", "translation_error_m"],
)
SweepRow = namedtuple("SweepRow", ["parameter", "value", "psnr", "ssim", "wall_time_s", "peak_voxels"])
SequenceRun = namedtuple("SequenceRun", ["states", "rows", "results", "test_psnr", "test_ssim", "replay_psnr"])
SequenceRun.__doc__ = """Outcome of :func:`run_sequence`.

``replay_psnr[k]`` holds, after fusing state ``k``, the PSNR of state-0 replay
renders against ground-truth state-0 images.
"""


class ExperimentConfig(object):
    """What to run and with which overrides.

    :param str scenario: synthetic scenario name
    :param seeds: seeds, one run each
    :param fusion: FusionConfig overrides applied over :data:`HARNESS_FUSION`
    :param int base_iterations: state-0 reconstruction steps
    :param float init_jitter: std of the GT position jitter of the state-0 init
    """

    FIELDS = (
        "scenario",
        "seeds",
        "lambda_r_values",
        "voxel_sizes",
        "noise_levels",
        "state_counts",
        "fusion",
        "base_iterations",
        "init_jitter",
        "primitive_count",
        "noise_trials",
    )

    def __init__(
        self,
        scenario="move",  # type: str
        seeds=(0,),  # type: Sequence[int]
        lambda_r_values=LAMBDA_SWEEP,  # type: Sequence[float]
        voxel_sizes=VOXEL_SWEEP,  # type: Sequence[float]
        noise_levels=NOISE_LEVELS,  # type: Sequence[Sequence[float]]
        state_counts=(2, 3, 4, 5, 6),  # type: Sequence[int]
        fusion=None,  # type: Optional[Dict[str, Any]]
        base_iterations=300,  # type: int
        init_jitter=0.01,  # type: float
        primitive_count=200,  # type: int
        noise_trials=1,  # type: int
    ):
        # type: (...) -> None
        self.scenario = scenario
        self.seeds = tuple(int(seed) for seed in seeds)
        self.lambda_r_values = tuple(float(value) for value in lambda_r_values)
        self.voxel_sizes = tuple(float(value) for value in voxel_sizes)
        self.noise_levels = tuple((float(deg), float(m)) for deg, m in noise_levels)
        self.state_counts = tuple(int(count) for count in state_counts)
        self.fusion = dict(fusion or {})
        self.base_iterations = int(base_iterations)
        self.init_jitter = float(init_jitter)
        self.primitive_count = int(primitive_count)
        self.noise_trials = int(noise_trials)
        for name in ("seeds", "lambda_r_values", "voxel_sizes", "noise_levels", "state_counts"):
            if not getattr(self, name):
                raise ConfigError(f"ExperimentConfig.{name} must not be empty.")
        self.fusion_config()

    def fusion_config(self, **overrides):
        # type: (**Any) -> FusionConfig
        data = dict(HARNESS_FUSION)
        data.update(self.fusion)
        data.update(overrides)
        return FusionConfig.from_dict(data)

    def to_dict(self):
        # type: () -> Dict[str, Any]
        data = {name: getattr(self, name) for name in self.FIELDS}
        for name in ("seeds", "lambda_r_values", "voxel_sizes", "state_counts"):
            data[name] = list(data[name])
        data["noise_levels"] = [list(level) for level in self.noise_levels]
        return data

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> ExperimentConfig
        unknown = sorted(set(data) - set(cls.FIELDS))
        if unknown:
            raise ConfigError(f"Unknown ExperimentConfig keys: {', '.join(unknown)}.")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        # type: (str) -> ExperimentConfig
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


class RunManifest(object):
    """JSON run manifest; every :meth:`append` rewrites the file."""

    def __init__(self, path, config=None):
        # type: (Optional[str], Optional[Dict[str, Any]]) -> None
        self.path = path
        self.data = {"config": config or {}, "records": []}  # type: Dict[str, Any]

    @property
    def records(self):
        # type: () -> List[Dict[str, Any]]
        return self.data["records"]

    def append(self, record):
        # type: (Dict[str, Any]) -> None
        self.records.append(record)
        self.flush()

    def record_fusion(self, state, result):
        # type: (int, FusionResult) -> None
        for stage in result.stages:
            self.records.append(
                {"state": state, "stage": stage.stage, "duration_s": stage.duration_s, **stage.details}
            )
        report = result.loss_report
        self.append(
            {
                "state": state,
                "stage": "summary",
                "primitives": len(result.state.scene),
                "optimized": int(result.optimized.sum()),
                "match": result.match.to_dict(),
                "alignments": {str(k): v.to_dict() for k, v in sorted(result.alignments.items())},
                "final_loss": report.total[-1] if len(report) else None,
                "psnr": result.metrics.psnr,
            }
        )

    def flush(self):
        # type: () -> None
        if self.path is None:
            return
        with open(self.path, "w", encoding="utf-8") as handle:
            json.dump(self.data, handle, indent=2, sort_keys=True, ignore_nan=True)

    @classmethod
    def load(cls, path):
        # type: (str) -> RunManifest
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        manifest = cls(path, data.get("config"))
        manifest.data["records"] = data.get("records", [])
        for key, value in data.items():
            manifest.data.setdefault(key, value)
        return manifest


def _format(value):
    # type: (Any) -> str
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    if value is None:
        return ""
    return str(value)


def _parse(text):
    # type: (str) -> Any
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    if text.startswith("{"):
        return json.loads(text)
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def write_csv(path, rows):
    # type: (str, Sequence[Any]) -> None
    """Write namedtuple rows; floats keep their shortest exact repr."""
    if not rows:
        raise ValueError("Nothing to write.")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(rows[0]._fields)
        for row in rows:
            writer.writerow([_format(value) for value in row])


def read_csv(path, row_type=None):
    # type: (str, Optional[Callable[..., Any]]) -> List[Any]
    """Parse a table written by :func:`write_csv`, as dicts or as ``row_type``."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [dict(zip(header, (_parse(value) for value in line))) for line in reader]
    if row_type is None:
        return rows
    return [row_type(**row) for row in rows]


def evaluate_views(scene, cams, targets, background=(0.0, 0.0, 0.0), masks=None):
    # type: (GaussianScene, Sequence[Camera], Sequence[np.ndarray], Any, Optional[Sequence[np.ndarray]]) -> Tuple[float, float]
    """Mean PSNR and SSIM of ``scene`` renders against ``targets``.

    With ``masks`` only PSNR is restricted; views whose mask is empty are skipped.
    """
    psnrs, ssims = [], []
    for index, (cam, target) in enumerate(zip(cams, targets)):
        image = RenderPass(scene, cam, background).image
        try:
            psnrs.append(psnr(image, target, None if masks is None else masks[index]))
        except EmptyMask:
            continue
        ssims.append(ssim(image, target))
    if not psnrs:
        raise EmptyMask("No view has a non-empty evaluation mask.")
    return mean_finite(psnrs), float(np.mean(ssims))


def evaluate_test_state(rs, gt, background=(0.0, 0.0, 0.0)):
    # type: (RecurrentState, GroundTruth, Any) -> Tuple[float, float]
    """Move objects by the ground-truth test transforms and score the test views.

    Objects are moved with :func:`novel_state`; ids unknown to ``rs`` are skipped.
    """
    for object_id, transform in sorted(gt.test_transforms.items()):
        if object_id in rs.object_ids():
            rs = RecurrentState(novel_state(rs, object_id, transform), rs.cameras, grid_origin=rs.grid_origin)
    scene = rs.scene
    return evaluate_views(scene, gt.test_cameras, gt.test_images, background)


def _observations(gt, state, cfg):
    # type: (GroundTruth, int, FusionConfig) -> Observations
    if cfg.mask_mode == "proposals":
        return Observations(gt.images[state], gt.cameras, gt_proposals(gt, state - 1), gt_proposals(gt, state))
    return Observations(gt.images[state], gt.cameras)


class ExperimentRunner(object):
    """Runs experiments through one :class:`FusionPipeline`.

    :param ExperimentConfig config: experiment description
    :param FusionPipeline pipeline: (optional) pipeline carrying logger, statsd and ddtrace
    """

    def __init__(self, config=None, pipeline=None):
        # type: (Optional[ExperimentConfig], Optional[FusionPipeline]) -> None
        self.config = config or ExperimentConfig()
        self.pipeline = pipeline or FusionPipeline(self.config.fusion_config(), category="harness")

    def log(self, level, event, **kwargs):
        # type: (str, str, **Any) -> None
        self.pipeline.log(level, f"experiment.{event}", **kwargs)

    def ground_truth(self, seed, name=None):
        # type: (int, Optional[str]) -> GroundTruth
        spec, rig, script = scenario(name or self.config.scenario, self.config.primitive_count)
        return generate(spec, rig, script, seed)

    def base_state(self, gt, cfg, seed):
        # type: (GroundTruth, FusionConfig, int) -> RecurrentState
        """State 0 reconstructed from ground truth with jittered positions."""
        rng = make_rng(seed)
        init = gt.scenes[0].copy()
        init.positions = init.positions + rng.normal(0.0, self.config.init_jitter, size=init.positions.shape)
        scene = reconstruct_state(gt.images[0], gt.cameras, init, self.config.base_iterations, cfg, rng)
        return RecurrentState.initial(scene, gt.cameras, cfg.voxel_size)

    def run_sequence(self, gt, cfg=None, seed=0, states=None, manifest=None, rs=None):
        # type: (GroundTruth, Optional[FusionConfig], int, Optional[int], Optional[RunManifest], Optional[RecurrentState]) -> SequenceRun
        """Fuse states ``1..states-1`` of ``gt`` one after another.

        Rows score each fused state on the held-out test cameras against the
        ground-truth scene of that state.
        """
        cfg = cfg or self.config.fusion_config()
        count = len(gt.scenes) if states is None else min(states, len(gt.scenes))
        started = time.perf_counter()
        rs = rs or self.base_state(gt, cfg, seed)
        base_seconds = time.perf_counter() - started
        reference = [RenderPass(gt.scenes[0], cam, cfg.background).image for cam in gt.cameras]
        held_out = self._held_out(gt, 0, cfg)
        value, structural = evaluate_views(rs.scene, gt.test_cameras, held_out, cfg.background)
        rows = [
            MetricsRow(1, value, structural, base_seconds, len(rs.scene), 0, {"reconstruct": base_seconds})
        ]
        replay = [self._replay_psnr(rs, reference, cfg)]
        history = [rs]
        results = []
        for state in range(1, count):
            result = self.pipeline.fuse(rs, _observations(gt, state, cfg), cfg)
            rs = result.state
            results.append(result)
            history.append(rs)
            if manifest is not None:
                manifest.record_fusion(state, result)
            value, structural = evaluate_views(
                rs.scene, gt.test_cameras, self._held_out(gt, state, cfg), cfg.background
            )
            rows.append(result.metrics._replace(psnr=value, ssim=structural))
            replay.append(self._replay_psnr(rs, reference, cfg))
            self.log("info", "state", state=state, psnr=value, replay_psnr=replay[-1])
        test_psnr, test_ssim = evaluate_test_state(rs, gt, cfg.background)
        return SequenceRun(history, rows, results, test_psnr, test_ssim, replay)

    @staticmethod
    def _held_out(gt, state, cfg):
        # type: (GroundTruth, int, FusionConfig) -> List[np.ndarray]
        return [RenderPass(gt.scenes[state], cam, cfg.background).image for cam in gt.test_cameras]

    @staticmethod
    def _replay_psnr(rs, reference, cfg):
        # type: (RecurrentState, List[np.ndarray], FusionConfig) -> float
        images = replay_render(rs, 0, cfg.background)
        return mean_finite(psnr(image, target) for image, target in zip(images, reference))

    def run_ablation(self):
        # type: () -> List[AblationRow]
        """R, R+N and R+N+V variants of the configured scenario."""
        variants = (
            ("R", False, False),
            ("R+N", True, False),
            ("R+N+V", True, True),
        )
        rows = []
        for seed in self.config.seeds:
            gt = self.ground_truth(seed)
            base_cfg = self.config.fusion_config()
            base = self.base_state(gt, base_cfg, seed)
            for name, completion, guided in variants:
                cfg = self.config.fusion_config(region_completion=completion, visibility_guided=guided)
                run = self.run_sequence(gt, cfg, seed, rs=base)
                fused = run.rows[1:]
                rows.append(
                    AblationRow(
                        variant=name,
                        psnr=run.test_psnr,
                        ssim=run.test_ssim,
                        wall_time_s=float(sum(row.wall_time_s for row in fused)),
                        optimized_primitives=int(sum(result.optimized.sum() for result in run.results)),
                        peak_primitives=int(max(row.peak_primitives for row in run.rows)),
                    )
                )
                self.log("info", "ablation", variant=name, seed=seed, psnr=run.test_psnr)
        return rows

    def run_noise_sweep(self):
        # type: () -> List[NoiseRow]
        """Refine noisy ground-truth poses of the first moved object of step 1.

        Rotation noise is an angle about a random axis; translation noise is a
        random direction scaled by the scene extent over a 10 m reference.
        """
        rows = []
        for seed in self.config.seeds:
            gt = self.ground_truth(seed)
            cfg = self.config.fusion_config()
            rs = self.base_state(gt, cfg, seed)
            object_id, truth = sorted(gt.transforms[0].items())[0]
            subset = rs.membership(object_id)
            targets = gt.scenes[1].positions[gt.scenes[1].instance_ids == object_id]
            masks = gt.masks[1][object_id]
            ratio = rs.scene.extent() / NOISE_REFERENCE_EXTENT
            rng = make_rng(seed)
            for degrees, meters in self.config.noise_levels:
                for _ in range(self.config.noise_trials):
                    axis = rng.normal(size=3)
                    axis /= np.linalg.norm(axis)
                    direction = rng.normal(size=3)
                    direction /= np.linalg.norm(direction)
                    noise = se3_exp(
                        np.concatenate([meters * ratio * direction, np.radians(degrees) * axis])
                    )
                    init = compose(noise, truth)
                    result = refine_pose(
                        rs.scene, subset, init, gt.images[1], gt.cameras, targets, cfg.refine, None, cfg.background
                    )
                    initial = self._object_psnr(rs.scene, subset, init, gt, masks, cfg)
                    refined = self._object_psnr(rs.scene, subset, result.t_fine, gt, masks, cfg)
                    rotation_error, translation_error = pose_error(result.t_fine, truth)
                    rows.append(
                        NoiseRow(seed, degrees, meters, initial, refined, rotation_error, translation_error)
                    )
                    self.log("info", "noise", seed=seed, noise_deg=degrees, initial=initial, refined=refined)
        return rows

    @staticmethod
    def _object_psnr(scene, subset, transform, gt, masks, cfg):
        # type: (GaussianScene, Any, RigidTransform, GroundTruth, List[np.ndarray], FusionConfig) -> float
        posed = apply_transform(scene, subset, transform)
        return evaluate_views(posed, gt.cameras, gt.images[1], cfg.background, masks)[0]

    def run_scaling(self):
        # type: () -> List[MetricsRow]
        """Fuse the long scenario state by state and keep one row per state."""
        seed = self.config.seeds[0]
        gt = self.ground_truth(seed, "long")
        states = max(self.config.state_counts)
        return self.run_sequence(gt, self.config.fusion_config(), seed, states).rows

    def run_sweeps(self):
        # type: () -> Dict[str, List[SweepRow]]
        """Replay weight and voxel size grids."""
        seed = self.config.seeds[0]
        gt = self.ground_truth(seed)
        base_cfg = self.config.fusion_config()
        base = self.base_state(gt, base_cfg, seed)
        tables = {"lambda": [], "voxel": []}  # type: Dict[str, List[SweepRow]]
        for parameter, key, values in (
            ("lambda", "lambda_r", self.config.lambda_r_values),
            ("voxel", "voxel_size", self.config.voxel_sizes),
        ):
            for value in values:
                cfg = self.config.fusion_config(**{key: value})
                start = base
                if key == "voxel_size":
                    start = RecurrentState.initial(base.scene, gt.cameras, value)
                run = self.run_sequence(gt, cfg, seed, rs=start)
                tables[parameter].append(
                    SweepRow(
                        parameter=key,
                        value=value,
                        psnr=run.test_psnr,
                        ssim=run.test_ssim,
                        wall_time_s=float(sum(row.wall_time_s for row in run.rows[1:])),
                        peak_voxels=int(max(row.peak_voxels for row in run.rows)),
                    )
                )
                self.log("info", "sweep", parameter=key, value=value, psnr=run.test_psnr)
        return tables


def stage_table(results):
    # type: (Sequence[FusionResult]) -> Dict[str, float]
    """Total seconds per stage over several fusion steps."""
    totals = {}  # type: Dict[str, float]
    for result in results:
        for stage in result.stages:
            totals[stage.stage] = totals.get(stage.stage, 0.0) + stage.duration_s
    return totals


def run_sequence(gt, cfg=None, seed=0, states=None, manifest=None):
    # type: (GroundTruth, Optional[FusionConfig], int, Optional[int], Optional[RunManifest]) -> SequenceRun
    return ExperimentRunner().run_sequence(gt, cfg, seed, states, manifest)


def run_ablation(cfg=None):
    # type: (Optional[ExperimentConfig]) -> List[AblationRow]
    return ExperimentRunner(cfg).run_ablation()


def run_noise_sweep(cfg=None):
    # type: (Optional[ExperimentConfig]) -> List[NoiseRow]
    return ExperimentRunner(cfg).run_noise_sweep()


def run_scaling(cfg=None):
    # type: (Optional[ExperimentConfig]) -> List[MetricsRow]
    return ExperimentRunner(cfg).run_scaling()


def run_sweeps(cfg=None):
    # type: (Optional[ExperimentConfig]) -> Dict[str, List[SweepRow]]
    return ExperimentRunner(cfg).run_sweeps()

