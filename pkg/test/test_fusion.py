"""Test the recurrent fusion pipeline."""

import os
from typing import Any, Callable
from unittest.mock import ANY, Mock

import numpy as np
import pytest

from scene_fusion.exceptions import ConfigError, NoViews, StageError, UnknownObject, UnknownStateIndex
from scene_fusion.fusion import (
    FusionConfig,
    FusionPipeline,
    LossReport,
    Observations,
    RecurrentState,
    lift_masks,
    load_recurrent_state,
    novel_state,
    reconstruct_state,
    replay_render,
    replay_scene,
    save_recurrent_state,
)
from scene_fusion.geom import RigidTransform, se3_exp, transform_point
from scene_fusion.protocols import Ddtrace, Statsd
from scene_fusion.render import RenderPass, render
from scene_fusion.scene import GaussianScene, apply_transform
from scene_fusion.synth import Action, StateScript, gt_change_mask, gt_proposals
from scene_fusion.utils import make_rng


@pytest.fixture
def pipeline(mocker):
    # type: (Mock) -> Callable
    def inner(**kwargs):
        # type: (**Any) -> FusionPipeline
        kwargs.setdefault("logger", mocker.Mock())
        kwargs.setdefault("statsd", mocker.MagicMock(spec_set=Statsd))
        return FusionPipeline(**kwargs)

    return inner


@pytest.fixture
def two_states(random_scene, camera):
    # type: (Callable, Callable) -> Callable
    def inner(added_at=None):
        # type: (Any) -> tuple
        scene0 = random_scene(count=8, labels=[0, 0, 0, 1, 1, 1, -1, -1])
        transform = se3_exp([0.1, 0.0, 0.05, 0.0, 0.2, 0.0])
        scene1 = apply_transform(scene0, scene0.membership(0), transform).copy(state_index=1)
        cams = [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
        rs = RecurrentState(
            scene1, {0: cams, 1: cams}, {0: [(1, transform)]}, added_at or {0: 0, 1: 0}
        )
        return scene0, rs, transform

    return inner


@pytest.mark.parametrize(
    "overrides",
    [
        {"lambda_s": 1.5},
        {"lambda_r": -0.1},
        {"iterations": 0},
        {"mask_mode": "boxes"},
        {"voxel_size": 0.0},
        {"ray_stride": 0},
        {"vote_fraction": 0.0},
        {"tau_match": 1.0},
        {"views_per_step": 0},
        {"background": (0.0, 0.0)},
    ],
)
def test_config_validation(overrides):
    # type: (dict) -> None
    with pytest.raises(ConfigError):
        FusionConfig(**overrides)


def test_config_dict_round_trip():
    # type: () -> None
    cfg = FusionConfig(lambda_r=0.3, refine_iterations=12, icp={"max_iterations": 7})
    restored = FusionConfig.from_dict(cfg.to_dict())
    assert restored.to_dict() == cfg.to_dict()
    assert restored.refine.iterations == 12
    assert restored.icp.max_iterations == 7
    assert cfg.replace(lambda_r=0.0).lambda_r == 0.0
    with pytest.raises(ConfigError):
        FusionConfig.from_dict({"lambda": 0.5})


def test_config_from_json(tmpdir):
    # type: (Any) -> None
    path = os.path.join(str(tmpdir), "fusion.json")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write('{"iterations": 5, "region_completion": false}')
    cfg = FusionConfig.from_json(path)
    assert cfg.iterations == 5
    assert not cfg.region_completion
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("{not json")
    with pytest.raises(ConfigError):
        FusionConfig.from_json(path)


def test_replay_at_current_state_is_identity(two_states):
    # type: (Callable) -> None
    _, rs, _ = two_states()
    assert replay_scene(rs, 1).equals(rs.scene)


def test_replay_moves_objects_back(two_states):
    # type: (Callable) -> None
    scene0, rs, _ = two_states()
    replayed = replay_scene(rs, 0)
    assert replayed.state_index == 0
    assert np.allclose(replayed.positions, scene0.positions, atol=1e-12)
    assert len(replay_render(rs, 0)) == 2


def test_replay_hides_later_objects(two_states):
    # type: (Callable) -> None
    _, rs, _ = two_states(added_at={0: 0, 1: 1})
    assert len(replay_scene(rs, 0)) == 5
    assert len(replay_scene(rs, 1)) == 8
    assert len(replay_scene(rs, 1, exclude=[1])) == 5


@pytest.mark.parametrize("index", [-1, 2])
def test_replay_unknown_state(two_states, index):
    # type: (Callable, int) -> None
    _, rs, _ = two_states()
    with pytest.raises(UnknownStateIndex):
        replay_scene(rs, index)


def test_novel_state(two_states):
    # type: (Callable) -> None
    _, rs, transform = two_states()
    moved = novel_state(rs, 1, transform)
    rows = rs.scene.instance_ids == 1
    assert np.allclose(moved.positions[rows], transform_point(transform, rs.scene.positions[rows]))
    assert np.array_equal(moved.positions[~rows], rs.scene.positions[~rows])
    assert novel_state(rs, 1, RigidTransform.identity()).equals(rs.scene)
    with pytest.raises(UnknownObject):
        novel_state(rs, 9, transform)


def test_next_object_id(two_states):
    # type: (Callable) -> None
    _, rs, _ = two_states()
    assert rs.next_object_id() == 2
    rs.added_at[5] = 1
    assert rs.next_object_id() == 6


def test_recurrent_state_round_trip(tmpdir, two_states):
    # type: (Any, Callable) -> None
    _, rs, transform = two_states()
    directory = os.path.join(str(tmpdir), "state")
    save_recurrent_state(rs, directory)
    loaded = load_recurrent_state(directory)
    assert loaded.scene.equals(rs.scene)
    assert loaded.added_at == rs.added_at
    assert sorted(loaded.cameras) == [0, 1]
    assert np.allclose(loaded.transform_history[0][0][1].matrix(), transform.matrix(), atol=1e-11)
    assert np.allclose(loaded.grid_origin, rs.grid_origin)


def test_loss_report_moving_average():
    # type: () -> None
    report = LossReport()
    for value in range(1, 101):
        report.record(value, 0.0, value)
    average = report.moving_average(50)
    assert len(average) == 51
    assert average[0] == pytest.approx(25.5)
    assert set(report.to_dict()) == {"l_curr", "l_replay", "total", "replay_index", "replay_grad_norm"}


def test_reconstruct_needs_two_views(camera):
    # type: (Callable) -> None
    with pytest.raises(NoViews):
        reconstruct_state([np.zeros((16, 16, 3))], [camera()])


def test_reconstruct_without_iterations(camera):
    # type: (Callable) -> None
    cams = [camera(), camera(eye=(3.0, 0.0, 0.0))]
    scene = reconstruct_state([np.zeros((16, 16, 3))] * 2, cams, iterations=0, cfg=FusionConfig(seed_count=50))
    assert len(scene) == 50


def test_reconstruct_reduces_loss(camera, random_scene):
    # type: (Callable, Callable) -> None
    cams = [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
    truth = random_scene(count=10, seed=2)
    images = [render(truth, cam)[0] for cam in cams]
    start = truth.copy()
    start.colors[:] = 0.5
    report = LossReport()
    cfg = FusionConfig(iterations=30, color_lr=0.02, lambda_s=0.0, densify_interval=1000)
    reconstruct_state(images, cams, start, cfg=cfg, loss_report=report)
    assert len(report) == 30
    assert report.total[-1] < report.total[0]


def test_lift_masks_ignores_occluded(camera):
    # type: (Callable) -> None
    cam = camera(focal=30.0)
    scene = GaussianScene(
        [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [0.3, 0.05], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.99, 0.9]
    )
    depth = RenderPass(scene, cam).depth_buffer
    mask = np.ones((16, 16), dtype=bool)
    assert lift_masks(scene, [mask], [cam], [depth], 0.5).tolist() == [0]
    assert lift_masks(scene, [None], [cam], [depth], 0.5).tolist() == []


def test_log_level_not_allowed(pipeline):
    # type: (Callable) -> None
    with pytest.raises(AttributeError):
        pipeline().log("trace", "fusion")


def test_log_prefix(pipeline):
    # type: (Callable) -> None
    fusion = pipeline(log_prefix="test")
    fusion.log("warning", "fusion.state", state=1)
    fusion.logger.warning.assert_called_once_with("test.fusion.state", state=1)


def test_run_stage_success(pipeline, mocker):
    # type: (Callable, Mock) -> None
    mock_ddtrace = mocker.MagicMock(spec_set=Ddtrace)
    fusion = pipeline(ddtrace=mock_ddtrace)
    records = []  # type: list
    result = fusion.run_stage("align", lambda: 3, records, ["state:1"], lambda value: {"objects": value})

    assert result == 3
    assert [record.stage for record in records] == ["align"]
    assert records[0].details == {"objects": 3}
    fusion.logger.info.assert_called_once_with(
        "scenefusion.fusion.align", duration_s=ANY, objects=3, state="1", stage="align"
    )
    fusion.statsd.increment.assert_called_once_with(
        "fusion.stage", tags=["state:1", "stage:align", "status:success"]
    )
    fusion.statsd.timed.assert_called_once_with(
        "fusion.align.duration", use_ms=True, tags=["state:1", "stage:align"]
    )
    mock_ddtrace.tracer.trace.assert_called_once_with("fusion.stage", service="scene_fusion", resource="align")


def test_run_stage_failure(pipeline):
    # type: (Callable) -> None
    fusion = pipeline()
    error = ValueError("boom")

    def fail():
        raise error

    with pytest.raises(StageError) as raised:
        fusion.run_stage("remove", fail, [], ["state:2"])

    assert raised.value.stage == "remove"
    assert raised.value.original_exc is error
    assert str(raised.value) == "[remove] boom"
    fusion.logger.exception.assert_called_once_with(
        "scenefusion.fusion.remove.failed",
        duration_s=ANY,
        description="boom",
        error_type="ValueError",
        state="2",
        stage="remove",
    )
    fusion.statsd.increment.assert_called_once_with(
        "fusion.stage", tags=["state:2", "stage:remove", "status:error"]
    )


def test_run_stage_keeps_inner_stage(pipeline):
    # type: (Callable) -> None
    def fail():
        raise StageError("inner", stage="align")

    with pytest.raises(StageError) as raised:
        pipeline().run_stage("outer", fail, [])
    assert raised.value.stage == "align"


def test_unchanged_state_short_circuits(pipeline, ground_truth):
    # type: (Callable, Callable) -> None
    gt = ground_truth()
    rs = RecurrentState.initial(gt.scenes[0], gt.cameras)
    result = pipeline().fuse(rs, Observations(gt.images[0], gt.cameras))

    assert [record.stage for record in result.stages] == ["render_prev", "change"]
    assert result.state.state_index == 1
    assert np.array_equal(result.state.scene.positions, gt.scenes[0].positions)
    assert result.match.moved == []
    assert not result.optimized.any()
    assert result.metrics.state_count == 2
    assert result.metrics.psnr == float("inf")
    assert sorted(result.state.cameras) == [0, 1]


def test_fuse_needs_views(pipeline, ground_truth):
    # type: (Callable, Callable) -> None
    gt = ground_truth()
    rs = RecurrentState.initial(gt.scenes[0], gt.cameras)
    with pytest.raises(NoViews):
        pipeline().fuse(rs, Observations([], []))


def test_failing_stage_is_named(pipeline, ground_truth):
    # type: (Callable, Callable) -> None
    gt = ground_truth()
    rs = RecurrentState.initial(gt.scenes[0], gt.cameras)
    cfg = FusionConfig(mask_mode="proposals", quick_iterations=1, seed_count=50)
    images = [np.zeros_like(image) for image in gt.images[0]]
    with pytest.raises(StageError) as raised:
        pipeline().fuse(rs, Observations(images, gt.cameras), cfg)
    assert raised.value.stage == "regions"
    assert isinstance(raised.value.original_exc, ConfigError)


def _optimize(fusion, scene, cams, images, cfg, trainable):
    # type: (FusionPipeline, GaussianScene, list, list, FusionConfig, np.ndarray) -> tuple
    rs = RecurrentState.initial(scene, cams)
    report = LossReport()
    optimizer = fusion._optimize(  # pylint: disable=protected-access
        rs, scene, scene.copy(state_index=1), trainable, len(scene), images, cams, {}, dict(rs.added_at),
        rs.transform_history, rs.added_at, [], 1, cfg, make_rng(0), report,
    )
    return optimizer, report


@pytest.mark.parametrize("lambda_r", [0.0, 0.5])
def test_optimize_keeps_frozen_rows(pipeline, camera, random_scene, lambda_r):
    # type: (Callable, Callable, Callable, float) -> None
    scene = random_scene(count=10, labels=[0] * 5 + [-1] * 5)
    cams = [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
    images = [np.full((16, 16, 3), 0.5) for _ in cams]
    trainable = np.array([True] * 5 + [False] * 5)
    cfg = FusionConfig(iterations=4, lambda_r=lambda_r, densify_interval=1000)
    optimizer, report = _optimize(pipeline(), scene, cams, images, cfg, trainable)

    assert np.array_equal(optimizer.scene.positions[5:], scene.positions[5:])
    assert np.array_equal(optimizer.scene.colors[5:], scene.colors[5:])
    assert not np.array_equal(optimizer.scene.colors[:5], scene.colors[:5])
    assert len(report) == 4
    if lambda_r == 0.0:
        assert report.l_replay == [0.0] * 4
        assert report.replay_index == [-1] * 4
    else:
        assert report.replay_index == [0] * 4
        expected = [0.5 * (a + b) for a, b in zip(report.l_curr, report.l_replay)]
        assert np.allclose(report.total, expected)


def test_replay_loss_vanishes_on_unchanged_scene(pipeline, camera, random_scene):
    # type: (Callable, Callable, Callable) -> None
    scene = random_scene(count=10)
    cams = [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
    images = [render(scene, cam)[0] for cam in cams]
    cfg = FusionConfig(iterations=1, lambda_r=0.5)
    _, report = _optimize(pipeline(), scene, cams, images, cfg, np.ones(10, dtype=bool))
    assert report.l_curr[0] == pytest.approx(0.0, abs=1e-9)
    assert report.l_replay[0] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.slow
def test_fuse_moved_object(pipeline, ground_truth):
    # type: (Callable, Callable) -> None
    script = StateScript(((Action.move(0, RigidTransform.from_translation((0.25, 0.2, 0.0))),),))
    gt = ground_truth(script=script)
    assert gt_change_mask(gt, 0, 1, 0).any()
    rs = RecurrentState.initial(gt.scenes[0], gt.cameras)
    cfg = FusionConfig(
        iterations=20,
        quick_iterations=60,
        refine_iterations=10,
        seed_count=400,
        densify_interval=10,
        min_region_area=10,
        mask_mode="proposals",
    )
    observations = Observations(gt.images[1], gt.cameras, gt_proposals(gt, 0), gt_proposals(gt, 1))
    result = pipeline().fuse(rs, observations, cfg)

    assert result.state.state_index == 1
    stages = [record.stage for record in result.stages]
    assert stages[:2] == ["render_prev", "change"]
    assert stages[-1] == "optimize"
    scene = result.state.scene
    prev = gt.scenes[0]
    frozen = (~result.optimized) & (~result.moved) & (result.source_index >= 0)
    assert np.array_equal(scene.positions[frozen], prev.positions[result.source_index[frozen]])
    assert np.array_equal(scene.colors[frozen], prev.colors[result.source_index[frozen]])
    for object_id, steps in result.state.transform_history.items():
        assert steps[-1][0] == 1
        assert object_id in result.alignments
