"""Test the scene-fusion command line."""

import os
from typing import Any, Callable
from unittest.mock import ANY, Mock

import pytest
import simplejson as json

from scene_fusion import cli
from scene_fusion.fusion import FusionPipeline, RecurrentState, load_recurrent_state, save_recurrent_state
from scene_fusion.geom import RigidTransform
from scene_fusion.harness import AblationRow, RunManifest, SequenceRun, SweepRow, read_csv
from scene_fusion.image_io import read_image
from scene_fusion.metrics import MetricsRow
from scene_fusion.scene import load_scene, save_scene
from scene_fusion.synth import Action, StateScript, load_ground_truth, save_ground_truth

MOVE = StateScript(((Action.move(0, RigidTransform.from_translation((0.3, 0.1, 0.0))),),))
IDENTITY = [str(value) for value in RigidTransform.identity().to_list()]


@pytest.fixture
def run_cli(mocker):
    # type: (Mock) -> Callable
    def inner(*argv):
        # type: (*str) -> tuple
        pipeline = mocker.Mock(spec_set=FusionPipeline)
        return cli.main(list(argv), pipeline=pipeline), pipeline

    return inner


@pytest.fixture
def fused_run(tmpdir, ground_truth):
    # type: (Any, Callable) -> Callable
    def inner(fusion=None):
        # type: (Any) -> str
        gt = ground_truth(MOVE)
        data = os.path.join(str(tmpdir), "data")
        run = os.path.join(str(tmpdir), "run")
        save_ground_truth(gt, data)
        history = {0: [(1, gt.transforms[0][0])]}
        rs = RecurrentState(gt.scenes[1].copy(), {0: gt.cameras, 1: gt.cameras}, history, {0: 0, 1: 0})
        save_recurrent_state(rs, os.path.join(run, "final"))
        RunManifest(os.path.join(run, cli.MANIFEST_FILE), {"data": data, "fusion": fusion or {}}).flush()
        return run

    return inner


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["unknown"],
        ["render"],
        ["sweep", "--experiment", "everything"],
        ["manipulate", "--run", "x", "--object", "zero", "--transform", "1"],
    ],
)
def test_usage_errors_exit_1(argv, run_cli, capsys):
    with pytest.raises(SystemExit) as error:
        run_cli(*argv)

    assert error.value.code == 1
    assert "usage: scene-fusion" in capsys.readouterr().err


@pytest.mark.parametrize("name", ["out.ppm", "out.png"])
def test_render_one_camera(tmpdir, random_scene, camera, run_cli, name):
    scene_path = os.path.join(str(tmpdir), "scene.gsc")
    camera_path = os.path.join(str(tmpdir), "camera.json")
    out = os.path.join(str(tmpdir), name)
    save_scene(random_scene(), scene_path)
    with open(camera_path, "w", encoding="utf-8") as handle:
        json.dump(camera(width=12, height=8).to_dict(), handle)

    code, pipeline = run_cli("render", "--scene", scene_path, "--camera", camera_path, "--out", out)

    assert code == 0
    assert read_image(out).shape == (8, 12, 3)
    pipeline.log.assert_called_once_with("info", "render", views=1, out=[out])


def test_render_camera_list(tmpdir, random_scene, camera, run_cli):
    scene_path = os.path.join(str(tmpdir), "scene.gsc")
    camera_path = os.path.join(str(tmpdir), "cameras.json")
    save_scene(random_scene(), scene_path)
    with open(camera_path, "w", encoding="utf-8") as handle:
        json.dump([camera().to_dict(), camera(eye=(3.0, 0.0, 0.0)).to_dict()], handle)

    code, _ = run_cli(
        "render", "--scene", scene_path, "--camera", camera_path, "--out", os.path.join(str(tmpdir), "view.ppm")
    )

    assert code == 0
    assert os.path.exists(os.path.join(str(tmpdir), "view_0.ppm"))
    assert os.path.exists(os.path.join(str(tmpdir), "view_1.ppm"))


def test_render_bad_scene_exits_2(tmpdir, camera, run_cli, capsys):
    scene_path = os.path.join(str(tmpdir), "scene.gsc")
    camera_path = os.path.join(str(tmpdir), "camera.json")
    with open(scene_path, "w", encoding="utf-8") as handle:
        handle.write("three 0\n")
    with open(camera_path, "w", encoding="utf-8") as handle:
        json.dump(camera().to_dict(), handle)

    code, pipeline = run_cli("render", "--scene", scene_path, "--camera", camera_path)

    assert code == cli.EXIT_FAILURE
    assert "scene-fusion: [render] SceneFormatError:" in capsys.readouterr().err
    pipeline.log.assert_called_once_with(
        "error", "render.failed", error_type="SceneFormatError", description=ANY
    )


def test_bad_config_json_exits_2(tmpdir, run_cli):
    config = os.path.join(str(tmpdir), "config.json")
    with open(config, "w", encoding="utf-8") as handle:
        handle.write("{not json")

    code, _ = run_cli("sweep", "--experiment", "ablation", "--config", config, "--out", str(tmpdir))

    assert code == cli.EXIT_FAILURE


def test_generate(tmpdir, run_cli):
    spec = os.path.join(str(tmpdir), "spec.json")
    out = os.path.join(str(tmpdir), "gt")
    with open(spec, "w", encoding="utf-8") as handle:
        json.dump(
            {
                "scene": {"surface_spacing": 0.2},
                "rig": {"count": 2, "fx": 10.0, "fy": 10.0, "width": 16, "height_px": 12},
            },
            handle,
        )

    code, pipeline = run_cli("generate", "--spec", spec, "--seed", "3", "--out", out)

    assert code == 0
    gt = load_ground_truth(out)
    assert len(gt.scenes) == 1
    assert len(gt.cameras) == 2
    assert gt.seed == 3
    assert gt.images[0][0].shape == (12, 16, 3)
    pipeline.log.assert_called_once_with("info", "generate", states=1, views=2, out=out)


def test_generate_unknown_key_exits_2(tmpdir, run_cli):
    spec = os.path.join(str(tmpdir), "spec.json")
    with open(spec, "w", encoding="utf-8") as handle:
        json.dump({"scenario": "move", "lights": 3}, handle)

    code, _ = run_cli("generate", "--spec", spec, "--out", os.path.join(str(tmpdir), "gt"))

    assert code == cli.EXIT_FAILURE


def test_fuse_writes_run(tmpdir, ground_truth, run_cli, mocker):
    gt = ground_truth(MOVE)
    data = os.path.join(str(tmpdir), "data")
    out = os.path.join(str(tmpdir), "run")
    save_ground_truth(gt, data)
    states = [RecurrentState.initial(gt.scenes[0], gt.cameras), RecurrentState.initial(gt.scenes[1], gt.cameras)]
    rows = [
        MetricsRow(1, 25.0, 0.8, 1.5, len(gt.scenes[0]), 0, {"reconstruct": 1.5}),
        MetricsRow(2, 24.0, 0.75, 0.5, len(gt.scenes[1]), 10, {"change": 0.5}),
    ]
    runner = mocker.patch.object(cli, "ExperimentRunner")
    runner.return_value.run_sequence.return_value = SequenceRun(states, rows, [], 23.0, 0.7, [float("inf"), 30.0])

    code, _ = run_cli("fuse", "--data", data, "--out", out)

    assert code == 0
    assert read_csv(os.path.join(out, "metrics.csv"), MetricsRow) == rows
    assert load_recurrent_state(os.path.join(out, "final")).state_index == 1
    assert os.path.exists(os.path.join(out, "states", "0", "scene.gsc"))
    manifest = RunManifest.load(os.path.join(out, cli.MANIFEST_FILE))
    assert manifest.data["test"] == {"psnr": 23.0, "ssim": 0.7}
    assert manifest.data["stage_seconds"] == {}
    assert manifest.data["config"]["data"] == os.path.abspath(data)


def test_eval_test_state(fused_run, run_cli, capsys):
    run = fused_run()

    code, pipeline = run_cli("eval", "--run", run, "--test-state")

    assert code == 0
    output = capsys.readouterr().out
    assert output.startswith("psnr=")
    value = pipeline.log.call_args[1]["psnr"]
    assert value > 40.0


def test_eval_requires_test_state(fused_run, run_cli):
    code, _ = run_cli("eval", "--run", fused_run())

    assert code == cli.EXIT_FAILURE


def test_manipulate(fused_run, run_cli):
    run = fused_run()

    code, _ = run_cli("manipulate", "--run", run, "--object", "0", "--transform", *IDENTITY)

    assert code == 0
    moved = load_scene(os.path.join(run, "manipulated", "scene.gsc"))
    original = load_recurrent_state(os.path.join(run, "final")).scene
    assert moved.positions.tolist() == original.positions.tolist()
    assert os.path.exists(os.path.join(run, "manipulated", "view_0.ppm"))


def test_manipulate_renders_on_run_background(fused_run, run_cli, mocker):
    run = fused_run({"background": [1.0, 1.0, 1.0]})
    spy = mocker.spy(cli, "render")

    code, _ = run_cli("manipulate", "--run", run, "--object", "0", "--transform", *IDENTITY)

    assert code == 0
    assert spy.call_count > 0
    assert all(call.args[2] == (1.0, 1.0, 1.0) for call in spy.call_args_list)


@pytest.mark.parametrize(
    "object_id, transform",
    [
        ("9", IDENTITY),
        ("0", ["1", "0", "0"]),
    ],
)
def test_manipulate_errors(fused_run, run_cli, object_id, transform):
    code, _ = run_cli("manipulate", "--run", fused_run(), "--object", object_id, "--transform", *transform)

    assert code == cli.EXIT_FAILURE


@pytest.mark.parametrize(
    "experiment, method, rows",
    [
        ("ablation", "run_ablation", [AblationRow("R", 25.0, 0.8, 3.0, 100, 400)]),
        ("scaling", "run_scaling", [MetricsRow(1, 25.0, 0.8, 3.0, 100, 0, None)]),
    ],
)
def test_sweep_tables(tmpdir, run_cli, mocker, experiment, method, rows):
    runner = mocker.patch.object(cli, "ExperimentRunner")
    getattr(runner.return_value, method).return_value = rows

    code, _ = run_cli("sweep", "--experiment", experiment, "--out", str(tmpdir))

    assert code == 0
    assert read_csv(os.path.join(str(tmpdir), f"{experiment}.csv"), type(rows[0])) == rows


def test_sweep_voxel_table(tmpdir, run_cli, mocker):
    runner = mocker.patch.object(cli, "ExperimentRunner")
    rows = [SweepRow("voxel_size", 0.05, 26.0, 0.85, 4.0, 1200)]
    runner.return_value.run_sweeps.return_value = {"lambda": [], "voxel": rows}

    code, _ = run_cli("sweep", "--experiment", "voxel", "--out", str(tmpdir))

    assert code == 0
    assert read_csv(os.path.join(str(tmpdir), "voxel.csv"), SweepRow) == rows


@pytest.mark.slow
def test_fuse_twice_gives_identical_states(tmpdir, ground_truth, mocker):
    data = os.path.join(str(tmpdir), "data")
    config = os.path.join(str(tmpdir), "config.json")
    save_ground_truth(ground_truth(MOVE), data)
    with open(config, "w", encoding="utf-8") as handle:
        json.dump(
            {
                "base_iterations": 30,
                "fusion": {"iterations": 20, "quick_iterations": 20, "refine_iterations": 10, "seed_count": 100},
            },
            handle,
        )
    outputs = []
    for name in ("first", "second"):
        out = os.path.join(str(tmpdir), name)
        pipeline = FusionPipeline(logger=mocker.Mock(), category="cli")
        assert cli.main(["fuse", "--data", data, "--config", config, "--out", out], pipeline=pipeline) == 0
        outputs.append(out)

    for state in ("0", "1"):
        for filename in ("scene.gsc", "state.json"):
            paths = [os.path.join(out, "states", state, filename) for out in outputs]
            with open(paths[0], "rb") as first, open(paths[1], "rb") as second:
                assert first.read() == second.read()
    rows = []
    for out in outputs:
        table = read_csv(os.path.join(out, "metrics.csv"), MetricsRow)
        rows.append([row._replace(wall_time_s=0.0, stage_seconds=None) for row in table])
    assert rows[0] == rows[1]
