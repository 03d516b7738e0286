"""End-to-end runs of the command-line workflow on tiny inputs."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from polarproj import attack, scene as scene_mod, surrogate
from polarproj.cli import main
from polarproj.stokes import StokesImage


def run_cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def dir_bytes(d):
    """Map of file name to raw contents for every regular file in d."""
    out = {}
    for name in sorted(os.listdir(d)):
        path = os.path.join(d, name)
        if os.path.isfile(path):
            with open(path, "rb") as fh:
                out[name] = fh.read()
    return out


def config_without_timestamp(d):
    with open(os.path.join(d, "config.json"), encoding="ascii") as fh:
        payload = json.load(fh)
    payload.pop("timestamp", None)
    return payload


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return tmp_path_factory.mktemp("cliws")


@pytest.fixture(scope="module")
def scene_dir(ws):
    out = ws / "scene"
    res = run_cli("gen-scene", "--seed", 5, "--height", 32, "--width", 32,
                  "--out", out)
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def cc_scene_dir(ws):
    out = ws / "ccscene"
    res = run_cli("gen-scene", "--kind", "cc-benchmark", "--height", 32,
                  "--width", 32, "--out", out)
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def model_dir(ws, scene_dir):
    scene2 = ws / "scene2"
    assert run_cli("gen-scene", "--seed", 6, "--height", 32, "--width", 32,
                   "--out", scene2).exit_code == 0
    out = ws / "model"
    res = run_cli("train", "--scene", scene_dir, "--scene", scene2,
                  "--max-iters", 40, "--out", out)
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def attack_dir(ws, scene_dir, model_dir):
    out = ws / "attack"
    res = run_cli("attack", "--scene", scene_dir, "--model", model_dir,
                  "--grid", 8, "--iters", 3, "--seed", 1, "--out", out)
    assert res.exit_code == 0, res.output
    return out


def test_gen_scene_rerun_is_byte_identical(ws):
    a, b = ws / "rerun_a", ws / "rerun_b"
    for out in (a, b):
        res = run_cli("gen-scene", "--seed", 11, "--height", 32, "--width", 32,
                      "--out", out)
        assert res.exit_code == 0, res.output
    assert dir_bytes(a) == dir_bytes(b)


def test_gen_scene_rejects_tiny_dims(ws):
    out = ws / "tiny"
    res = run_cli("gen-scene", "--height", 8, "--width", 32, "--out", out)
    assert res.exit_code == 2
    assert not out.exists()


def test_capture_is_deterministic(ws, scene_dir):
    a, b = ws / "cap_a", ws / "cap_b"
    for out in (a, b):
        res = run_cli("capture", "--scene", scene_dir, "--k", 4, "--out", out)
        assert res.exit_code == 0, res.output
    assert dir_bytes(a) == dir_bytes(b)
    cs = scene_mod.load_candidates(a)
    assert cs.k == 4


def test_train_rerun_writes_identical_weights(ws, scene_dir, model_dir):
    again = ws / "model_again"
    res = run_cli("train", "--scene", scene_dir, "--scene", ws / "scene2",
                  "--max-iters", 40, "--out", again)
    assert res.exit_code == 0, res.output
    assert dir_bytes(again) == dir_bytes(model_dir)


def test_train_divergence_maps_to_exit_4(ws, scene_dir, monkeypatch):
    def boom(scenes, config):
        raise surrogate.TrainingDivergedError(3, [np.nan])

    monkeypatch.setattr(surrogate, "seg_train", boom)
    res = run_cli("train", "--scene", scene_dir, "--out", ws / "diverged")
    assert res.exit_code == 4


def test_attack_run_directory_layout(attack_dir):
    names = set(os.listdir(attack_dir))
    expected = {
        "config.json", "trajectory.csv", "perturbation.ppat",
        "before.sraw", "after.sraw", "metrics.json",
    }
    assert expected <= names
    for prefix in ("before", "after"):
        for cue in ("s0", "dolp", "aolp"):
            assert f"{prefix}_{cue}.png" in names
    with open(attack_dir / "metrics.json", encoding="ascii") as fh:
        payload = json.load(fh)
    assert payload["name"] == "plain"
    assert payload["grid"] == 8
    assert set(payload["worlds"]) == {"digital", "physical"}
    for world in payload["worlds"].values():
        assert 0.0 <= world["iou"] <= 1.0
        assert 0.0 <= world["ber"] <= 100.0


def test_attack_rerun_byte_identical_outputs(ws, scene_dir, model_dir, attack_dir):
    again = ws / "attack_again"
    res = run_cli("attack", "--scene", scene_dir, "--model", model_dir,
                  "--grid", 8, "--iters", 3, "--seed", 1, "--out", again)
    assert res.exit_code == 0, res.output
    first = dir_bytes(attack_dir)
    second = dir_bytes(again)
    assert first["trajectory.csv"] == second["trajectory.csv"]
    assert first["perturbation.ppat"] == second["perturbation.ppat"]
    assert first["metrics.json"] == second["metrics.json"]
    # The wall-clock timestamp is the one permitted difference.
    assert config_without_timestamp(attack_dir) == config_without_timestamp(again)


def test_attack_rejects_unsupported_grid(ws, scene_dir, model_dir):
    res = run_cli("attack", "--scene", scene_dir, "--model", model_dir,
                  "--grid", 64, "--out", ws / "nope")
    assert res.exit_code == 2


def test_attack_random_baseline(ws, scene_dir, model_dir):
    out = ws / "random_run"
    res = run_cli("attack", "--scene", scene_dir, "--model", model_dir,
                  "--baseline", "random", "--seed", 3, "--out", out)
    assert res.exit_code == 0, res.output
    with open(out / "metrics.json", encoding="ascii") as fh:
        assert json.load(fh)["name"] == "random"
    with open(out / "trajectory.csv", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "iteration,loss,iou,ber"
    assert len(lines) == 2


def test_attack_unreadable_model_maps_to_exit_3(ws, scene_dir):
    empty = ws / "empty_model"
    empty.mkdir()
    res = run_cli("attack", "--scene", scene_dir, "--model", empty,
                  "--out", ws / "nope2")
    assert res.exit_code == 3


def test_attack_numeric_abort_maps_to_exit_4(ws, scene_dir, model_dir, monkeypatch):
    def aborted(cs, model, mask, config):
        return attack.AttackResult(
            weights=attack.AttackWeights.zeros(cs.height, cs.width, config.grid, cs.k),
            losses=np.array([1.0]), ious=np.array([0.5]), bers=np.array([50.0]),
            aborted=True, abort_reason="non-finite loss",
        )

    monkeypatch.setattr(attack, "attack_optimize", aborted)
    out = ws / "aborted_run"
    res = run_cli("attack", "--scene", scene_dir, "--model", model_dir,
                  "--out", out)
    assert res.exit_code == 4
    # The partial trajectory is still on disk for diagnosis.
    assert (out / "trajectory.csv").exists()


def test_missing_scene_path_is_usage_error(ws, model_dir):
    res = run_cli("attack", "--scene", ws / "no_such_scene", "--model", model_dir,
                  "--out", ws / "nope3")
    assert res.exit_code == 2


def test_cc_attack_writes_report(ws, cc_scene_dir):
    out = ws / "cc_red"
    res = run_cli("cc-attack", "--scene", cc_scene_dir, "--mode", "red",
                  "--out", out)
    assert res.exit_code == 0, res.output
    with open(out / "cc_report.json", encoding="ascii") as fh:
        payload = json.load(fh)
    assert payload["mode"] == "red"
    assert len(payload["estimate"]) == 3
    assert len(payload["wb_gains"]) == 3
    assert payload["angular_error_deg"] >= 0.0
    names = set(os.listdir(out))
    for prefix in ("before", "after"):
        for cue in ("s0", "dolp", "aolp"):
            assert f"{prefix}_{cue}.png" in names


def test_cc_attack_rejects_unknown_mode(ws, cc_scene_dir):
    res = run_cli("cc-attack", "--scene", cc_scene_dir, "--mode", "ultraviolet",
                  "--out", ws / "nope4")
    assert res.exit_code == 2


def test_cc_attack_rejects_monochrome_scene(ws):
    color = scene_mod.gen_scene(9, (24, 24))
    mono = scene_mod.SceneModel(
        k_s=color.k_s,
        albedo=color.albedo[:, :, :1],
        spec_reflectance=color.spec_reflectance[:1],
        diffuse_dolp=color.diffuse_dolp,
        diffuse_aolp=color.diffuse_aolp,
        ambient=StokesImage(
            color.ambient.s0[:, :, :1],
            color.ambient.s1[:, :, :1],
            color.ambient.s2[:, :, :1],
        ),
        glass_mask=color.glass_mask,
    )
    mono_dir = ws / "mono_scene"
    scene_mod.save_scene(mono_dir, mono)
    res = run_cli("cc-attack", "--scene", mono_dir, "--mode", "red",
                  "--out", ws / "nope5")
    assert res.exit_code == 3


def test_eval_writes_clean_metrics(ws, scene_dir, model_dir):
    out = ws / "eval_run"
    res = run_cli("eval", "--scene", scene_dir, "--model", model_dir,
                  "--out", out)
    assert res.exit_code == 0, res.output
    with open(out / "metrics.json", encoding="ascii") as fh:
        payload = json.load(fh)
    assert payload["name"] == "clean"
    assert payload["grid"] is None
    assert set(payload["worlds"]) == {"digital"}


def test_report_aggregates_runs(ws, attack_dir, scene_dir, model_dir):
    eval_dir = ws / "eval_for_report"
    assert run_cli("eval", "--scene", scene_dir, "--model", model_dir,
                   "--out", eval_dir).exit_code == 0
    out = ws / "report"
    res = run_cli("report", "--run", eval_dir, "--run", attack_dir,
                  "--paper-reference", "--out", out)
    assert res.exit_code == 0, res.output
    with open(out / "report.csv", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "name,grid,world,iou,ber"
    # clean row first, then the attack's digital and physical rows
    assert lines[2].startswith("clean,")
    assert len(lines) == 5
    with open(out / "report.json", encoding="ascii") as fh:
        payload = json.load(fh)
    assert [r["name"] for r in payload["rows"]] == ["clean", "plain", "plain"]
