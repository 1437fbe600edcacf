"""End-to-end command-line checks: pipeline wiring, artifacts, exit codes."""

import json

import numpy as np
import pytest

from vbones import SyntheticMotionSpec, generate_synthetic, save_pose_sequence
from vbones.cli import main
from vbones.data import write_dataset

TINY_CONFIG = {
    "model": {
        "virtual_config": "VB0",
        "num_random_frames": 2,
        "receptive_field": 3,
        "hidden_width": 16,
        "num_residual_blocks": 1,
        "dtype": "float64",
    },
    "training": {"epochs": 1, "batch_size": 6},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train once; several tests poke at the artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    data, rundir = root / "data", root / "run"
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    assert (
        main(
            [
                "synth", "--out", str(data), "--sequences", "2",
                "--frames-per-clip", "14", "--seed", "5",
            ]
        )
        == 0
    )
    assert (
        main(
            ["train", "--out", str(rundir), "--data", str(data),
             "--config", str(config)]
        )
        == 0
    )
    return data, rundir, config


# --- synth ---------------------------------------------------------------------


def test_synth_writes_dataset_and_manifest(tmp_path, capsys):
    out = tmp_path / "data"
    code, stdout, _ = run(
        capsys, "synth", "--out", out, "--sequences", 2,
        "--frames-per-clip", 12, "--seed", 5,
    )
    assert code == 0
    assert "wrote 2 sequences" in stdout
    index = json.loads((out / "index.json").read_text())
    assert index["format"] == "vbones-dataset-v1"
    assert len(index["sequences"]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["seed"] == 5
    assert len(manifest["config_hash"]) == 64
    assert manifest["config"]["spec"]["num_frames"] == 12


def test_synth_refuses_nonempty_out_without_force(tmp_path, capsys):
    out = tmp_path / "data"
    args = ("synth", "--out", out, "--sequences", 1, "--frames-per-clip", 12)
    assert run(capsys, *args)[0] == 0
    code, _, stderr = run(capsys, *args)
    assert code == 1
    assert stderr.startswith("error: ValidationError:")
    assert run(capsys, *args, "--force")[0] == 0


def test_synth_rejects_unknown_spec_keys(tmp_path, capsys):
    config = tmp_path / "spec.json"
    config.write_text(json.dumps({"num_frames": 12, "bogus": 1}))
    code, _, stderr = run(
        capsys, "synth", "--out", tmp_path / "data", "--config", config
    )
    assert code == 1
    assert stderr.startswith("error: ConfigurationError:")
    assert "bogus" in stderr


# --- train ---------------------------------------------------------------------


def test_train_leaves_checkpoints_log_and_manifest(pipeline):
    _, rundir, _ = pipeline
    assert (rundir / "checkpoint_last.npz").exists()
    assert (rundir / "checkpoint_epoch0000.npz").exists()
    assert (rundir / "train_log.jsonl").exists()
    manifest = json.loads((rundir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["model"]["virtual_config"] == "VB0"
    assert manifest["config"]["training"]["epochs"] == 1


def test_train_reports_progress(pipeline, tmp_path, capsys):
    data, _, config = pipeline
    code, stdout, _ = run(
        capsys, "train", "--out", tmp_path / "run", "--data", data,
        "--config", config, "--pcl", "off",
    )
    assert code == 0
    assert "trained 1 epochs" in stdout
    assert "checkpoint" in stdout


def test_train_rejects_unknown_model_keys(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"model": {"bogus": 3}}))
    code, _, stderr = run(
        capsys, "train", "--out", tmp_path / "run", "--data", tmp_path,
        "--config", config,
    )
    assert code == 1
    assert stderr.startswith("error: ConfigurationError:")
    assert "bogus" in stderr


def test_train_complains_about_missing_data(tmp_path, capsys):
    code, _, stderr = run(
        capsys, "train", "--out", tmp_path / "run", "--data", tmp_path / "nope"
    )
    assert code == 1
    assert stderr.startswith("error: IngestionError:")


# --- eval ----------------------------------------------------------------------


def test_eval_checkpoint_writes_reports(pipeline, tmp_path, capsys):
    data, rundir, _ = pipeline
    out = tmp_path / "eval"
    code, stdout, _ = run(
        capsys, "eval", "--out", out, "--checkpoint", rundir / "checkpoint_last.npz",
        "--data", data, "--split", "train",
    )
    assert code == 0
    assert "MPJPE (P1)" in stdout and "Avg" in stdout
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"actions", "average"}
    assert report["average"]["num_frames"] == 28
    assert (out / "report.txt").exists()
    details = json.loads((out / "details.json").read_text())
    assert len(details["joint_names"]) == 17
    assert json.loads((out / "manifest.json").read_text())["command"] == "eval"


def test_eval_identical_pose_files_score_zero(tmp_path, capsys):
    seq = generate_synthetic(SyntheticMotionSpec(num_frames=8, seed=2))
    pose_file = tmp_path / "poses.npz"
    save_pose_sequence(pose_file, seq)
    out = tmp_path / "eval"
    code, stdout, _ = run(
        capsys, "eval", "--out", out, "--pred", pose_file, "--gt", pose_file
    )
    assert code == 0
    avg = json.loads((out / "report.json").read_text())["average"]
    assert avg["protocol1_mpjpe"] == 0.0
    assert abs(avg["protocol2_p_mpjpe"]) < 1e-9
    assert avg["mpjve"] == 0.0
    assert not (out / "details.json").exists()  # no per-frame traces in file mode


def test_eval_flag_combinations_are_checked(tmp_path, capsys):
    for args in (
        ("eval", "--out", tmp_path / "a", "--pred", "x.npz"),
        ("eval", "--out", tmp_path / "b"),
        (
            "eval", "--out", tmp_path / "c", "--checkpoint", "c.npz",
            "--pred", "x.npz", "--gt", "y.npz",
        ),
    ):
        code, _, stderr = run(capsys, *args)
        assert code == 1
        assert stderr.startswith("error: ValidationError:")


# --- paths ---------------------------------------------------------------------


def test_paths_json_counts_follow_the_edge_budget(capsys):
    code, stdout, _ = run(
        capsys, "paths", "--virtual", "VB5", "--joint", "right_wrist",
        "--max-edges", 6, "--json",
    )
    assert code == 0
    doc = json.loads(stdout)
    assert doc["count"] == 3
    assert len(doc["paths"]) == 3
    code, stdout, _ = run(
        capsys, "paths", "--virtual", "VB5", "--joint", "right_wrist",
        "--max-edges", 5, "--json",
    )
    assert json.loads(stdout)["count"] == 2


def test_paths_text_output_names_bones(capsys):
    code, stdout, _ = run(
        capsys, "paths", "--virtual", "VB5", "--joint", "right_wrist",
        "--max-edges", 6,
    )
    assert code == 0
    assert "3 path(s)" in stdout
    assert "pelvis -> " in stdout
    assert "(reversed)" in stdout  # one route walks down the neck


def test_paths_rejects_unknown_joint(capsys):
    code, _, stderr = run(capsys, "paths", "--joint", "wristy")
    assert code == 1
    assert stderr.startswith("error: ValidationError:")


# --- gradcheck -------------------------------------------------------------------


def test_gradcheck_passes_on_small_model(capsys):
    code, stdout, _ = run(
        capsys, "gradcheck", "--virtual", "VB0", "--width", 16, "--num-params", 4
    )
    assert code == 0
    assert "gradient check: 4 parameters" in stdout


# --- plot ----------------------------------------------------------------------


def test_plot_writes_figures(pipeline, tmp_path, capsys):
    data, rundir, _ = pipeline
    evaldir = tmp_path / "eval"
    assert (
        main(
            [
                "eval", "--out", str(evaldir), "--checkpoint",
                str(rundir / "checkpoint_last.npz"), "--data", str(data),
                "--split", "train",
            ]
        )
        == 0
    )
    capsys.readouterr()
    out = tmp_path / "figs"
    code, stdout, _ = run(
        capsys, "plot", "--out", out, "--log", rundir / "train_log.jsonl",
        "--details", evaldir / "details.json", "--demo",
    )
    assert code == 0
    for name in (
        "training_curves.png",
        "per_joint_error.png",
        "per_frame_error.png",
        "offset_vs_oscillation.png",
    ):
        payload = (out / name).read_bytes()
        assert payload[:8] == b"\x89PNG\r\n\x1a\n"
    assert json.loads((out / "manifest.json").read_text())["command"] == "plot"


def test_plot_requires_an_input(tmp_path, capsys):
    code, _, stderr = run(capsys, "plot", "--out", tmp_path / "figs")
    assert code == 1
    assert stderr.startswith("error: ValidationError:")


# --- ablate --------------------------------------------------------------------


def test_ablate_runs_the_grid(tmp_path, capsys):
    entries = []
    for subject, seed in (("S1", 0), ("S9", 1)):
        seq = generate_synthetic(SyntheticMotionSpec(num_frames=10, seed=seed))
        entries.append((f"{subject}_walk_cam0", subject, "walk", "cam0", seq))
    data = tmp_path / "data"
    write_dataset(data, entries)
    config = tmp_path / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    out = tmp_path / "grid"
    code, stdout, _ = run(
        capsys, "ablate", "--out", out, "--data", data, "--config", config,
        "--virtual-configs", "VB0", "--seeds", "0",
    )
    assert code == 0
    assert stdout.splitlines()[0].startswith("config")
    doc = json.loads((out / "ablation.json").read_text())
    assert len(doc["rows"]) == 2
    assert (out / "VB0_pclon_seed0" / "checkpoint_last.npz").exists()


# --- process-level behaviour -----------------------------------------------------


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["paths", "--joint", "head", "--bogus"])
    assert excinfo.value.code == 2


def test_thread_cap_is_validated(monkeypatch, capsys):
    monkeypatch.setenv("VBONES_NUM_THREADS", "zero")
    code, _, stderr = run(capsys, "paths", "--joint", "head")
    assert code == 1
    assert stderr.startswith("error: ConfigurationError:")
    monkeypatch.setenv("VBONES_NUM_THREADS", "0")
    assert run(capsys, "paths", "--joint", "head")[0] == 1
    monkeypatch.setenv("VBONES_NUM_THREADS", "1")
    assert run(capsys, "paths", "--joint", "head")[0] == 0
