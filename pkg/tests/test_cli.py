import json

import numpy as np

from stylerl.cli import main
from stylerl.motion import load_clip, make_sweep_clip, save_clip
from stylerl.trainer import TrainerConfig

from test_trainer import config_doc


def write_config(tmp_path, **overrides):
    doc = config_doc(tmp_path, **overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


def test_train_cli_runs_and_writes_metrics(tmp_path, capsys):
    path, _ = write_config(tmp_path, epochs=2)
    out = tmp_path / "run"
    assert main(["train", "--config", str(path), "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs"] == 2
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3  # header + one row per epoch


def test_train_cli_seed_override_echoed_in_sidecar(tmp_path, capsys):
    path, doc = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    assert main(["train", "--config", str(path), "--out", str(out), "--seed", "77"]) == 0
    sidecar = json.loads((out / "ckpt_000001.bin.json").read_text())
    assert sidecar["seed"] == 77
    expected = TrainerConfig.from_dict({**doc, "seed": 77}).config_hash()
    assert sidecar["config_hash"] == expected


def test_train_cli_missing_dataset_is_usage_error(tmp_path, capsys):
    doc = config_doc(tmp_path, epochs=1)
    doc["styles"][0]["clips"] = [str(tmp_path / "absent.json")]
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "run")]) == 1
    assert "absent.json" in capsys.readouterr().err


def test_train_cli_bad_config_path(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.json"), "--out", "x"]) == 1


def test_train_cli_requires_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("STYLERL_OUT_DIR", raising=False)
    path, _ = write_config(tmp_path, epochs=1)
    assert main(["train", "--config", str(path)]) == 1
    assert "output directory" in capsys.readouterr().err


def test_train_cli_out_dir_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("STYLERL_OUT_DIR", str(tmp_path / "envout"))
    path, _ = write_config(tmp_path, epochs=1)
    assert main(["train", "--config", str(path)]) == 0
    assert (tmp_path / "envout" / "metrics.csv").exists()


def test_train_cli_divergence_exit_code(tmp_path, monkeypatch, capsys):
    from stylerl import cli as cli_mod
    from stylerl.errors import TrainingDivergenceError

    path, _ = write_config(tmp_path, epochs=1)

    def boom(*a, **k):
        raise TrainingDivergenceError("synthetic")

    monkeypatch.setattr(cli_mod, "train", boom)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "run")]) == 2


def test_reverse_cli_involution(tmp_path):
    clip = make_sweep_clip(steps=40, dt=0.02, rate=-0.7)
    src = tmp_path / "clip.json"
    save_clip(clip, src)
    once = tmp_path / "rev.json"
    twice = tmp_path / "rev2.json"
    assert main(["reverse", "--in", str(src), "--out", str(once)]) == 0
    assert main(["reverse", "--in", str(once), "--out", str(twice)]) == 0
    rev = load_clip(once)
    back = load_clip(twice)
    vel = clip.column_slice("qd")
    assert np.array_equal(rev.frames[:, vel], -clip.frames[::-1, vel])
    assert np.array_equal(back.frames, clip.frames)


def test_reverse_cli_missing_input(tmp_path, capsys):
    assert main(["reverse", "--in", str(tmp_path / "no.json"), "--out", str(tmp_path / "o.json")]) == 3


def test_record_generator_deterministic(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(["record", "--generator", "sinusoid", "--out", str(a)]) == 0
    assert main(["record", "--generator", "sinusoid", "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()
    clip = load_clip(a)
    assert clip.n_frames == 100
    assert [f.name for f in clip.fields] == ["q", "qd", "ee"]


def test_record_sweep_defaults_full_revolution(tmp_path):
    out = tmp_path / "sweep.json"
    assert main(["record", "--generator", "sweep", "--rate", "-0.75", "--out", str(out)]) == 0
    clip = load_clip(out)
    assert [f.name for f in clip.fields] == ["qsc", "qd", "ee"]
    # covers a full turn: steps = ceil(2 pi / (0.75 * 0.02)) + 1
    assert clip.n_frames == int(np.ceil(2 * np.pi / (0.75 * 0.02))) + 1


def test_record_from_checkpoint(tmp_path):
    path, _ = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    assert main(["train", "--config", str(path), "--out", str(out)]) == 0
    clip_path = tmp_path / "recorded.json"
    code = main(["record", "--checkpoint", str(out / "ckpt_000001.bin"),
                 "--style", "1", "--steps", "30", "--out", str(clip_path)])
    assert code == 0
    clip = load_clip(clip_path)
    assert clip.n_frames == 30
    assert clip.dt == 0.02


def test_record_style_out_of_range(tmp_path, capsys):
    path, _ = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    main(["train", "--config", str(path), "--out", str(out)])
    code = main(["record", "--checkpoint", str(out / "ckpt_000001.bin"),
                 "--style", "9", "--steps", "10", "--out", str(tmp_path / "x.json")])
    assert code == 1


def test_record_minimal_two_steps(tmp_path):
    path, _ = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    main(["train", "--config", str(path), "--out", str(out)])
    code = main(["record", "--checkpoint", str(out / "ckpt_000001.bin"),
                 "--style", "0", "--steps", "2", "--out", str(tmp_path / "two.json")])
    assert code == 0
    assert load_clip(tmp_path / "two.json").n_frames == 2


def test_inspect_clip(tmp_path, capsys):
    clip = make_sweep_clip(steps=30, dt=0.02, rate=-0.8)
    src = tmp_path / "c.json"
    save_clip(clip, src)
    assert main(["inspect", "--in", str(src)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["type"] == "clip"
    assert doc["frames"] == 30 and doc["descriptor_dim"] == 8
    assert doc["fields"][1]["name"] == "qd"


def test_inspect_checkpoint_and_config(tmp_path, capsys):
    path, _ = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    main(["train", "--config", str(path), "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect", "--in", str(out / "ckpt_000001.bin")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["type"] == "checkpoint" and doc["epoch"] == 1
    assert doc["policy_widths"][0] == 13
    assert main(["inspect", "--in", str(path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["type"] == "config"
    assert doc["resolved"]["epochs"] == 1


def test_inspect_unknown_file(tmp_path, capsys):
    path = tmp_path / "mystery.bin"
    path.write_bytes(b"\x00\x01\x02")
    assert main(["inspect", "--in", str(path)]) == 1


def test_eval_cli(tmp_path, capsys):
    path, _ = write_config(tmp_path, epochs=1, checkpoint_interval=1)
    out = tmp_path / "run"
    main(["train", "--config", str(path), "--out", str(out)])
    capsys.readouterr()
    report_path = tmp_path / "report.json"
    code = main(["eval", "--checkpoint", str(out / "ckpt_000001.bin"), "--style", "0",
                 "--episodes", "2", "--horizon", "30", "--warmup", "5",
                 "--out", str(report_path)])
    assert code == 0
    doc = json.loads(report_path.read_text())
    assert doc["style"] == 0 and doc["episodes"] == 2


def test_export_plot_data_fanout(tmp_path, capsys):
    path, _ = write_config(tmp_path, epochs=3)
    out = tmp_path / "run"
    main(["train", "--config", str(path), "--out", str(out)])
    capsys.readouterr()
    plot_dir = tmp_path / "plots"
    assert main(["export-plot-data", "--metrics", str(out / "metrics.csv"),
                 "--out", str(plot_dir)]) == 0
    written = json.loads(capsys.readouterr().out)["written"]
    assert len(written) == 4  # three style files + combined
    style0 = (plot_dir / "style0_curves.csv").read_text().splitlines()
    assert style0[0] == "epoch,task_reward_mean,style_reward_mean,disc_loss,disc_accuracy"
    assert len(style0) == 4
    # idempotent
    before = (plot_dir / "combined_rewards.csv").read_text()
    main(["export-plot-data", "--metrics", str(out / "metrics.csv"), "--out", str(plot_dir)])
    assert (plot_dir / "combined_rewards.csv").read_text() == before


def test_export_plot_data_empty_metrics(tmp_path, capsys):
    metrics = tmp_path / "metrics.csv"
    metrics.write_text("epoch,style0_task_reward_mean\n")
    assert main(["export-plot-data", "--metrics", str(metrics), "--out", str(tmp_path / "p")]) == 1


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 1  # missing --config
    assert main(["bogus-command"]) == 1
