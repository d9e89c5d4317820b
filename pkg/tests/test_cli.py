import json

import pytest

from gazesom.cli import main

from oracles import kitchen_record


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("cmd", ["fixtures", "sample", "render", "prompt", "run", "grid", "report"])
def test_help_for_every_subcommand(capsys, cmd):
    code, out, _ = _run(capsys, cmd, "--help")
    assert code == 0 and "usage" in out


def test_unknown_flag_is_config_error(capsys):
    code, _, err = _run(capsys, "sample", "--frames", "10", "--bogus")
    assert code == 1 and "bogus" in err


def test_sample_prints_plan(capsys):
    code, out, _ = _run(capsys, "sample", "--frames", "50", "--lambda", "0.1", "--n", "15", "--seed", "7")
    plan = json.loads(out)
    assert code == 0
    assert plan["indices"][-1] == 49 and len(plan["indices"]) == 15
    assert plan["lambda"] == 0.1 and plan["seed"] == 7


def test_sample_bad_lambda_exit_1_with_json(capsys):
    code, _, err = _run(capsys, "sample", "--frames", "50", "--lambda", "2", "--json")
    assert code == 1
    assert json.loads(err)["exit_code"] == 1


def test_dump_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('lam = 0.5\nn = 7\nseed = 3\n')
    code, out, _ = _run(capsys, "sample", "--frames", "9", "--config", str(cfg), "--n", "4", "--dump-config")
    st = json.loads(out)
    assert code == 0
    assert st["lam"] == 0.5  # file beats default
    assert st["n"] == 4  # flag beats file
    assert st["seed"] == 3
    assert st["strategy"] == "som_gaze"  # default survives


def test_json_config_and_unknown_key(capsys, tmp_path):
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"strategy": "gaze"}))
    code, out, _ = _run(capsys, "sample", "--frames", "9", "--config", str(good), "--dump-config")
    assert json.loads(out)["strategy"] == "gaze"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"lamda": 0.1}))
    code, _, err = _run(capsys, "sample", "--frames", "9", "--config", str(bad))
    assert code == 1 and "lamda" in err


def test_fixtures_then_prompt(capsys, tmp_path):
    code, out, _ = _run(capsys, "fixtures", "--count", "2", "--out", str(tmp_path / "b"), "--seed", "1")
    assert code == 0 and out.strip().endswith("manifest.jsonl")
    code, out, _ = _run(capsys, "prompt", "--manifest", out.strip(), "--id", "q0", "--strategy", "gaze")
    assert code == 0 and "Follow the user's gaze trajectory closely" in out
    assert "Focus on the last frame" not in out


def test_prompt_for_kitchen_record(capsys, tmp_path):
    from gazesom.data import write_manifest

    write_manifest([kitchen_record()], tmp_path / "m.jsonl")
    code, out, _ = _run(capsys, "prompt", "--manifest", str(tmp_path / "m.jsonl"), "--id", "kitchen")
    assert out.startswith("Focus on the last frame")
    code, _, err = _run(capsys, "prompt", "--manifest", str(tmp_path / "m.jsonl"), "--id", "nope")
    assert code == 1


def test_render_writes_pngs(capsys, small_bench, tmp_path):
    clip = small_bench.records()[0].clip_id
    code, out, _ = _run(capsys, "render", "--bench", str(small_bench.root), "--clip", clip,
                        "--n", "5", "--out", str(tmp_path / "cue"))
    assert code == 0
    info = json.loads(out)
    assert len(info["indices"]) == 5
    assert len(list((tmp_path / "cue").glob("*.png"))) == 5


def test_render_clip_dir_all_frames(capsys, small_bench, tmp_path):
    clip_dir = small_bench.clip_dir(small_bench.records()[1].clip_id)
    code, _, _ = _run(capsys, "render", "--clip", str(clip_dir), "--all-frames",
                      "--strategy", "gaze", "--out", str(tmp_path / "cue"))
    assert code == 0
    assert len(list((tmp_path / "cue").glob("*.png"))) == 30


def test_run_oracle_mock(capsys, small_bench, tmp_path):
    out = tmp_path / "r.json"
    code, _, _ = _run(capsys, "run", "--bench", str(small_bench.root), "--backend", "mock_scripted",
                      "--script", "oracle", "--out", str(out))
    assert code == 0
    (cell,) = json.loads(out.read_text())["cells"]
    assert cell["accuracy"] == 1.0


def test_run_degraded_exit_3(capsys, small_bench, tmp_path):
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"q00": "x"}))
    code, _, _ = _run(capsys, "run", "--bench", str(small_bench.root), "--backend", "mock_scripted",
                      "--script", str(script), "--out", str(tmp_path / "r.json"))
    assert code == 3


def test_run_missing_api_key_exit_1(capsys, small_bench, monkeypatch):
    monkeypatch.delenv("GAZESOM_TEST_KEY", raising=False)
    code, _, err = _run(capsys, "run", "--bench", str(small_bench.root), "--backend", "frame_list",
                        "--endpoint", "http://127.0.0.1:9", "--api-key-env", "GAZESOM_TEST_KEY")
    assert code == 1 and "GAZESOM_TEST_KEY" in err


def test_run_video_without_encoder_exit_1(capsys, small_bench):
    code, _, err = _run(capsys, "run", "--bench", str(small_bench.root), "--backend", "video_fps",
                        "--endpoint", "http://127.0.0.1:9", "--fps", "2", "--encoder", "no-such-encoder")
    assert code == 1 and "no-such-encoder" in err


def test_grid_preset_and_report_conversion(capsys, small_bench, tmp_path):
    out = tmp_path / "t2.json"
    code, _, _ = _run(capsys, "grid", "--preset", "table2", "--bench", str(small_bench.root),
                      "--backend", "mock_random", "--out", str(out))
    assert code == 0
    assert len(json.loads(out.read_text())["cells"]) == 24
    code, md, _ = _run(capsys, "report", "--in", str(out), "--format", "markdown")
    assert md.splitlines()[0].startswith("| Strategy | λ=0 |")
    assert len(md.strip().splitlines()) == 6
    code, _, _ = _run(capsys, "report", "--in", str(out), "--format", "csv", "--out", str(tmp_path / "t2.csv"))
    assert code == 0 and len((tmp_path / "t2.csv").read_text().splitlines()) == 25


def test_grid_explicit_axes(capsys, small_bench, tmp_path):
    out = tmp_path / "g.csv"
    code, _, _ = _run(capsys, "grid", "--bench", str(small_bench.root), "--strategies", "som,gaze",
                      "--lambdas", "0,1/10", "--sizes", "5", "--out", str(out))
    assert code == 0 and len(out.read_text().splitlines()) == 5


def test_grid_preset_conflicts_with_axes(capsys):
    code, _, _ = _run(capsys, "grid", "--preset", "table2", "--sizes", "5")
    assert code == 1


def test_report_missing_file_is_runtime_error(capsys, tmp_path):
    code, _, _ = _run(capsys, "report", "--in", str(tmp_path / "nope.json"), "--format", "csv")
    assert code == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "gazesom", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
