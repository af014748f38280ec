import json
from pathlib import Path

import pytest

from projlab import cli

TINY = """\
seed: 4
scene: {object_id: car, distance_m: 1.0, surface_albedo: [0.4, 0.4, 0.4]}
attack: {max_iters: 2, captures_per_update: 1}
digital_attack: {max_iters: 3}
detector: {linear: {n: 40, epochs: 50}}
suite:
  scenes: [{object_id: car}, {object_id: cup, distance_m: 0.5}]
  scenarios: [DL-DA, DL-PA, PL-PA]
sweep:
  levels: {projector_lumens: [1800, 6000], ambient_lux: [100], distance_m: [1.0], angle_deg: [0]}
surface: {albedos: [[0, 0, 0], [0.9, 0.9, 0.9]], repeats: 1}
transfer: {methods: [dpatch_like], scenarios: [DL-DA]}
countermeasure: {n_patched: 10, n_unpatched: 10, epochs_max: 50, patience: 10}
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def outputs(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timing.txt"}


EXPECTED = {
    ("attack",): {"trace.json", "patch.ppm", "record.json"},
    ("sweep",): {"grid.csv", "box.csv", "anova.json"},
    ("norms",): {"norms.csv", "records.json"},
    ("surface",): {"surface.csv"},
    ("transfer",): {"transfer.csv", "averages.json"},
}


@pytest.mark.parametrize("cmd", sorted(EXPECTED))
def test_command_outputs_and_rerun_identical(tmp_path, cfg_path, cmd):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*cmd, "--config", cfg_path, "--out", a) == 0
    assert run(*cmd, "--config", cfg_path, "--out", b) == 0
    files = outputs(a)
    assert set(files) == EXPECTED[cmd] | {"manifest.json"}
    assert files == outputs(b)
    manifest = json.loads(files["manifest.json"])
    assert manifest["command"] == cmd[0] and manifest["seed"] == 4
    assert manifest["outputs"] == sorted(EXPECTED[cmd] | {"timing.txt"})
    assert (a / "timing.txt").read_text().startswith("wall_time_s ")


@pytest.mark.parametrize("scenario", ["DL-DA", "DL-PA", "PL-PA"])
def test_attack_scenarios(tmp_path, cfg_path, scenario):
    assert run("attack", "--scenario", scenario, "--config", cfg_path, "--out", tmp_path) == 0
    rec = json.loads((tmp_path / "record.json").read_text())
    assert rec["scenario"] == scenario and rec["object_id"] == "car"


def test_seed_override_changes_results(tmp_path, cfg_path):
    run("attack", "--config", cfg_path, "--out", tmp_path / "a")
    run("attack", "--config", cfg_path, "--out", tmp_path / "b", "--seed", 5)
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 5
    assert (tmp_path / "a" / "patch.ppm").read_bytes() != (tmp_path / "b" / "patch.ppm").read_bytes()


def test_replay_reproduces(tmp_path, cfg_path):
    run("attack", "--scenario", "DL-DA", "--config", cfg_path, "--out", tmp_path / "a")
    assert run("replay", tmp_path / "a" / "manifest.json", "--out", tmp_path / "r") == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "r")


def test_countermeasure_flow(tmp_path, cfg_path, capsys):
    t, e, g = tmp_path / "t", tmp_path / "e", tmp_path / "g"
    assert run("countermeasure", "train", "--config", cfg_path, "--out", t) == 0
    assert run("countermeasure", "train", "--config", cfg_path, "--out", tmp_path / "t2") == 0
    assert outputs(t) == outputs(tmp_path / "t2")
    model = t / "model.pjlm"
    assert run("countermeasure", "eval", "--config", cfg_path, "--out", e, "--model", model) == 0
    report = json.loads((e / "report.json").read_text())
    assert 0.0 <= report["auc"] <= 1.0 and sum(report["confusion"].values()) == 20
    capsys.readouterr()
    assert run("countermeasure", "gate", "--config", cfg_path, "--out", g, "--model", model) == 0
    decision = json.loads((g / "gate.json").read_text())["decision"]
    assert capsys.readouterr().out.strip() == decision
    assert decision in ("pass", "flag")


def test_gate_reads_image(tmp_path, cfg_path):
    run("countermeasure", "train", "--config", cfg_path, "--out", tmp_path / "t")
    run("attack", "--scenario", "DL-DA", "--config", cfg_path, "--out", tmp_path / "a")
    code = run(
        "countermeasure", "gate", "--config", cfg_path, "--out", tmp_path / "g",
        "--model", tmp_path / "t" / "model.pjlm", "--image", tmp_path / "a" / "patch.ppm",
    )
    assert code == 0
    assert json.loads((tmp_path / "g" / "gate.json").read_text())["source"].endswith("patch.ppm")


def test_usage_errors(tmp_path, cfg_path, capsys):
    assert run("attack", "--config", tmp_path / "missing.yaml", "--out", tmp_path / "o") == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus: 1\n")
    assert run("attack", "--config", bad, "--out", tmp_path / "o") == 2
    assert run("attack", "--config", cfg_path, "--out", tmp_path / "o", "--jobs", 0) == 2
    assert run("countermeasure", "eval", "--config", cfg_path, "--out", tmp_path / "o") == 2
    assert run("countermeasure", "gate", "--config", cfg_path, "--out", tmp_path / "o", "--model", tmp_path / "x") == 2
    one = tmp_path / "one.yaml"
    one.write_text(TINY.replace("transfer: {", "transfer: {detectors: [template], "))
    assert run("transfer", "--config", one, "--out", tmp_path / "o") == 2
    assert run("replay", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "projlab: error" in err and "at least two detectors" in err


def test_runtime_error_exit_code(tmp_path, cfg_path, capsys):
    junk = tmp_path / "junk.ppm"
    junk.write_bytes(b"P6\n")
    run("countermeasure", "train", "--config", cfg_path, "--out", tmp_path / "t")
    code = run(
        "countermeasure", "gate", "--config", cfg_path, "--out", tmp_path / "g",
        "--model", tmp_path / "t" / "model.pjlm", "--image", junk,
    )
    assert code == 3 and "runtime error" in capsys.readouterr().err


def test_argparse_rejects_unknown_command():
    with pytest.raises(SystemExit) as exc:
        cli.main(["explode"])
    assert exc.value.code == 2
