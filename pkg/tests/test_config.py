import pytest

from projlab import config
from projlab.config import ConfigError


def write(path, text):
    path.write_text(text)
    return path


def test_empty_config_uses_defaults(tmp_path):
    cfg = config.load(write(tmp_path / "a.yaml", ""))
    assert config.root_seed(cfg) == 0
    assert [s.object_id for s in config.suite_scenes(cfg)] == ["car", "stop_sign", "potted_plant", "cup"]
    assert config.detector_settings(cfg)["kind"] == "template"
    assert config.countermeasure_settings(cfg)["n_patched"] == 338


def test_seed_flows_into_channel_and_attacks():
    cfg = config.loads("seed: 9\nattack: {max_iters: 7}\n")
    assert config.channel_params(cfg).seed == 9
    assert config.physical_attack(cfg).seed == 9 and config.physical_attack(cfg).max_iters == 7
    assert config.digital_attack(cfg).max_iters == 1000
    assert config.physical_attack(config.loads("seed: 9\nattack: {seed: 2}\n")).seed == 2


def test_suite_scenes_inherit_base():
    cfg = config.loads("scene: {ambient_lux: 200}\nsuite: {scenes: [{object_id: cup, distance_m: 0.5}]}\n")
    (s,) = config.suite_scenes(cfg)
    assert (s.object_id, s.distance_m, s.ambient_lux) == ("cup", 0.5, 200.0)


def test_include_merge_and_precedence(tmp_path):
    write(tmp_path / "base.yaml", "seed: 1\nscene: {object_id: cup, ambient_lux: 200}\nsweep: {levels: {ambient_lux: [100, 200]}}\n")
    sub = tmp_path / "sub"
    sub.mkdir()
    top = write(sub / "top.yaml", "include: ../base.yaml\nscene: {ambient_lux: 300}\nsweep: {levels: {ambient_lux: [400]}}\n")
    cfg = config.load(top)
    assert cfg["seed"] == 1
    assert cfg["scene"] == {"object_id": "cup", "ambient_lux": 300}
    assert cfg["sweep"]["levels"]["ambient_lux"] == [400]


def test_include_list_order(tmp_path):
    write(tmp_path / "a.yaml", "seed: 1\n")
    write(tmp_path / "b.yaml", "seed: 2\n")
    assert config.load(write(tmp_path / "c.yaml", "include: [a.yaml, b.yaml]\n"))["seed"] == 2


def test_include_cycle(tmp_path):
    write(tmp_path / "a.yaml", "include: b.yaml\n")
    write(tmp_path / "b.yaml", "include: a.yaml\n")
    with pytest.raises(ConfigError, match="cycle"):
        config.load(tmp_path / "a.yaml")


@pytest.mark.parametrize(
    "text",
    [
        "bogus: 1\n",
        "seed: -1\n",
        "seed: true\n",
        "scene: 3\n",
        "scene: {object_id: car, colour: red}\n",
        "scene: {ambient_lux: 0}\n",
        "attack: {method: fgsm}\n",
        "channel: {sensor_sigma: -1}\n",
        "detector: {kind: yolo}\n",
        "- a\n- b\n",
        "seed: [\n",
        "include: other.yaml\n",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.yaml")


def test_with_seed():
    cfg = config.loads("seed: 3\n")
    assert config.with_seed(cfg, None) is cfg
    assert config.with_seed(cfg, 11)["seed"] == 11 and cfg["seed"] == 3


@pytest.mark.parametrize("name", ["base", "sweep", "suite", "countermeasure"])
def test_shipped_configs_load(name):
    from pathlib import Path

    cfg = config.load(Path(__file__).parent.parent / "configs" / f"{name}.yaml")
    assert config.scene_config(cfg).object_id == "car"
