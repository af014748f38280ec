"""Run configuration files.

A config is one YAML mapping.  An optional top-level ``include`` (a path or a
list of paths, relative to the including file) names files whose contents are
merged in first; keys in the including file win, and nested mappings merge
key by key.  Lists are replaced, not concatenated.

Top-level sections (all optional)::

    seed: 0                  # root seed; every stream derives from it
    scene: {...}             # SceneConfig fields, the base scene
    channel: {...}           # ChannelParams fields (seed is set from ``seed``)
    detector: {...}          # kind: template | linear, plus its settings
    attack: {...}            # physical-loop AttackConfig overrides
    digital_attack: {...}    # digital AttackConfig overrides
    suite: {...}             # scenes (list of scene overrides), scenarios, views
    sweep: {...}             # levels: {factor: [values]}
    surface: {...}           # albedos: [[r, g, b], ...], repeats
    transfer: {...}          # detectors: [kinds], methods, scenarios
    countermeasure: {...}    # dataset sizes, training and gate settings
"""

from __future__ import annotations

from pathlib import Path

import yaml

from . import attack, scene
from .channel import ChannelParams

SECTIONS = (
    "include",
    "seed",
    "scene",
    "channel",
    "detector",
    "attack",
    "digital_attack",
    "suite",
    "sweep",
    "surface",
    "transfer",
    "countermeasure",
)

# Standard four-object suite: distances put each object near a pyramid level
# of the template detector so clean confidence sits close to 0.95.
DEFAULT_SUITE = (
    {"object_id": "car", "distance_m": 1.0},
    {"object_id": "stop_sign", "distance_m": 1.0},
    {"object_id": "potted_plant", "distance_m": 0.6},
    {"object_id": "cup", "distance_m": 0.5},
)

DEFAULT_DETECTOR = {"kind": "template", "slope": None, "offset": None, "detection_threshold": None, "model": None}
DEFAULT_COUNTERMEASURE = {
    "n_patched": 338,
    "n_unpatched": 324,
    "epochs_max": 5000,
    "lr": 1.0,
    "l2_weight": 1e-4,
    "patience": 100,
    "val_split": 0.2,
    "threshold": 0.5,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read(path: Path, stack: tuple) -> dict:
    path = path.resolve()
    if path in stack:
        raise ConfigError(f"include cycle through {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = data.pop("include", None) or []
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, _read(path.parent / inc, stack + (path,)))
    return _merge(merged, data)


def load(path) -> dict:
    """Read, resolve includes and validate; returns the merged mapping."""
    data = _read(Path(path), ())
    return validate(data)


def loads(text: str) -> dict:
    """Parse a config held in memory (``include`` is not allowed here)."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    if "include" in data:
        raise ConfigError("include needs a config file on disk")
    return validate(data)


def validate(data: dict) -> dict:
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for key in SECTIONS[2:]:
        if key in data and data[key] is not None and not isinstance(data[key], dict):
            raise ConfigError(f"section {key!r} must be a mapping")
    # Build every typed object once so bad values fail at load time.
    try:
        scene_config(data)
        channel_params(data)
        physical_attack(data)
        digital_attack(data)
        suite_scenes(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    kind = section(data, "detector").get("kind", "template")
    if kind not in ("template", "linear"):
        raise ConfigError(f"unknown detector kind {kind!r}")
    return data


def section(data: dict, name: str) -> dict:
    return dict(data.get(name) or {})


def root_seed(data: dict) -> int:
    return int(data.get("seed", 0))


def scene_config(data: dict) -> scene.SceneConfig:
    return scene.SceneConfig.from_dict(section(data, "scene"))


def channel_params(data: dict) -> ChannelParams:
    return ChannelParams.from_dict({**section(data, "channel"), "seed": root_seed(data)})


def physical_attack(data: dict) -> attack.AttackConfig:
    return attack.AttackConfig.physical(**{"seed": root_seed(data), **section(data, "attack")})


def digital_attack(data: dict) -> attack.AttackConfig:
    return attack.AttackConfig.digital(**{"seed": root_seed(data), **section(data, "digital_attack")})


def suite_scenes(data: dict) -> list[scene.SceneConfig]:
    base = section(data, "scene")
    entries = section(data, "suite").get("scenes", DEFAULT_SUITE)
    return [scene.SceneConfig.from_dict({**base, **dict(e)}) for e in entries]


def detector_settings(data: dict) -> dict:
    return {**DEFAULT_DETECTOR, **section(data, "detector")}


def countermeasure_settings(data: dict) -> dict:
    return {**DEFAULT_COUNTERMEASURE, **section(data, "countermeasure")}


def with_seed(data: dict, seed: int | None) -> dict:
    """Copy of ``data`` with the root seed replaced (``None`` keeps it)."""
    if seed is None:
        return data
    out = dict(data)
    out["seed"] = int(seed)
    return validate(out)
