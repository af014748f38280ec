"""Adversarial patch learning and the three application scenarios.

Scenario tags:

* ``DL-DA``: learn on the noiseless digital composite, apply digitally.
* ``DL-PA``: take the DL-DA patch, print it, stick it on the object, capture.
* ``PL-PA``: learn through the projector/camera loop (project, capture,
  update), then evaluate the projected patch on fresh captures.

Patch updates are gradient-free: SPSA with Rademacher perturbations, or a
block-wise central finite difference for cross-checking on tiny patches.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import scene as scn
from .analysis.metrics import CleanZero, NormTriple, norms, reduction_pct
from .channel import ChannelParams, capture, print_patch
from .rng import RngStream, derive_stream_id

SCENARIOS = ("clean", "DL-DA", "DL-PA", "PL-PA")
METHODS = ("dpatch_like", "nap_like")
# Per-method settings used by studies that run both objectives side by side.
METHOD_DEFAULTS = {"dpatch_like": {}, "nap_like": {"tv_weight": 0.05}}
EVAL_CAPTURES = 10


class AttackError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Patch:
    raster: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.raster, dtype=np.float64)
        if r.ndim != 3 or r.shape[0] != r.shape[1] or r.shape[2] != 3:
            raise AttackError(f"patch raster must be square (side, side, 3), got {r.shape}")
        if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise AttackError("patch samples must lie in [0, 1]")
        object.__setattr__(self, "raster", r)

    @property
    def side(self) -> int:
        return self.raster.shape[0]

    def __eq__(self, other):
        return isinstance(other, Patch) and np.array_equal(self.raster, other.raster)


@dataclass(frozen=True)
class AttackConfig:
    method: str = "dpatch_like"
    max_iters: int = 1000
    step_size: float = 5.0 / 255.0
    captures_per_update: int = 4
    spsa_c: float = 0.05
    spsa_samples: int = 1
    tv_weight: float = 0.0
    palette: tuple = ()
    palette_weight: float = 1.0
    early_stop_conf: float = 0.0
    seed: int = 0
    patch_side: int = 8
    gradient: str = "spsa"
    fd_block: int = 3

    def __post_init__(self):
        if self.method not in METHODS:
            raise AttackError(f"method must be one of {METHODS}")
        if self.max_iters < 1:
            raise AttackError("max_iters must be at least 1")
        if self.step_size < 0:
            raise AttackError("step_size must be non-negative")
        if self.captures_per_update < 1 or self.spsa_samples < 1:
            raise AttackError("captures_per_update and spsa_samples must be at least 1")
        if self.spsa_c <= 0:
            raise AttackError("spsa_c must be positive")
        if self.tv_weight < 0 or self.palette_weight < 0:
            raise AttackError("regularizer weights must be non-negative")
        if not 0.0 <= self.early_stop_conf <= 1.0:
            raise AttackError("early_stop_conf must lie in [0, 1]")
        if self.patch_side < 2:
            raise AttackError("patch_side must be at least 2")
        if self.gradient not in ("spsa", "fd"):
            raise AttackError("gradient must be 'spsa' or 'fd'")
        object.__setattr__(self, "palette", tuple(tuple(float(v) for v in c) for c in self.palette))

    @classmethod
    def digital(cls, **kw) -> "AttackConfig":
        return cls(**{"max_iters": 1000, "step_size": 5.0 / 255.0, **kw})

    @classmethod
    def physical(cls, **kw) -> "AttackConfig":
        return cls(**{"max_iters": 50, "step_size": 0.5, "spsa_c": 0.1, **kw})

    def with_(self, **changes) -> "AttackConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["palette"] = [list(c) for c in self.palette]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise AttackError(f"unknown attack fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AttackTrace:
    scenario: str
    seed: int
    confidences: list
    final_patch: Patch
    iterations: int
    final_confidence: float
    clean_confidence: float

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "confidences": [float(c) for c in self.confidences],
            "iterations": self.iterations,
            "final_confidence": float(self.final_confidence),
            "clean_confidence": float(self.clean_confidence),
            "patch_side": self.final_patch.side,
        }


@dataclass
class ExperimentRecord:
    scenario: str
    object_id: str
    view: str  # "mono" or "stereo"
    seed: int
    clean_conf: float
    patched_conf: float
    reduction_pct: float | None  # None marks an undetectable clean object
    norms: NormTriple | None = None
    trace: list = field(default_factory=list)
    scene: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    channel: dict = field(default_factory=dict)
    detector: str = ""

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "object_id": self.object_id,
            "view": self.view,
            "seed": self.seed,
            "clean_conf": float(self.clean_conf),
            "patched_conf": float(self.patched_conf),
            "reduction_pct": self.reduction_pct,
            "norms": None if self.norms is None else self.norms.to_dict(),
            "trace": [float(c) for c in self.trace],
            "scene": self.scene,
            "attack": self.attack,
            "channel": self.channel,
            "detector": self.detector,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# --------------------------------------------------------------------------
# Objective pieces


def init_random_patch(side: int, rng: RngStream) -> Patch:
    if side < 2:
        raise AttackError("patch side must be at least 2")
    return Patch(rng.uniform((side, side, 3)))


def total_variation(raster: np.ndarray) -> float:
    """Mean absolute neighbour difference, normalized by 3 * side**2."""
    r = np.asarray(raster, dtype=np.float64)
    dx = np.abs(np.diff(r, axis=1)).sum()
    dy = np.abs(np.diff(r, axis=0)).sum()
    return float((dx + dy) / (3.0 * r.shape[0] * r.shape[1]))


def palette_distance(raster: np.ndarray, palette) -> float:
    """Mean squared RGB distance from each pixel to its nearest palette colour."""
    if len(palette) == 0:
        return 0.0
    r = np.asarray(raster, dtype=np.float64).reshape(-1, 3)
    pal = np.asarray(palette, dtype=np.float64)
    d2 = ((r[:, None, :] - pal[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean())


def loss(conf: float, patch, cfg: AttackConfig) -> float:
    if cfg.method == "dpatch_like":
        return float(conf)
    raster = getattr(patch, "raster", patch)
    reg = cfg.tv_weight * total_variation(raster) + cfg.palette_weight * palette_distance(raster, cfg.palette)
    return float(conf) + reg


# --------------------------------------------------------------------------
# Gradient-free updates


def spsa_gradient(objective: Callable[[np.ndarray], float], x: np.ndarray, c: float, samples: int, rng: RngStream):
    """SPSA estimate of the gradient of ``objective`` at ``x``.

    Perturbed points are clipped to [0, 1] before evaluation.  Returns the
    estimate and the list of objective values that were observed.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    seen = []
    for _ in range(samples):
        delta = rng.rademacher(x.shape)
        f_plus = objective(np.clip(x + c * delta, 0.0, 1.0))
        f_minus = objective(np.clip(x - c * delta, 0.0, 1.0))
        seen += [f_plus, f_minus]
        g += (f_plus - f_minus) / (2.0 * c * delta)
    return g / samples, seen


def fd_gradient(objective: Callable[[np.ndarray], float], x: np.ndarray, c: float, block: np.ndarray):
    """Central differences over the flat coordinates in ``block``; zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros(x.size)
    seen = []
    for i in np.asarray(block).ravel():
        e = np.zeros(x.size)
        e[i] = c
        f_plus = objective(np.clip(x + e.reshape(x.shape), 0.0, 1.0))
        f_minus = objective(np.clip(x - e.reshape(x.shape), 0.0, 1.0))
        seen += [f_plus, f_minus]
        g[i] = (f_plus - f_minus) / (2.0 * c)
    return g.reshape(x.shape), seen


def spsa_step(objective, patch, cfg: AttackConfig, rng: RngStream):
    """One clipped descent step along the SPSA estimate."""
    raster = getattr(patch, "raster", patch)
    g, _ = spsa_gradient(objective, raster, cfg.spsa_c, cfg.spsa_samples, rng)
    new = np.clip(raster - cfg.step_size * g, 0.0, 1.0)
    return Patch(new) if isinstance(patch, Patch) else new


def optimize(objective, patch: Patch, cfg: AttackConfig, rng: RngStream):
    """Run the update loop.

    ``objective(raster)`` returns ``(loss, confidence)``.  Each trace entry is
    the mean confidence over the evaluations made in that iteration.
    """
    raster = patch.raster.copy()
    trace = []
    n = raster.size
    n_blocks = -(-n // cfg.fd_block)
    for it in range(cfg.max_iters):
        conf_log = []

        def logged(x):
            val, conf = objective(x)
            conf_log.append(conf)
            return val

        if cfg.gradient == "spsa":
            g, _ = spsa_gradient(logged, raster, cfg.spsa_c, cfg.spsa_samples, rng)
        else:
            b = it % n_blocks
            g, _ = fd_gradient(logged, raster, cfg.spsa_c, np.arange(b * cfg.fd_block, min((b + 1) * cfg.fd_block, n)))
        raster = np.clip(raster - cfg.step_size * g, 0.0, 1.0)
        conf = float(np.mean(conf_log))
        trace.append(conf)
        if conf <= cfg.early_stop_conf:
            break
    return Patch(raster), trace


# --------------------------------------------------------------------------
# Scenario runners


def _label(scene_cfg, label):
    return scene_cfg.object_id if label is None else label


def _streams(seed: int, *path) -> RngStream:
    return RngStream(seed, derive_stream_id(seed, *path))


def run_dl_da(scene_cfg: scn.SceneConfig, detector, cfg: AttackConfig, label: str | None = None) -> AttackTrace:
    label = _label(scene_cfg, label)
    clean = scn.render_clean(scene_cfg)
    clean_conf = detector.confidence(clean, label)
    patch = init_random_patch(cfg.patch_side, _streams(cfg.seed, "init", scene_cfg.object_id))

    def objective(x):
        conf = detector.confidence(scn.digital_composite(scene_cfg, x, clean), label)
        return loss(conf, x, cfg), conf

    final, trace = optimize(objective, patch, cfg, _streams(cfg.seed, "spsa", "DL-DA", scene_cfg.object_id))
    final_conf = detector.confidence(scn.digital_composite(scene_cfg, final, clean), label)
    return AttackTrace("DL-DA", cfg.seed, trace, final, len(trace), final_conf, clean_conf)


def _mean_conf(detector, frames, label) -> float:
    return float(np.mean([detector.confidence(f, label) for f in frames]))


def _captured_views(scene_cfg, application, patch, channel, rng, count, rig):
    """Noisy captures of the left (reference) lens and, if ``rig`` is set, the right lens."""
    if rig is None:
        if application == "clean":
            img = scn.render_clean(scene_cfg)
        elif application == "sticker":
            img = scn.render_sticker(scene_cfg, patch)
        else:
            img = scn.render_projection(scene_cfg, patch)
        left, right = img, None
    else:
        left, right = scn.render_stereo(scene_cfg, rig, application, patch)
    lefts = [capture(left, channel, rng.child("left", i)) for i in range(count)]
    rights = None if right is None else [capture(right, channel, rng.child("right", i)) for i in range(count)]
    return lefts, rights


def evaluate_physical(scene_cfg, detector, application, patch, channel, rng, label=None, rig=None, count=EVAL_CAPTURES):
    """Mean confidence over ``count`` captures and the first captured frame.

    With a stereo rig each capture pair scores the better of the two lenses.
    The left lens draws exactly the noise that the monocular evaluation would,
    so a stereo score never falls below its monocular counterpart.
    """
    label = _label(scene_cfg, label)
    lefts, rights = _captured_views(scene_cfg, application, patch, channel, rng, count, rig)
    if rights is None:
        scores = [detector.confidence(f, label) for f in lefts]
    else:
        scores = [max(detector.confidence(a, label), detector.confidence(b, label)) for a, b in zip(lefts, rights)]
    return float(np.mean(scores)), lefts[0]


def _reduction(clean_conf, patched_conf):
    try:
        return reduction_pct(clean_conf, patched_conf)
    except CleanZero:
        return None


def _record(scenario, scene_cfg, view, cfg, channel, detector, clean_conf, patched_conf, norm, trace):
    return ExperimentRecord(
        scenario=scenario,
        object_id=scene_cfg.object_id,
        view=view,
        seed=cfg.seed,
        clean_conf=clean_conf,
        patched_conf=patched_conf,
        reduction_pct=_reduction(clean_conf, patched_conf),
        norms=norm,
        trace=list(trace),
        scene=scene_cfg.to_dict(),
        attack=cfg.to_dict(),
        channel=channel.to_dict() if channel is not None else {},
        detector=getattr(detector, "kind", type(detector).__name__),
    )


def dl_da_record(scene_cfg, detector, cfg, trace: AttackTrace, rig=None, label=None) -> ExperimentRecord:
    """Record for a digital attack; the stereo view pastes the patch into each lens."""
    label = _label(scene_cfg, label)
    clean = scn.render_clean(scene_cfg)
    patched = scn.digital_composite(scene_cfg, trace.final_patch, clean)
    clean_conf, patched_conf = trace.clean_confidence, trace.final_confidence
    if rig is not None:
        cl, cr = scn.render_stereo(scene_cfg, rig, "clean")
        pl, pr = scn.render_stereo(scene_cfg, rig, "digital", trace.final_patch)
        clean_conf = max(detector.confidence(cl, label), detector.confidence(cr, label))
        patched_conf = max(detector.confidence(pl, label), detector.confidence(pr, label))
    view = "mono" if rig is None else "stereo"
    return _record("DL-DA", scene_cfg, view, cfg, None, detector, clean_conf, patched_conf, norms(patched, clean), trace.confidences)


def run_dl_pa(
    scene_cfg: scn.SceneConfig,
    detector,
    cfg: AttackConfig,
    channel: ChannelParams,
    dl_da: AttackTrace | None = None,
    rig: scn.StereoRig | None = None,
    label: str | None = None,
) -> ExperimentRecord:
    label = _label(scene_cfg, label)
    if dl_da is None:
        dl_da = run_dl_da(scene_cfg, detector, cfg, label)
    printed = print_patch(dl_da.final_patch, channel)
    rng = _streams(channel.seed, "eval", scene_cfg.object_id)
    clean_conf, clean_frame = evaluate_physical(scene_cfg, detector, "clean", None, channel, rng.child("clean"), label, rig)
    patched_conf, patched_frame = evaluate_physical(scene_cfg, detector, "sticker", printed, channel, rng.child("DL-PA"), label, rig)
    view = "mono" if rig is None else "stereo"
    return _record("DL-PA", scene_cfg, view, cfg, channel, detector, clean_conf, patched_conf, norms(patched_frame, clean_frame), dl_da.confidences)


def run_papla(
    scene_cfg: scn.SceneConfig,
    detector,
    cfg: AttackConfig,
    channel: ChannelParams,
    label: str | None = None,
    eval_rigs=(None,),
):
    """Physical learning loop: project, capture, update.

    Returns the trace and one record per entry of ``eval_rigs`` (``None``
    for the monocular view, a :class:`StereoRig` for stereo).
    """
    label = _label(scene_cfg, label)
    capture_rng = _streams(channel.seed, "papla-capture", scene_cfg.object_id, cfg.seed)
    counter = [0]

    def objective(x):
        frame = scn.render_projection(scene_cfg, x)
        confs = []
        for _ in range(cfg.captures_per_update):
            confs.append(detector.confidence(capture(frame, channel, capture_rng.child(counter[0])), label))
            counter[0] += 1
        conf = float(np.mean(confs))
        return loss(conf, x, cfg), conf

    patch = init_random_patch(cfg.patch_side, _streams(cfg.seed, "init", scene_cfg.object_id))
    final, trace_vals = optimize(objective, patch, cfg, _streams(cfg.seed, "spsa", "PL-PA", scene_cfg.object_id))

    rng = _streams(channel.seed, "eval", scene_cfg.object_id)
    records = []
    clean_conf_mono = None
    for rig in eval_rigs:
        clean_conf, clean_frame = evaluate_physical(scene_cfg, detector, "clean", None, channel, rng.child("clean"), label, rig)
        patched_conf, patched_frame = evaluate_physical(scene_cfg, detector, "projection", final, channel, rng.child("PL-PA"), label, rig)
        if rig is None:
            clean_conf_mono = clean_conf
        view = "mono" if rig is None else "stereo"
        records.append(
            _record("PL-PA", scene_cfg, view, cfg, channel, detector, clean_conf, patched_conf, norms(patched_frame, clean_frame), trace_vals)
        )
    trace = AttackTrace(
        "PL-PA", cfg.seed, trace_vals, final, len(trace_vals),
        records[0].patched_conf if records else float("nan"),
        clean_conf_mono if clean_conf_mono is not None else (records[0].clean_conf if records else float("nan")),
    )
    return trace, records


def clean_record(scene_cfg, detector, cfg, channel, rig=None, label=None) -> ExperimentRecord:
    rng = _streams(channel.seed, "eval", scene_cfg.object_id)
    conf, _ = evaluate_physical(scene_cfg, detector, "clean", None, channel, rng.child("clean"), _label(scene_cfg, label), rig)
    view = "mono" if rig is None else "stereo"
    return _record("clean", scene_cfg, view, cfg, channel, detector, conf, conf, NormTriple(0.0, 0, 0.0), [])


def run_scenario_suite(
    scenes,
    scenarios,
    detector,
    digital_cfg: AttackConfig,
    physical_cfg: AttackConfig,
    channel: ChannelParams,
    rig: scn.StereoRig | None = None,
    views=("mono", "stereo"),
) -> list[ExperimentRecord]:
    """One record per (scene, scenario, view), in input order.

    ``scenes`` is a sequence of :class:`SceneConfig` (one per object).
    """
    rig = rig if rig is not None else scn.StereoRig()
    unknown = set(scenarios) - set(SCENARIOS)
    if unknown:
        raise AttackError(f"unknown scenarios {sorted(unknown)}")
    rigs = [None if v == "mono" else rig for v in views]
    out = []
    for scene_cfg in scenes:
        dl_da = None
        if "DL-DA" in scenarios or "DL-PA" in scenarios:
            dl_da = run_dl_da(scene_cfg, detector, digital_cfg)
        papla = run_papla(scene_cfg, detector, physical_cfg, channel, eval_rigs=rigs)[1] if "PL-PA" in scenarios else None
        for scenario in scenarios:
            for i, r in enumerate(rigs):
                if scenario == "clean":
                    out.append(clean_record(scene_cfg, detector, physical_cfg, channel, r))
                elif scenario == "DL-DA":
                    out.append(dl_da_record(scene_cfg, detector, digital_cfg, dl_da, r))
                elif scenario == "DL-PA":
                    out.append(run_dl_pa(scene_cfg, detector, digital_cfg, channel, dl_da, r))
                else:
                    out.append(papla[i])
    return out
