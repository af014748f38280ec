"""Experiment harnesses: factor sweep, surface study, norm comparison, transfer.

Every harness derives per-run seeds from one root seed through
:func:`projlab.rng.derive_stream_id`, so results do not depend on execution
order or on how many worker processes ran them.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import attack, scene
from ..channel import ChannelParams
from ..rng import MASK64, RngStream, derive_stream_id
from .anova import AnovaResult, DegenerateGroups, anova_oneway
from .metrics import CleanZero, NormTriple, norms, reduction_pct

SWEEP_FACTORS = ("projector_lumens", "ambient_lux", "distance_m", "angle_deg")
DEFAULT_LEVELS = {
    "projector_lumens": (1800.0, 3000.0, 6000.0),
    "ambient_lux": (100.0, 200.0, 400.0),
    "distance_m": (0.5, 1.0, 1.5),
    "angle_deg": (-20.0, 0.0, 20.0),
}
NORM_SCENARIOS = ("DL-DA", "DL-PA", "PL-PA")


def _seed(root: int, *path) -> int:
    # Keep seeds in the positive 63-bit range so they survive JSON round trips
    # in any consumer.
    return derive_stream_id(root, *path) & (MASK64 >> 1)


def parallel_map(fn, items, jobs: int = 1):
    """Ordered map, optionally across worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def box_stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "min": None, "q1": None, "median": None, "q3": None, "max": None}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3), "max": float(v.max())}


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Factor sweep


@dataclass
class SweepCell:
    index: int
    factors: dict
    seed: int
    clean_conf: float
    patched_conf: float
    reduction_pct: float | None
    trace: list = field(default_factory=list)


@dataclass
class SweepGrid:
    levels: dict
    cells: list

    @property
    def full(self) -> bool:
        return len(self.cells) == int(np.prod([len(v) for v in self.levels.values()]))

    def groups(self, factor: str) -> dict:
        out = {lvl: [] for lvl in self.levels[factor]}
        for c in self.cells:
            if c.reduction_pct is not None:
                out[c.factors[factor]].append(c.reduction_pct)
        return out

    def to_csv(self) -> str:
        header = ["cell", *SWEEP_FACTORS, "seed", "clean_conf", "patched_conf", "reduction_pct"]
        rows = [
            [c.index, *[float(c.factors[f]) for f in SWEEP_FACTORS], c.seed, c.clean_conf, c.patched_conf, c.reduction_pct]
            for c in self.cells
        ]
        return _csv(header, rows)

    def box_csv(self) -> str:
        header = ["factor", "level", "n", "min", "q1", "median", "q3", "max"]
        rows = []
        for f in SWEEP_FACTORS:
            for lvl, vals in self.groups(f).items():
                b = box_stats(vals)
                rows.append([f, float(lvl), b["n"], b["min"], b["q1"], b["median"], b["q3"], b["max"]])
        return _csv(header, rows)


def _sweep_cell(args):
    index, factors, base, channel, detector, attack_cfg, root = args
    seed = _seed(root, "sweep", index)
    cfg = base.with_(**factors)
    acfg = attack_cfg.with_(seed=seed)
    ch = channel.with_(seed=seed)
    trace, (rec,) = attack.run_papla(cfg, detector, acfg, ch)
    return SweepCell(index, dict(factors), seed, rec.clean_conf, rec.patched_conf, rec.reduction_pct, trace.confidences)


def run_factor_sweep(
    base_cfg: scene.SceneConfig,
    channel: ChannelParams,
    detector,
    attack_cfg: attack.AttackConfig,
    levels: dict | None = None,
    seed: int = 0,
    jobs: int = 1,
):
    """PL-PA attack on every cell of the factor grid plus one ANOVA per factor.

    Returns ``(grid, anovas)`` where ``anovas`` maps factor name to an
    :class:`AnovaResult`.  A factor whose groups are too small for ANOVA gets a
    degenerate result with ``F = 0`` and ``p = 1``.
    """
    levels = {f: tuple((levels or DEFAULT_LEVELS).get(f, DEFAULT_LEVELS[f])) for f in SWEEP_FACTORS}
    combos = list(itertools.product(*(levels[f] for f in SWEEP_FACTORS)))
    jobs_args = [
        (i, dict(zip(SWEEP_FACTORS, combo)), base_cfg, channel, detector, attack_cfg, seed) for i, combo in enumerate(combos)
    ]
    grid = SweepGrid(levels, parallel_map(_sweep_cell, jobs_args, jobs))
    return grid, sweep_anovas(grid)


def sweep_anovas(grid: SweepGrid) -> dict:
    out = {}
    for f in SWEEP_FACTORS:
        groups = grid.groups(f)
        labels = list(groups)
        try:
            out[f] = anova_oneway([groups[k] for k in labels], labels, factor=f)
        except DegenerateGroups:
            medians = {k: (float(np.median(v)) if v else None) for k, v in groups.items()}
            out[f] = AnovaResult(f, 0.0, 1.0, (len(labels) - 1, 0), medians, degenerate=True)
    return out


# --------------------------------------------------------------------------
# Surface colour study


@dataclass
class SurfaceResult:
    albedo: tuple
    reductions: list
    mean_reduction: float | None


def _surface_run(args):
    albedo, rep, base, channel, detector, attack_cfg, root = args
    seed = _seed(root, "surface", rep)
    cfg = base.with_(surface_albedo=tuple(albedo))
    _, (rec,) = attack.run_papla(cfg, detector, attack_cfg.with_(seed=seed), channel.with_(seed=_seed(root, "surface-ch", *albedo, rep)))
    return rec.reduction_pct


def run_surface_study(
    albedos,
    base_cfg: scene.SceneConfig,
    channel: ChannelParams,
    detector,
    attack_cfg: attack.AttackConfig,
    repeats: int = 3,
    seed: int = 0,
    jobs: int = 1,
) -> list[SurfaceResult]:
    """PL-PA reduction per surface albedo, averaged over ``repeats`` runs.

    Repeat ``r`` uses the same attack seed for every albedo, so colours are
    compared on identical patch initialisations.
    """
    albedos = [tuple(float(v) for v in a) for a in albedos]
    args = [(a, r, base_cfg, channel, detector, attack_cfg, seed) for a in albedos for r in range(repeats)]
    flat = parallel_map(_surface_run, args, jobs)
    out = []
    for i, a in enumerate(albedos):
        reds = flat[i * repeats : (i + 1) * repeats]
        valid = [r for r in reds if r is not None]
        out.append(SurfaceResult(a, reds, float(np.mean(valid)) if valid else None))
    return out


def surface_csv(results) -> str:
    header = ["albedo_r", "albedo_g", "albedo_b", "repeats", "mean_reduction_pct", "reductions"]
    rows = [[*r.albedo, len(r.reductions), r.mean_reduction, ";".join(_fmt(v) for v in r.reductions)] for r in results]
    return _csv(header, rows)


# --------------------------------------------------------------------------
# Norm comparison


def run_norms_comparison(records) -> dict:
    """Average norm triple per scenario over records that carry norms.

    Scenarios with no records report zeros.
    """
    out = {}
    for s in NORM_SCENARIOS:
        triples = [r.norms for r in records if r.scenario == s and r.norms is not None]
        if not triples:
            out[s] = NormTriple(0.0, 0, 0.0)
            continue
        out[s] = NormTriple(
            float(np.mean([t.l2 for t in triples])),
            float(np.mean([t.linf for t in triples])),
            float(np.mean([t.l0_pct for t in triples])),
        )
    return out


def norms_csv(averages: dict) -> str:
    rows = [[s, t.l2, float(t.linf), t.l0_pct] for s, t in averages.items()]
    return _csv(["scenario", "mean_l2", "mean_linf", "mean_l0_pct"], rows)


# --------------------------------------------------------------------------
# Transfer matrix


@dataclass
class TransferCell:
    method: str
    source: str
    target: str
    object_id: str
    scenario: str
    clean_conf: float
    patched_conf: float
    conf_diff_pct: float | None  # None is the "-" cell: clean object undetected

    @property
    def clean_detectable(self) -> bool:
        return self.conf_diff_pct is not None


def _diff(clean, patched):
    try:
        return reduction_pct(clean, patched)
    except CleanZero:
        return None


def _transfer_source(args):
    method, src_name, scene_cfg, detectors, scenarios, digital_cfg, physical_cfg, channel, root, extra = args
    source = detectors[src_name]
    seed = _seed(root, "transfer", method, src_name, scene_cfg.object_id)
    cells = []
    clean = scene.render_clean(scene_cfg)
    if "DL-DA" in scenarios:
        trace = attack.run_dl_da(scene_cfg, source, digital_cfg.with_(method=method, seed=seed, **extra))
        patched = scene.digital_composite(scene_cfg, trace.final_patch, clean)
        for tgt_name, tgt in detectors.items():
            c = tgt.confidence(clean, scene_cfg.object_id)
            p = tgt.confidence(patched, scene_cfg.object_id)
            cells.append(TransferCell(method, src_name, tgt_name, scene_cfg.object_id, "DL-DA", c, p, _diff(c, p)))
    if "PL-PA" in scenarios:
        ch = channel.with_(seed=seed)
        trace, _ = attack.run_papla(scene_cfg, source, physical_cfg.with_(method=method, seed=seed, **extra), ch, eval_rigs=())
        rng = RngStream(seed, derive_stream_id(seed, "transfer-eval"))
        for tgt_name, tgt in detectors.items():
            c, _ = attack.evaluate_physical(scene_cfg, tgt, "clean", None, ch, rng.child("clean"))
            p, _ = attack.evaluate_physical(scene_cfg, tgt, "projection", trace.final_patch, ch, rng.child("PL-PA"))
            cells.append(TransferCell(method, src_name, tgt_name, scene_cfg.object_id, "PL-PA", c, p, _diff(c, p)))
    return cells


def run_transfer_matrix(
    scenes,
    methods,
    detectors: dict,
    scenarios=("DL-DA", "PL-PA"),
    digital_cfg: attack.AttackConfig | None = None,
    physical_cfg: attack.AttackConfig | None = None,
    channel: ChannelParams | None = None,
    seed: int = 0,
    jobs: int = 1,
    method_overrides: dict | None = None,
):
    """Learn a patch against each source detector, score it on every detector.

    ``method_overrides`` maps a method to AttackConfig changes applied to both
    phases (default :data:`projlab.attack.METHOD_DEFAULTS`).

    Returns ``(cells, averages)``; ``averages[(method, scenario)]`` is the mean
    ``conf_diff_pct`` over detectable cells (``None`` if there are none).
    """
    if len(detectors) < 2:
        raise ValueError("transfer study needs at least two detectors")
    digital_cfg = digital_cfg or attack.AttackConfig.digital()
    physical_cfg = physical_cfg or attack.AttackConfig.physical()
    channel = channel or ChannelParams()
    overrides = attack.METHOD_DEFAULTS if method_overrides is None else method_overrides
    args = [
        (m, src, s, detectors, tuple(scenarios), digital_cfg, physical_cfg, channel, seed, dict(overrides.get(m, {})))
        for m in methods
        for src in detectors
        for s in scenes
    ]
    cells = [c for chunk in parallel_map(_transfer_source, args, jobs) for c in chunk]
    return cells, transfer_averages(cells)


def transfer_averages(cells) -> dict:
    out = {}
    for key in sorted({(c.method, c.scenario) for c in cells}):
        vals = [c.conf_diff_pct for c in cells if (c.method, c.scenario) == key and c.conf_diff_pct is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def transfer_csv(cells) -> str:
    header = ["method", "source", "target", "object", "scenario", "clean_conf", "patched_conf", "conf_diff_pct"]
    rows = [[c.method, c.source, c.target, c.object_id, c.scenario, c.clean_conf, c.patched_conf, c.conf_diff_pct] for c in cells]
    return _csv(header, rows)
