"""Projection-detection defense.

Frames are summarized by a fixed hand-crafted feature vector (colour
histograms, high-frequency energy, channel statistics and a coarse grid of
local brightness variance) and scored by L2-regularized logistic regression.
A gate in front of the detector flags frames whose score crosses a threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import laplace

from . import container, imaging, scene
from .attack import init_random_patch
from .channel import ChannelParams, capture
from .detector import DegenerateDataset, UntrainedModel, fit_logistic, logistic
from .rng import RngStream

FEATURE_SPEC = "sv16-lap-rgb-grid8/v1"
HIST_BINS = 16
GRID = 8
LABELS = ("unpatched", "patched")

__all__ = [
    "ClassifierModel",
    "DegenerateDataset",
    "EvalReport",
    "LabeledFrame",
    "UntrainedModel",
    "VariationRanges",
    "augment",
    "augment_image",
    "evaluate",
    "evaluate_scores",
    "extract_features",
    "gate",
    "generate_dataset",
    "train_classifier",
]


@dataclass(frozen=True, eq=False)
class LabeledFrame:
    image: np.ndarray
    label: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")

    @property
    def y(self) -> int:
        return int(self.label == "patched")


@dataclass(frozen=True)
class VariationRanges:
    objects: tuple = scene.OBJECTS
    backgrounds: tuple = ("lab", "plain", "street")
    distance_m: tuple = (0.5, 1.5)
    angle_deg: tuple = (-20.0, 20.0)
    ambient_lux: tuple = (100.0, 400.0)
    projector_lumens: tuple = (1800.0, 6000.0)
    albedo: tuple = (0.5, 1.0)
    patch_side: int = 8


# --------------------------------------------------------------------------
# Data


def _sample_config(r: RngStream, ranges: VariationRanges) -> scene.SceneConfig:
    def u(lo_hi):
        return float(r.uniform(low=lo_hi[0], high=lo_hi[1]))

    return scene.SceneConfig(
        object_id=ranges.objects[int(r.integers(len(ranges.objects)))],
        background_id=ranges.backgrounds[int(r.integers(len(ranges.backgrounds)))],
        distance_m=u(ranges.distance_m),
        angle_deg=u(ranges.angle_deg),
        ambient_lux=u(ranges.ambient_lux),
        projector_lumens=u(ranges.projector_lumens),
        surface_albedo=(u(ranges.albedo),) * 3,
    )


def generate_frame(index: int, patched: bool, ranges: VariationRanges, rng: RngStream, channel: ChannelParams) -> LabeledFrame:
    r = rng.child("frame", index)
    cfg = _sample_config(r, ranges)
    if patched:
        patch = init_random_patch(ranges.patch_side, r.child("patch"))
        img = scene.render_projection(cfg, patch)
    else:
        img = scene.render_clean(cfg)
    frame = capture(img, channel, r.child("capture"))
    return LabeledFrame(frame, LABELS[int(patched)], cfg.to_dict())


def generate_dataset(
    n_patched: int,
    n_unpatched: int,
    ranges: VariationRanges | None = None,
    rng: RngStream | None = None,
    channel: ChannelParams | None = None,
) -> list[LabeledFrame]:
    """Patched frames first, then unpatched; each frame has its own stream."""
    if n_patched < 1 or n_unpatched < 1:
        raise ValueError("need at least one frame of each label")
    ranges = ranges or VariationRanges()
    rng = rng or RngStream(0)
    channel = channel or ChannelParams()
    frames = [generate_frame(i, True, ranges, rng, channel) for i in range(n_patched)]
    frames += [generate_frame(n_patched + i, False, ranges, rng, channel) for i in range(n_unpatched)]
    return frames


def write_dataset(frames, out_dir) -> Path:
    """Write one PPM per frame and a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, f in enumerate(frames):
        name = f"frame_{i:05d}.ppm"
        imaging.write_ppm(out / name, f.image)
        lines.append(json.dumps({"path": name, "label": f.label, "provenance": f.provenance}, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_dataset(manifest) -> list[LabeledFrame]:
    manifest = Path(manifest)
    frames = []
    for line in manifest.read_text().splitlines():
        if line.strip():
            entry = json.loads(line)
            img = imaging.read_ppm(manifest.parent / entry["path"])
            frames.append(LabeledFrame(img, entry["label"], entry.get("provenance", {})))
    return frames


# --------------------------------------------------------------------------
# Augmentation


def augment_image(img: np.ndarray, rotation_deg: float = 0.0, shift=(0.0, 0.0), zoom: float = 1.0, hflip: bool = False) -> np.ndarray:
    """Rotate/zoom about the image centre, shift by a fraction of the size, flip.

    Identity parameters return an exact copy.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out = img
    if rotation_deg != 0.0 or zoom != 1.0 or shift[0] != 0.0 or shift[1] != 0.0:
        c = ((w - 1) / 2.0, (h - 1) / 2.0)
        hmat = (
            imaging.translation(c[0] + shift[0] * w, c[1] + shift[1] * h)
            @ imaging.rotation(rotation_deg)
            @ imaging.scaling(zoom)
            @ imaging.translation(-c[0], -c[1])
        )
        out, _ = imaging.warp(img, hmat, w, h, border="replicate")
        out = np.clip(out, 0.0, 1.0)
    if hflip:
        out = out[:, ::-1]
    return np.array(out, copy=True)


def augment(frame: LabeledFrame, rng: RngStream, kind: str | None = None) -> LabeledFrame:
    """Apply one randomly chosen transform; ``kind`` forces the transform type."""
    kinds = ("rotation", "shift", "zoom", "hflip")
    if kind is None:
        kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "rotation":
        img = augment_image(frame.image, rotation_deg=float(rng.uniform(low=-15.0, high=15.0)))
    elif kind == "shift":
        img = augment_image(frame.image, shift=tuple(float(v) for v in rng.uniform(2, low=-0.1, high=0.1)))
    elif kind == "zoom":
        img = augment_image(frame.image, zoom=float(rng.uniform(low=0.9, high=1.1)))
    elif kind == "hflip":
        img = augment_image(frame.image, hflip=True)
    else:
        raise ValueError(f"unknown augmentation {kind!r}")
    return LabeledFrame(img, frame.label, frame.provenance)


# --------------------------------------------------------------------------
# Features


def _saturation_value(img: np.ndarray):
    mx = img.max(axis=2)
    mn = img.min(axis=2)
    sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return sat, mx


def extract_features(img: np.ndarray) -> np.ndarray:
    """Fixed-length descriptor (103 values, layout in ``FEATURE_SPEC``).

    ``[0:16]`` saturation histogram, ``[16:32]`` value histogram (both
    normalized to sum 1), ``[32]`` mean absolute Laplacian of luminance,
    ``[33:39]`` per-channel mean then std, ``[39:103]`` brightness variance
    in each cell of an 8x8 grid (row-major).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    sat, val = _saturation_value(img)
    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    hs = np.histogram(sat, edges)[0] / sat.size
    hv = np.histogram(val, edges)[0] / val.size
    lum = img @ np.array([0.299, 0.587, 0.114])
    lap = np.array([np.abs(laplace(lum, mode="nearest")).mean()])
    stats = np.concatenate([img.mean(axis=(0, 1)), img.std(axis=(0, 1))])
    rows = np.linspace(0, h, GRID + 1).astype(int)
    cols = np.linspace(0, w, GRID + 1).astype(int)
    grid = np.array([lum[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].var() for i in range(GRID) for j in range(GRID)])
    return np.concatenate([hs, hv, lap, stats, grid])


# --------------------------------------------------------------------------
# Classifier


@dataclass
class ClassifierModel:
    weights: np.ndarray
    bias: float
    feature_spec: str = FEATURE_SPEC
    history: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    trained: bool = False

    def score_features(self, x: np.ndarray) -> np.ndarray:
        return logistic(np.asarray(x) @ self.weights + self.bias)

    def score(self, img: np.ndarray) -> float:
        if not self.trained:
            raise UntrainedModel("classifier has not been trained")
        return float(self.score_features(extract_features(img)))

    def save(self, path) -> None:
        meta = {
            "feature_spec": self.feature_spec,
            "bias": self.bias,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "trained": self.trained,
            "history": self.history,
        }
        container.save(path, "projection-classifier", meta, {"weights": self.weights})

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        _, meta, arrays = container.load(path, "projection-classifier")
        return cls(
            arrays["weights"], meta["bias"], meta["feature_spec"], meta["history"], meta["best_epoch"], meta["epochs_run"], meta["trained"]
        )


def _bce(p, y) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def stratified_split(labels, val_split: float, rng: RngStream):
    """Seeded shuffle within each label; returns (train_idx, val_idx), both sorted."""
    labels = np.asarray(labels)
    train, val = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(val_split * len(idx)))
        val += list(idx[:n_val])
        train += list(idx[n_val:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int))


def _as_xy(data):
    """Accept frames or an ``(X, y)`` pair of features and 0/1 labels."""
    if isinstance(data, tuple) and len(data) == 2:
        x, y = data
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    x = np.stack([extract_features(f.image) for f in data])
    y = np.array([f.y for f in data], dtype=np.float64)
    return x, y


def train_classifier(
    data,
    epochs_max: int = 5000,
    lr: float = 1.0,
    l2_weight: float = 1e-4,
    patience: int = 100,
    val_split: float = 0.2,
    rng: RngStream | None = None,
    min_delta: float = 1e-7,
) -> ClassifierModel:
    """Full-batch gradient descent with early stopping on validation loss.

    Training halts once ``patience`` epochs pass without the validation loss
    improving by more than ``min_delta`` (so ``patience=0`` runs one epoch);
    the returned weights are those of the best validation epoch.
    """
    x, y = _as_xy(data)
    if y.size == 0 or np.all(y == y[0]):
        raise DegenerateDataset("training data needs both labels")
    rng = rng or RngStream(0)
    tr, va = stratified_split(y, val_split, rng)
    if len(va) == 0:
        va = tr
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]

    history = []
    best = {"loss": np.inf, "epoch": 0, "w": np.zeros(x.shape[1]), "b": 0.0}

    def monitor(epoch, w, b, train_loss):
        pv = logistic(xv @ w + b)
        val_loss = _bce(pv, yv)
        report = evaluate_scores(pv, yv)
        history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_accuracy": report.accuracy, "val_auc": report.auc}
        )
        if val_loss < best["loss"] - min_delta:
            best.update(loss=val_loss, epoch=epoch, w=w.copy(), b=b)
        return epoch - best["epoch"] >= patience

    fit_logistic(xt, yt, epochs_max, lr, l2_weight, callback=monitor)
    return ClassifierModel(best["w"], float(best["b"]), FEATURE_SPEC, history, best["epoch"], len(history), True)


# --------------------------------------------------------------------------
# Evaluation and gating


@dataclass
class EvalReport:
    accuracy: float
    auc: float
    roc: list  # (fpr, tpr) points from (0, 0) to (1, 1)
    confusion: dict  # tn, fp, fn, tp at threshold 0.5

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "roc": [[float(a), float(b)] for a, b in self.roc],
            "confusion": dict(self.confusion),
        }


def roc_curve(scores, labels):
    """ROC points from a sweep over every distinct score, highest first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    points = [(0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        pred = s >= t
        tpr = (pred & y).sum() / n_pos if n_pos else 0.0
        fpr = (pred & ~y).sum() / n_neg if n_neg else 0.0
        points.append((float(fpr), float(tpr)))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def trapezoid_auc(points) -> float:
    pts = np.asarray(points)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def evaluate_scores(scores, labels, threshold: float = 0.5) -> EvalReport:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pred = s >= threshold
    confusion = {
        "tn": int((~pred & ~y).sum()),
        "fp": int((pred & ~y).sum()),
        "fn": int((~pred & y).sum()),
        "tp": int((pred & y).sum()),
    }
    roc = roc_curve(s, y)
    return EvalReport(float((pred == y).mean()) if y.size else 0.0, trapezoid_auc(roc), roc, confusion)


def evaluate(model: ClassifierModel, data) -> EvalReport:
    if not model.trained:
        raise UntrainedModel("classifier has not been trained")
    x, y = _as_xy(data)
    return evaluate_scores(model.score_features(x), y)


def gate(image: np.ndarray, model: ClassifierModel, threshold: float = 0.5) -> str:
    """``"flag"`` when the projection score reaches ``threshold``, else ``"pass"``."""
    return "flag" if model.score(image) >= threshold else "pass"
