"""Toy object detectors.

Two families stand in for production detectors:

* :class:`TemplateDetector` slides every class template of a half-octave
  scale pyramid over the frame, scores windows by normalized
  cross-correlation (NCC) and squashes the best score through
  ``logistic(a * ncc + b)``.
* :class:`LinearDetector` is a whole-frame logistic regression on a 16x16
  grayscale thumbnail, one model per class.

Both expose ``detect(img) -> list[Detection]`` and the faster
``confidence(img, label)`` used inside attack loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import container, imaging, scene

# Calibrated so clean white-surface scenes score around 0.95 (see README).
DEFAULT_SLOPE = 20.0
DEFAULT_OFFSET = -15.6
PYRAMID_LEVELS = 5
PYRAMID_STEP = 2.0 ** -0.5
REFERENCE_DISTANCE_M = 0.5
TEMPLATE_BACKGROUND = 0.5
TEMPLATE_SHADES = (1.0, 0.5, 0.15)
GRID = (16, 16)
# Confidences below this count as "not detected" and are reported as 0.
DETECTION_THRESHOLD = 0.05
_VAR_EPS = 1e-10


class DetectorError(ValueError):
    pass


class ImageSmallerThanTemplate(DetectorError):
    pass


class DegenerateDataset(DetectorError):
    pass


class UntrainedModel(DetectorError):
    pass


@dataclass(frozen=True)
class Detection:
    label: str
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DetectorError(f"confidence {self.confidence} outside [0, 1]")


def logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def best_confidence(dets, label: str) -> float:
    return max((d.confidence for d in dets if d.label == label), default=0.0)


def stereo_confidence(left, right, label: str) -> float:
    """Fuse two lenses by keeping the more confident one."""
    return max(best_confidence(left, label), best_confidence(right, label))


# --------------------------------------------------------------------------
# Template matching


@dataclass
class TemplateDetectorModel:
    templates: dict[str, list[np.ndarray]]
    slope: float = DEFAULT_SLOPE
    offset: float = DEFAULT_OFFSET

    def __post_init__(self):
        if self.slope <= 0:
            raise DetectorError("logistic slope must be positive")
        if not self.templates:
            raise DetectorError("model needs at least one class")

    @property
    def classes(self) -> list[str]:
        return list(self.templates)

    def save(self, path) -> None:
        arrays, layout = {}, {}
        for label, pyramid in self.templates.items():
            layout[label] = len(pyramid)
            for i, tpl in enumerate(pyramid):
                arrays[f"{label}/{i}"] = tpl
        meta = {"slope": self.slope, "offset": self.offset, "layout": layout, "order": self.classes}
        container.save(path, "template-detector", meta, arrays)

    @classmethod
    def load(cls, path) -> "TemplateDetectorModel":
        _, meta, arrays = container.load(path, "template-detector")
        templates = {
            label: [arrays[f"{label}/{i}"] for i in range(meta["layout"][label])] for label in meta["order"]
        }
        return cls(templates, meta["slope"], meta["offset"])


def _resample(img: np.ndarray, scale: float) -> np.ndarray:
    """Anti-aliased resize of a texture by ``scale`` (canvas px per texture px)."""
    if scale < 1.0:
        sigma = (1.0 / scale - 1.0) / 2.0
        img = gaussian_filter(img, sigma=(sigma, sigma) + (0,) * (img.ndim - 2), mode="nearest")
    h, w = img.shape[:2]
    out_w = max(int(round(w * scale)), 1)
    out_h = max(int(round(h * scale)), 1)
    # Map output pixel centres onto the input grid.
    hmat = imaging.scaling(out_w / w, out_h / h) @ imaging.translation(0.5, 0.5)
    hmat = imaging.translation(-0.5, -0.5) @ hmat
    out, _ = imaging.warp(img, hmat, out_w, out_h, border="replicate")
    return out


def class_template(object_id: str, scale: float, albedo=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Object at ``scale`` canvas px per texture px over a neutral backdrop, cropped."""
    tpl = scene.template(object_id)
    refl = tpl.reflectance(albedo)
    rgba = np.concatenate([refl * tpl.alpha[..., None], tpl.alpha[..., None]], axis=2)
    small = _resample(rgba, scale)
    alpha = small[..., 3:4]
    img = small[..., :3] + TEMPLATE_BACKGROUND * (1.0 - alpha)
    ys, xs = np.nonzero(alpha[..., 0] >= 0.5)
    if len(xs) == 0:
        raise DetectorError(f"template of {object_id} vanishes at scale {scale}")
    return np.clip(img[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1], 0.0, 1.0)


def build_template_model(
    classes=scene.OBJECTS,
    levels: int = PYRAMID_LEVELS,
    slope: float = DEFAULT_SLOPE,
    offset: float = DEFAULT_OFFSET,
    reference_distance_m: float = REFERENCE_DISTANCE_M,
    shades=TEMPLATE_SHADES,
) -> TemplateDetectorModel:
    """One template per (surface shade, pyramid level) for every class.

    Painted parts of an object keep their colour while the body takes the
    surface albedo, so a dark car is not a dimmed white car; a small bank of
    body shades keeps the detector usable across surface colours.
    """
    templates = {}
    for label in classes:
        base = scene.object_scale(scene.SceneConfig(object_id=label, distance_m=reference_distance_m))
        templates[label] = [
            class_template(label, base * PYRAMID_STEP**k, (shade,) * 3) for shade in shades for k in range(levels)
        ]
    return TemplateDetectorModel(templates, slope, offset)


class TemplateDetector:
    """NCC sliding-window detector; immutable after construction."""

    kind = "template"

    def __init__(self, model: TemplateDetectorModel | None = None, detection_threshold: float = DETECTION_THRESHOLD):
        self.model = model if model is not None else build_template_model()
        self.detection_threshold = detection_threshold
        self._prepared = {
            label: [self._prepare(t) for t in pyramid] for label, pyramid in self.model.templates.items()
        }
        self._fft_cache: dict = {}

    @property
    def classes(self) -> list[str]:
        return self.model.classes

    @staticmethod
    def _prepare(t: np.ndarray):
        t = np.asarray(t, dtype=np.float64)
        zero_mean = t - t.mean()
        return zero_mean, float(np.sqrt(np.sum(zero_mean**2)))

    def _template_fft(self, label: str, index: int, shape: tuple[int, int]):
        key = (label, index, shape)
        hit = self._fft_cache.get(key)
        if hit is None:
            zero_mean, _ = self._prepared[label][index]
            th, tw = zero_mean.shape[:2]
            pad = np.zeros(shape + (3,))
            pad[:th, :tw] = zero_mean
            hit = np.conj(np.fft.rfft2(pad, axes=(0, 1)))
            self._fft_cache[key] = hit
        return hit

    def ncc_map(self, img: np.ndarray, label: str, index: int, _cache=None) -> np.ndarray:
        """NCC of one template at every fully-contained window position."""
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[:2]
        zero_mean, t_norm = self._prepared[label][index]
        th, tw = zero_mean.shape[:2]
        if th > h or tw > w:
            raise ImageSmallerThanTemplate(f"{label} template {tw}x{th} exceeds image {w}x{h}")
        cache = _cache if _cache is not None else self._image_stats(img)
        spec = cache["fft"]
        numer = np.fft.irfft2(np.sum(spec * self._template_fft(label, index, (h, w)), axis=2), s=(h, w))
        numer = numer[: h - th + 1, : w - tw + 1]
        s1 = _box_sum(cache["i1"], th, tw)
        s2 = _box_sum(cache["i2"], th, tw)
        n = 3.0 * th * tw
        var = np.maximum(s2 - s1 * s1 / n, 0.0)
        ok = (var > _VAR_EPS * n) & (t_norm > 0.0)
        out = np.zeros_like(var)
        out[ok] = numer[ok] / (np.sqrt(var[ok]) * t_norm)
        return np.clip(out, -1.0, 1.0)

    @staticmethod
    def _image_stats(img: np.ndarray) -> dict:
        gray_sum = img.sum(axis=2)
        sq_sum = (img * img).sum(axis=2)
        return {
            "fft": np.fft.rfft2(img, axes=(0, 1)),
            "i1": _integral(gray_sum),
            "i2": _integral(sq_sum),
        }

    def best_match(self, img: np.ndarray, label: str, _cache=None) -> tuple[float, tuple[int, int, int, int]]:
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape[:2]
        cache = _cache if _cache is not None else self._image_stats(img)
        best_score, best_box, fitted = -math.inf, (0, 0, 0, 0), False
        for index, (zero_mean, _) in enumerate(self._prepared[label]):
            th, tw = zero_mean.shape[:2]
            if th > h or tw > w:
                continue
            fitted = True
            ncc = self.ncc_map(img, label, index, cache)
            flat = int(np.argmax(ncc))
            y, x = divmod(flat, ncc.shape[1])
            if ncc[y, x] > best_score:
                best_score, best_box = float(ncc[y, x]), (x, y, x + tw, y + th)
        if not fitted:
            raise ImageSmallerThanTemplate(f"image {w}x{h} is smaller than every {label} template")
        return best_score, best_box

    def squash(self, score: float) -> float:
        return float(logistic(self.model.slope * score + self.model.offset))

    def confidence(self, img: np.ndarray, label: str) -> float:
        if label not in self._prepared:
            return 0.0
        score, _ = self.best_match(img, label)
        conf = self.squash(score)
        return conf if conf >= self.detection_threshold else 0.0

    def detect(self, img: np.ndarray) -> list[Detection]:
        img = np.asarray(img, dtype=np.float64)
        cache = self._image_stats(img)
        dets = []
        for label in self.classes:
            score, box = self.best_match(img, label, cache)
            conf = self.squash(score)
            if conf >= self.detection_threshold:
                dets.append(Detection(label, box, conf))
        return dets


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    out[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    return out


def _box_sum(ii: np.ndarray, th: int, tw: int) -> np.ndarray:
    return ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]


def detect_template(img: np.ndarray, model: TemplateDetectorModel, detection_threshold: float = 0.0) -> list[Detection]:
    """One best-window detection per class; by default nothing is suppressed."""
    return TemplateDetector(model, detection_threshold).detect(img)


# --------------------------------------------------------------------------
# Linear (whole-frame) detector


def thumbnail(img: np.ndarray, grid: tuple[int, int] = GRID) -> np.ndarray:
    """Block-averaged grayscale thumbnail, flattened row-major."""
    img = np.asarray(img, dtype=np.float64)
    gray = img @ np.array([0.299, 0.587, 0.114])
    gh, gw = grid
    h, w = gray.shape
    rows = np.round(np.linspace(0, h, gh + 1)).astype(int)
    cols = np.round(np.linspace(0, w, gw + 1)).astype(int)
    if np.any(np.diff(rows) == 0) or np.any(np.diff(cols) == 0):
        raise DetectorError(f"image {w}x{h} too small for a {gw}x{gh} grid")
    sums = np.add.reduceat(np.add.reduceat(gray, rows[:-1], axis=0), cols[:-1], axis=1)
    counts = np.outer(np.diff(rows), np.diff(cols))
    return (sums / counts).ravel()


@dataclass
class LinearDetectorModel:
    label: str
    weights: np.ndarray
    bias: float
    grid: tuple[int, int] = GRID
    trained: bool = False
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.weights.size != self.grid[0] * self.grid[1]:
            raise DetectorError("weight vector length must match the grid size")

    def score(self, features: np.ndarray) -> np.ndarray:
        return logistic(np.asarray(features) @ self.weights + self.bias)

    def save(self, path) -> None:
        meta = {"label": self.label, "bias": self.bias, "grid": list(self.grid), "trained": self.trained}
        container.save(path, "linear-detector", meta, {"weights": self.weights, "loss": np.asarray(self.loss_history)})

    @classmethod
    def load(cls, path) -> "LinearDetectorModel":
        _, meta, arrays = container.load(path, "linear-detector")
        return cls(meta["label"], arrays["weights"], meta["bias"], tuple(meta["grid"]), meta["trained"], list(arrays["loss"]))


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def fit_logistic(x: np.ndarray, y: np.ndarray, epochs: int, lr: float, l2_weight: float = 0.0, callback=None):
    """Full-batch gradient descent on (optionally L2-penalized) cross-entropy.

    Features are standardized internally; the L2 penalty applies to the
    weights on standardized features, and the result is folded back to raw
    feature space.  Each epoch backtracks the step until the penalized loss
    does not increase, so the loss history is monotone non-increasing.
    ``callback(epoch, w_raw, b_raw, loss)`` may return True to stop early.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    z = (x - mu) / sd
    w = np.zeros(z.shape[1])
    b = 0.0

    def objective(w, b):
        return _bce(logistic(z @ w + b), y) + l2_weight * float(np.sum(w * w))

    def raw(w, b):
        return w / sd, b - float(np.sum(w * mu / sd))

    loss = objective(w, b)
    history = []
    for epoch in range(1, epochs + 1):
        p = logistic(z @ w + b)
        grad_w = z.T @ (p - y) / len(y) + 2.0 * l2_weight * w
        grad_b = float(np.mean(p - y))
        step = lr
        for _ in range(60):
            w_new, b_new = w - step * grad_w, b - step * grad_b
            new_loss = objective(w_new, b_new)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            w_new, b_new, new_loss = w, b, loss
        w, b, loss = w_new, b_new, new_loss
        history.append(loss)
        if callback is not None and callback(epoch, *raw(w, b), loss):
            break
    w_raw, b_raw = raw(w, b)
    return w_raw, b_raw, history


def train_linear_detector(images, labels, epochs: int = 300, lr: float = 1.0, label: str = "object") -> LinearDetectorModel:
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0 or np.all(y == y[0]):
        raise DegenerateDataset("training set needs both positive and negative examples")
    x = np.stack([thumbnail(img) for img in images])
    w, b, history = fit_logistic(x, y, epochs, lr)
    return LinearDetectorModel(label, w, b, GRID, True, history)


class LinearDetector:
    kind = "linear"

    def __init__(self, models, detection_threshold: float = DETECTION_THRESHOLD):
        if isinstance(models, LinearDetectorModel):
            models = [models]
        self.models = {m.label: m for m in models}
        self.detection_threshold = detection_threshold
        for m in self.models.values():
            if not m.trained:
                raise UntrainedModel(f"linear model for {m.label} is untrained")

    @property
    def classes(self) -> list[str]:
        return list(self.models)

    def confidence(self, img: np.ndarray, label: str) -> float:
        model = self.models.get(label)
        if model is None:
            return 0.0
        conf = float(model.score(thumbnail(img, model.grid)))
        return conf if conf >= self.detection_threshold else 0.0

    def detect(self, img: np.ndarray) -> list[Detection]:
        h, w = np.shape(img)[:2]
        dets = []
        for label, model in self.models.items():
            conf = float(model.score(thumbnail(img, model.grid)))
            if conf >= self.detection_threshold:
                dets.append(Detection(label, (0, 0, w, h), conf))
        return dets


def linear_training_set(label: str, n: int, rng, backgrounds=("lab", "plain", "street")):
    """``n`` frames, alternating object renders and background-only frames.

    Poses and lighting are drawn over the usual sweep ranges and every frame
    goes through the default capture channel.
    """
    from .channel import ChannelParams, capture

    channel = ChannelParams()
    images, labels = [], []
    for i in range(n):
        r = rng.child(label, i)
        cfg = scene.SceneConfig(
            object_id=label,
            distance_m=float(r.uniform(low=0.5, high=1.5)),
            angle_deg=float(r.uniform(low=-20.0, high=20.0)),
            ambient_lux=float(r.uniform(low=100.0, high=400.0)),
            surface_albedo=(float(r.uniform(low=0.6, high=1.0)),) * 3,
            background_id=backgrounds[int(r.integers(len(backgrounds)))],
        )
        positive = i % 2 == 0
        img = scene.render_clean(cfg) if positive else scene.render_background(cfg)
        images.append(capture(img, channel, r.child("capture")))
        labels.append(1 if positive else 0)
    return images, labels


def train_default_linear_detector(classes=scene.OBJECTS, n: int = 200, seed: int = 0, epochs: int = 300, lr: float = 1.0):
    from .rng import RngStream

    rng = RngStream(seed, 0x11AE)
    models = []
    for label in classes:
        images, labels = linear_training_set(label, n, rng)
        models.append(train_linear_detector(images, labels, epochs=epochs, lr=lr, label=label))
    return LinearDetector(models)
