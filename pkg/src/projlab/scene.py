"""Deterministic renderer for the desk-scale physical world.

Lighting model (all radiance values in unit camera range, clamped once at the
sensor):

* ambient gain   ``a(lux) = min(lux / 400, 1)``
* projector gain ``g(lumens) = lumens / 6000 * G_MAX``
* clean pixel     ``a * R``
* sticker pixel   ``a * S`` where the sticker colour ``S`` replaces ``R``
* projected pixel ``R * (a + g * P)`` inside the projected footprint

``R`` is the surface reflectance: the configured albedo on the object's body
and fixed paint elsewhere.  Objects live in texture space at
``TEXTURE_PX_PER_M`` and are mapped onto the canvas by a homography that
scales with ``1 / distance`` and foreshortens horizontally with the angle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import imaging

OBJECTS = ("car", "stop_sign", "potted_plant", "cup", "bottle")
BACKGROUNDS = ("lab", "plain", "street", "none")

AMBIENT_NORMALIZER_LUX = 400.0
LUMENS_REFERENCE = 6000.0
G_MAX = 1.5
# Canvas pixels spanned by a 1 m object seen from 1 m.
FOCAL_PX = 145.0
TEXTURE_PX_PER_M = 400.0


class SceneError(ValueError):
    pass


class UnknownObject(SceneError):
    pass


class PatchTooLarge(SceneError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    object_id: str = "car"
    # Physical object width; None keeps the template's natural size.
    object_size_m: float | None = None
    surface_albedo: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ambient_lux: float = 100.0
    projector_lumens: float = 6000.0
    distance_m: float = 0.5
    angle_deg: float = 0.0
    background_id: str = "lab"
    canvas: tuple[int, int] = (128, 96)

    def __post_init__(self):
        if self.ambient_lux <= 0 or self.projector_lumens <= 0 or self.distance_m <= 0:
            raise SceneError("ambient_lux, projector_lumens and distance_m must be positive")
        if len(self.surface_albedo) != 3 or not all(0.0 <= c <= 1.0 for c in self.surface_albedo):
            raise SceneError("surface_albedo must be an RGB triple in [0, 1]")
        if self.object_size_m is not None and self.object_size_m <= 0:
            raise SceneError("object_size_m must be positive")
        if self.background_id not in BACKGROUNDS:
            raise SceneError(f"unknown background {self.background_id!r}")
        w, h = self.canvas
        if w < 8 or h < 8:
            raise SceneError("canvas must be at least 8x8")
        object.__setattr__(self, "surface_albedo", tuple(float(c) for c in self.surface_albedo))
        object.__setattr__(self, "canvas", (int(w), int(h)))

    def with_(self, **changes) -> "SceneConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surface_albedo"] = list(self.surface_albedo)
        d["canvas"] = list(self.canvas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        if "surface_albedo" in d:
            d["surface_albedo"] = tuple(d["surface_albedo"])
        if "canvas" in d:
            d["canvas"] = tuple(d["canvas"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SceneError(f"unknown scene fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class StereoRig:
    baseline_m: float = 0.03
    angle_offsets: tuple[float, float] = (0.0, 4.0)

    def __post_init__(self):
        if self.baseline_m < 0:
            raise SceneError("baseline_m must be non-negative")


@dataclass(frozen=True, eq=False)
class ObjectTemplate:
    object_id: str
    texture: np.ndarray  # fixed paint colours, (h, w, 3)
    body: np.ndarray  # 1 where the surface albedo applies
    alpha: np.ndarray  # silhouette
    patch_anchor: tuple[float, float, float, float]  # normalized (x0, y0, x1, y1)
    size_m: tuple[float, float]
    default_albedo: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        x0, y0, x1, y1 = self.patch_anchor
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise SceneError("patch_anchor must lie inside the unit square")

    @property
    def anchor_px(self) -> tuple[int, int, int, int]:
        h, w = self.alpha.shape
        x0, y0, x1, y1 = self.patch_anchor
        return (int(round(x0 * w)), int(round(y0 * h)), int(round(x1 * w)), int(round(y1 * h)))

    def reflectance(self, albedo) -> np.ndarray:
        body = self.body[..., None]
        return body * np.asarray(albedo, dtype=np.float64) + (1.0 - body) * self.texture


# --------------------------------------------------------------------------
# Procedural drawing


def _grid(w: int, h: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + 0.5, ys + 0.5


def _rect(xs, ys, x0, y0, x1, y1):
    return (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)


def _ellipse(xs, ys, cx, cy, rx, ry):
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def _convex(xs, ys, pts):
    """Inside test for a convex polygon given clockwise (screen) vertices."""
    inside = np.ones(xs.shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % n]
        inside &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0
    return inside


def _paint(tex, mask, colour):
    tex[mask] = colour


def _car():
    w, h = 132, 44
    xs, ys = _grid(w, h)
    tex = np.zeros((h, w, 3))
    hull = _rect(xs, ys, 0, 16, 132, 37)
    cabin = _convex(xs, ys, [(30, 16), (44, 2), (90, 2), (106, 16)])
    wheel_l = _ellipse(xs, ys, 30, 36, 8, 8)
    wheel_r = _ellipse(xs, ys, 102, 36, 8, 8)
    alpha = hull | cabin | wheel_l | wheel_r
    body = (hull | cabin).astype(np.float64)

    win_front = _convex(xs, ys, [(70, 14), (70, 5), (87, 5), (99, 14)])
    win_rear = _convex(xs, ys, [(37, 14), (47, 5), (66, 5), (66, 14)])
    for m, c in (
        (win_front | win_rear, (0.12, 0.15, 0.2)),
        (_rect(xs, ys, 0, 33, 132, 37), (0.18, 0.18, 0.18)),
        (_rect(xs, ys, 126, 19, 132, 24), (0.95, 0.85, 0.3)),
        (_rect(xs, ys, 0, 19, 5, 24), (0.8, 0.1, 0.1)),
        (_rect(xs, ys, 50, 16, 51, 33) | _rect(xs, ys, 82, 16, 83, 33), (0.3, 0.3, 0.3)),
        (wheel_l | wheel_r, (0.04, 0.04, 0.04)),
        (_ellipse(xs, ys, 30, 36, 3.5, 3.5) | _ellipse(xs, ys, 102, 36, 3.5, 3.5), (0.6, 0.6, 0.6)),
    ):
        _paint(tex, m, c)
        body[m] = 0.0
    # 4.5 cm patch on the front door.
    anchor = (56 / w, 15 / h, 74 / w, 33 / h)
    return ObjectTemplate("car", tex, body, alpha.astype(np.float64), anchor, (0.33, 0.11))


def _octagon(cx, cy, apothem):
    r = apothem / np.cos(np.pi / 8)
    angles = np.pi / 8 + np.arange(8) * np.pi / 4
    return [(cx + r * np.cos(t), cy + r * np.sin(t)) for t in angles]


def _stop_sign():
    w = h = 120
    xs, ys = _grid(w, h)
    tex = np.zeros((h, w, 3))
    outer = _convex(xs, ys, _octagon(60, 60, 60))
    face = _convex(xs, ys, _octagon(60, 60, 51))
    body = face.astype(np.float64)
    red = (0.78, 0.08, 0.08)
    _paint(tex, outer & ~face, red)
    # Block letters S T O P.
    letters = np.zeros_like(outer)
    for x0 in (22, 42, 62, 82):
        letters |= _rect(xs, ys, x0, 26, x0 + 4, 56)
        letters |= _rect(xs, ys, x0, 26, x0 + 16, 30)
    letters |= _rect(xs, ys, 22, 39, 38, 43) | _rect(xs, ys, 22, 52, 38, 56) | _rect(xs, ys, 34, 39, 38, 56)
    letters |= _rect(xs, ys, 48, 26, 52, 56) & ~_rect(xs, ys, 42, 26, 48, 56)
    letters |= _rect(xs, ys, 74, 26, 78, 56) | _rect(xs, ys, 62, 52, 78, 56)
    letters |= _rect(xs, ys, 94, 26, 98, 43) | _rect(xs, ys, 82, 39, 98, 43)
    letters &= face
    _paint(tex, letters, red)
    body[letters] = 0.0
    anchor = (40 / w, 64 / h, 80 / w, 104 / h)
    return ObjectTemplate("stop_sign", tex, body, outer.astype(np.float64), anchor, (0.30, 0.30))


def _potted_plant():
    w, h = 80, 136
    xs, ys = _grid(w, h)
    tex = np.zeros((h, w, 3))
    pot = _convex(xs, ys, [(8, 84), (72, 84), (64, 136), (16, 136)])
    rim = _rect(xs, ys, 4, 78, 76, 86)
    leaves = (
        _ellipse(xs, ys, 40, 40, 16, 38)
        | _ellipse(xs, ys, 20, 52, 16, 22)
        | _ellipse(xs, ys, 60, 50, 16, 24)
        | _ellipse(xs, ys, 30, 22, 10, 18)
        | _ellipse(xs, ys, 52, 20, 10, 18)
    ) & (ys < 80)
    alpha = pot | rim | leaves
    body = (pot | rim).astype(np.float64)
    _paint(tex, leaves, (0.12, 0.42, 0.12))
    _paint(tex, leaves & (((xs - 40) ** 2 + (ys - 40) ** 2) % 180 < 40), (0.07, 0.25, 0.07))
    _paint(tex, _rect(xs, ys, 4, 84, 76, 87), (0.25, 0.16, 0.1))
    body[leaves | _rect(xs, ys, 4, 84, 76, 87)] = 0.0
    anchor = (32 / w, 94 / h, 48 / w, 110 / h)
    return ObjectTemplate("potted_plant", tex, body, alpha.astype(np.float64), anchor, (0.20, 0.34))


def _cup():
    w, h = 40, 44
    xs, ys = _grid(w, h)
    tex = np.zeros((h, w, 3))
    cup = _rect(xs, ys, 2, 4, 30, 44)
    rim = _ellipse(xs, ys, 16, 4, 14, 3)
    handle = _ellipse(xs, ys, 31, 22, 8, 10) & ~_ellipse(xs, ys, 31, 22, 4.5, 6) & (xs > 29)
    alpha = cup | rim | handle
    body = (cup | rim | handle).astype(np.float64)
    dark = (0.08, 0.08, 0.08)
    for m in (
        _ellipse(xs, ys, 16, 4, 12, 2),
        _rect(xs, ys, 2, 8, 30, 10),
        _rect(xs, ys, 2, 40, 30, 44),
    ):
        _paint(tex, m, dark)
        body[m] = 0.0
    anchor = (8 / w, 16 / h, 24 / w, 32 / h)
    return ObjectTemplate("cup", tex, body, alpha.astype(np.float64), anchor, (0.10, 0.11))


def _bottle():
    w, h = 28, 100
    xs, ys = _grid(w, h)
    tex = np.zeros((h, w, 3))
    shell = _rect(xs, ys, 2, 34, 26, 100) | _convex(xs, ys, [(10, 14), (18, 14), (26, 34), (2, 34)])
    neck = _rect(xs, ys, 10, 2, 18, 14)
    cap = _rect(xs, ys, 9, 0, 19, 6)
    alpha = shell | neck | cap
    body = alpha.astype(np.float64)
    for m, c in ((cap, (0.7, 0.1, 0.1)), (_rect(xs, ys, 2, 40, 26, 44), (0.1, 0.1, 0.1))):
        _paint(tex, m, c)
        body[m] = 0.0
    anchor = (6 / w, 56 / h, 22 / w, 72 / h)
    return ObjectTemplate("bottle", tex, body, alpha.astype(np.float64), anchor, (0.07, 0.25))


_BUILDERS = {
    "car": _car,
    "stop_sign": _stop_sign,
    "potted_plant": _potted_plant,
    "cup": _cup,
    "bottle": _bottle,
}


@lru_cache(maxsize=None)
def template(object_id: str) -> ObjectTemplate:
    try:
        tpl = _BUILDERS[object_id]()
    except KeyError:
        raise UnknownObject(f"no template for object {object_id!r}") from None
    for arr in (tpl.texture, tpl.body, tpl.alpha):
        arr.setflags(write=False)
    return tpl


@lru_cache(maxsize=32)
def _background_reflectance(background_id: str, width: int, height: int) -> np.ndarray:
    xs, ys = _grid(width, height)
    u, v = xs / width, ys / height
    bg = np.zeros((height, width, 3))
    if background_id == "plain":
        bg[...] = 0.6
    elif background_id == "lab":
        wall = 0.78 - 0.1 * v
        bg[...] = wall[..., None] * np.array([1.0, 0.98, 0.94])
        desk = v > 0.82
        bg[desk] = np.array([0.55, 0.45, 0.35])
        bg[(v > 0.82) & (v < 0.84)] = 0.3
    elif background_id == "street":
        bg[...] = (0.72 - 0.2 * v)[..., None] * np.array([0.85, 0.9, 1.0])
        road = v > 0.7
        bg[road] = 0.32
        bg[road & (np.abs(v - 0.85) < 0.01) & ((u * 8) % 1 < 0.5)] = 0.9
    elif background_id == "none":
        pass
    else:
        raise SceneError(f"unknown background {background_id!r}")
    bg.setflags(write=False)
    return bg


# --------------------------------------------------------------------------
# Geometry


def ambient_gain(lux: float) -> float:
    return float(min(max(lux / AMBIENT_NORMALIZER_LUX, 0.0), 1.0))


def projector_gain(lumens: float, g_max: float = G_MAX) -> float:
    return float(lumens / LUMENS_REFERENCE * g_max)


def object_scale(cfg: SceneConfig) -> float:
    """Canvas pixels per texture pixel."""
    tpl = template(cfg.object_id)
    size = 1.0 if cfg.object_size_m is None else cfg.object_size_m / tpl.size_m[0]
    return FOCAL_PX * size / (TEXTURE_PX_PER_M * cfg.distance_m)


def object_homography(cfg: SceneConfig, angle_deg: float | None = None, shift_px: float = 0.0) -> np.ndarray:
    """Texture pixel coordinates -> canvas pixel coordinates."""
    tpl = template(cfg.object_id)
    th, tw = tpl.alpha.shape
    s = object_scale(cfg)
    theta = np.deg2rad(cfg.angle_deg if angle_deg is None else angle_deg)
    # Rotation of the object plane about its vertical axis, viewed by a
    # pinhole of focal FOCAL_PX: depth grows by x*sin(theta)/FOCAL_PX.
    persp = np.array([[np.cos(theta), 0.0, 0.0], [0.0, 1.0, 0.0], [np.sin(theta) / FOCAL_PX, 0.0, 1.0]])
    w, h = cfg.canvas
    centre = imaging.translation((w - 1) / 2.0 + shift_px, (h - 1) / 2.0)
    return centre @ persp @ imaging.scaling(s) @ imaging.translation(-(tw - 1) / 2.0, -(th - 1) / 2.0)


def patch_homography(cfg: SceneConfig, side: int, angle_deg: float | None = None, shift_px: float = 0.0) -> np.ndarray:
    """Patch raster pixel coordinates -> canvas pixel coordinates."""
    x0, y0, x1, y1 = template(cfg.object_id).anchor_px
    sx = (x1 - x0) / side
    sy = (y1 - y0) / side
    # Patch pixel i covers texture span [x0 + i*sx, x0 + (i+1)*sx) in edge coordinates.
    to_tex = imaging.translation(x0 - 0.5 + 0.5 * sx, y0 - 0.5 + 0.5 * sy) @ imaging.scaling(sx, sy)
    return object_homography(cfg, angle_deg, shift_px) @ to_tex


def _raster(patch) -> np.ndarray:
    raster = getattr(patch, "raster", patch)
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 3 or raster.shape[0] != raster.shape[1] or raster.shape[2] != 3:
        raise SceneError(f"patch raster must be (side, side, 3), got {raster.shape}")
    return raster


def _patch_on_texture(cfg: SceneConfig, patch) -> tuple[np.ndarray, tuple[slice, slice]]:
    """Nearest-neighbour upsample of the patch onto the anchor's texture pixels."""
    raster = _raster(patch)
    x0, y0, x1, y1 = template(cfg.object_id).anchor_px
    aw, ah = x1 - x0, y1 - y0
    side = raster.shape[0]
    if side > aw or side > ah:
        raise PatchTooLarge(f"{side}px patch exceeds {aw}x{ah}px anchor of {cfg.object_id}")
    cols = (np.arange(aw) * side) // aw
    rows = (np.arange(ah) * side) // ah
    return raster[rows][:, cols], (slice(y0, y1), slice(x0, x1))


# --------------------------------------------------------------------------
# Rendering


def _render(cfg: SceneConfig, radiance_tex: np.ndarray, angle_deg=None, shift_px=0.0) -> np.ndarray:
    tpl = template(cfg.object_id)
    w, h = cfg.canvas
    a = ambient_gain(cfg.ambient_lux)
    bg = _background_reflectance(cfg.background_id, w, h) * a
    hmat = object_homography(cfg, angle_deg, shift_px)
    stacked = np.concatenate([radiance_tex * tpl.alpha[..., None], tpl.alpha[..., None]], axis=2)
    warped, _ = imaging.warp(stacked, hmat, w, h)
    alpha = warped[..., 3:4]
    out = bg * (1.0 - alpha) + warped[..., :3]
    return np.clip(out, 0.0, 1.0)


def clean_radiance(cfg: SceneConfig) -> np.ndarray:
    tpl = template(cfg.object_id)
    return tpl.reflectance(cfg.surface_albedo) * ambient_gain(cfg.ambient_lux)


def sticker_radiance(cfg: SceneConfig, printed) -> np.ndarray:
    tpl = template(cfg.object_id)
    refl = tpl.reflectance(cfg.surface_albedo)
    up, region = _patch_on_texture(cfg, printed)
    refl[region] = up
    return refl * ambient_gain(cfg.ambient_lux)


def projection_radiance(cfg: SceneConfig, patch, g_max: float = G_MAX) -> np.ndarray:
    tpl = template(cfg.object_id)
    refl = tpl.reflectance(cfg.surface_albedo)
    light = np.zeros_like(refl)
    up, region = _patch_on_texture(cfg, patch)
    light[region] = up * projector_gain(cfg.projector_lumens, g_max)
    return refl * (ambient_gain(cfg.ambient_lux) + light)


def render_clean(cfg: SceneConfig) -> np.ndarray:
    return _render(cfg, clean_radiance(cfg))


def render_sticker(cfg: SceneConfig, printed) -> np.ndarray:
    return _render(cfg, sticker_radiance(cfg, printed))


def render_projection(cfg: SceneConfig, patch, g_max: float = G_MAX) -> np.ndarray:
    return _render(cfg, projection_radiance(cfg, patch, g_max))


def render_background(cfg: SceneConfig) -> np.ndarray:
    w, h = cfg.canvas
    bg = _background_reflectance(cfg.background_id, w, h) * ambient_gain(cfg.ambient_lux)
    return np.clip(bg, 0.0, 1.0)


def object_mask(cfg: SceneConfig, angle_deg=None, shift_px=0.0) -> np.ndarray:
    """Canvas pixels at least half covered by the object silhouette."""
    tpl = template(cfg.object_id)
    w, h = cfg.canvas
    warped, _ = imaging.warp(tpl.alpha, object_homography(cfg, angle_deg, shift_px), w, h)
    return warped >= 0.5


def object_bbox(cfg: SceneConfig, angle_deg=None, shift_px=0.0) -> tuple[int, int, int, int]:
    mask = object_mask(cfg, angle_deg, shift_px)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return (0, 0, 0, 0)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def digital_composite(cfg: SceneConfig, patch, clean: np.ndarray | None = None, angle_deg=None, shift_px=0.0) -> np.ndarray:
    """Paste the patch raster straight into the clean frame, as a digital attack does."""
    raster = _raster(patch)
    w, h = cfg.canvas
    if clean is None:
        clean = _render(cfg, clean_radiance(cfg), angle_deg, shift_px)
    hmat = patch_homography(cfg, raster.shape[0], angle_deg, shift_px)
    warped, coverage = imaging.warp(raster, hmat, w, h)
    return imaging.compose(clean, warped, coverage)


_APPLICATIONS = ("clean", "sticker", "projection", "digital")


def _lens_render(cfg: SceneConfig, application: str, patch, angle, shift):
    if application == "clean":
        return _render(cfg, clean_radiance(cfg), angle, shift)
    if application == "sticker":
        return _render(cfg, sticker_radiance(cfg, patch), angle, shift)
    if application == "projection":
        return _render(cfg, projection_radiance(cfg, patch), angle, shift)
    if application == "digital":
        return digital_composite(cfg, patch, angle_deg=angle, shift_px=shift)
    raise SceneError(f"unknown application {application!r}; expected one of {_APPLICATIONS}")


def render_stereo(cfg: SceneConfig, rig: StereoRig, application: str = "clean", patch=None):
    """Render the two lenses.  The left lens is the reference camera."""
    if application != "clean" and patch is None:
        raise SceneError(f"{application} application needs a patch")
    left_off, right_off = rig.angle_offsets
    shift = -rig.baseline_m * FOCAL_PX / cfg.distance_m
    left = _lens_render(cfg, application, patch, cfg.angle_deg + left_off, 0.0)
    right = _lens_render(cfg, application, patch, cfg.angle_deg + right_off, shift)
    return left, right
