"""Raster primitives shared by the whole lab.

Images are plain ``numpy`` arrays of shape ``(height, width, 3)`` holding
float64 samples in ``[0, 1]``.  Quantized images are ``uint8`` arrays of the
same shape.  Geometry uses pixel-centre coordinates: pixel ``(row, col)``
sits at ``(x=col, y=row)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = [
    "ImageError",
    "MalformedHeader",
    "TruncatedData",
    "SingularHomography",
    "OutOfBounds",
    "DimensionMismatch",
    "as_image",
    "blank",
    "quantize",
    "dequantize",
    "homography",
    "translation",
    "scaling",
    "rotation",
    "warp",
    "compose",
    "read_ppm",
    "write_ppm",
    "read_pfm",
    "write_pfm",
]

DET_THRESHOLD = 1e-12
# Slack for inverse-mapped coordinates that land a rounding error outside the source.
_EDGE_EPS = 1e-9


class ImageError(ValueError):
    pass


class MalformedHeader(ImageError):
    pass


class TruncatedData(ImageError):
    pass


class SingularHomography(ImageError):
    pass


class OutOfBounds(ImageError):
    pass


class DimensionMismatch(ImageError):
    pass


def as_image(data, *, copy: bool = False) -> np.ndarray:
    """Validate and return ``data`` as a float64 ``(h, w, 3)`` image."""
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected (height, width, 3) raster, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("image must have positive width and height")
    if not np.all(np.isfinite(img)):
        raise ImageError("image samples must be finite")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImageError("image samples must lie in [0, 1]")
    return img


def blank(width: int, height: int, value=0.0) -> np.ndarray:
    img = np.empty((height, width, 3), dtype=np.float64)
    img[...] = value
    return img


def quantize(img: np.ndarray) -> np.ndarray:
    """Map unit-range samples to 8-bit, rounding half away from zero."""
    scaled = np.asarray(img, dtype=np.float64) * 255.0
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 255.0


# --------------------------------------------------------------------------
# Homographies


def homography(matrix) -> np.ndarray:
    h = np.array(matrix, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got {h.shape}")
    if abs(np.linalg.det(h)) < DET_THRESHOLD:
        raise SingularHomography("homography determinant below threshold")
    if h[2, 2] != 0.0:
        h = h / h[2, 2]
    return h


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def scaling(sx: float, sy: float | None = None) -> np.ndarray:
    sy = sx if sy is None else sy
    return np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])


def rotation(degrees: float, center: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Rotation by ``degrees`` (clockwise on screen, y points down) about ``center``."""
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    # Snap the exact quarter turns so integer grids stay integer.
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    cx, cy = center
    return translation(cx, cy) @ r @ translation(-cx, -cy)


def warp(img: np.ndarray, h, out_w: int, out_h: int, *, border: str = "transparent"):
    """Inverse-map ``img`` through ``h`` (source -> destination) with bilinear sampling.

    Works for any channel count.  Returns ``(warped, coverage)`` where
    ``coverage`` is a boolean mask of destination pixels whose pre-image lies
    inside the source.  Uncovered pixels are 0 unless ``border="replicate"``,
    in which case they take the nearest edge sample (coverage still reports
    them as uncovered).
    """
    src = np.asarray(img, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    hmat = homography(h)
    inv = np.linalg.inv(hmat)
    sh, sw = src.shape[:2]

    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den
        v = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    finite = np.isfinite(u) & np.isfinite(v) & (den > 0)
    u = np.where(finite, u, -1e9)
    v = np.where(finite, v, -1e9)
    coverage = (
        finite
        & (u >= -_EDGE_EPS)
        & (u <= sw - 1 + _EDGE_EPS)
        & (v >= -_EDGE_EPS)
        & (v <= sh - 1 + _EDGE_EPS)
    )

    u = np.clip(u, 0.0, sw - 1)
    v = np.clip(v, 0.0, sh - 1)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)

    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    if border == "transparent":
        out[~coverage] = 0.0
    elif border != "replicate":
        raise ValueError(f"unknown border mode {border!r}")
    if squeeze:
        out = out[..., 0]
    return out, coverage


def compose(base: np.ndarray, overlay: np.ndarray, mask, origin: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Paste ``overlay`` onto a copy of ``base`` where ``mask`` is set.

    ``origin`` is ``(x, y)`` of the overlay's top-left pixel in ``base``.
    """
    base = np.asarray(base, dtype=np.float64)
    overlay = np.asarray(overlay, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    oh, ow = overlay.shape[:2]
    if mask.shape != (oh, ow):
        raise DimensionMismatch(f"mask shape {mask.shape} does not match overlay {(oh, ow)}")
    x, y = origin
    if x < 0 or y < 0 or x + ow > base.shape[1] or y + oh > base.shape[0]:
        raise OutOfBounds(f"overlay {ow}x{oh} at {origin} exceeds base {base.shape[1]}x{base.shape[0]}")
    out = base.copy()
    region = out[y : y + oh, x : x + ow]
    region[mask] = overlay[mask]
    return out


# --------------------------------------------------------------------------
# PPM / PFM


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeader("unexpected end of header")
    return buf[start:pos], pos


def _parse_ppm(buf: bytes) -> np.ndarray:
    magic, pos = _read_token(buf, 0) if buf else (b"", 0)
    if magic not in (b"P3", b"P6"):
        raise MalformedHeader(f"unsupported magic {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise MalformedHeader(f"bad header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeader("width and height must be positive")
    if maxval != 255:
        raise MalformedHeader(f"only maxval 255 is supported, got {maxval}")
    count = width * height * 3
    if magic == b"P6":
        # Exactly one whitespace byte separates the header from the raster.
        if pos >= len(buf) or not buf[pos : pos + 1].isspace():
            raise TruncatedData("missing raster data")
        raw = buf[pos + 1 : pos + 1 + count]
        if len(raw) < count:
            raise TruncatedData(f"expected {count} bytes of raster, got {len(raw)}")
        q = np.frombuffer(raw, dtype=np.uint8)
    else:
        values = buf[pos:].split()
        if len(values) < count:
            raise TruncatedData(f"expected {count} samples, got {len(values)}")
        try:
            q = np.array([int(v) for v in values[:count]], dtype=np.int64)
        except ValueError as exc:
            raise MalformedHeader("non-integer sample in P3 body") from exc
        if q.min() < 0 or q.max() > 255:
            raise MalformedHeader("sample exceeds maxval")
        q = q.astype(np.uint8)
    return q.reshape(height, width, 3)


def read_ppm(path) -> np.ndarray:
    return dequantize(_parse_ppm(Path(path).read_bytes()))


def ppm_bytes(img: np.ndarray) -> bytes:
    q = quantize(img)
    h, w = q.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(img))


def read_pfm(path) -> np.ndarray:
    """Read a colour PFM; rows are stored bottom-to-top."""
    buf = Path(path).read_bytes()
    lines = []
    pos = 0
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise MalformedHeader("truncated PFM header")
        lines.append(buf[pos:end].strip())
        pos = end + 1
    if lines[0] != b"PF":
        raise MalformedHeader(f"unsupported PFM magic {lines[0]!r}")
    try:
        width, height = (int(t) for t in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise MalformedHeader("bad PFM dimensions or scale") from exc
    if width <= 0 or height <= 0 or scale == 0.0:
        raise MalformedHeader("bad PFM dimensions or scale")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * 3
    raw = buf[pos : pos + 4 * count]
    if len(raw) < 4 * count:
        raise TruncatedData(f"expected {4 * count} bytes of raster, got {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    return data.reshape(height, width, 3)[::-1].copy()


def write_pfm(path, img: np.ndarray) -> None:
    """Write little-endian colour PFM (scale -1.0)."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    header = b"PF\n%d %d\n-1.0\n" % (w, h)
    body = arr[::-1].astype("<f4").tobytes()
    Path(path).write_bytes(header + body)
