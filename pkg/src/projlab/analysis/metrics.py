"""Pixel-difference norms and confidence-reduction arithmetic."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..imaging import DimensionMismatch, quantize


class CleanZero(ValueError):
    """The clean object was not detected, so no reduction can be computed."""


@dataclass(frozen=True)
class NormTriple:
    l2: float
    linf: int
    l0_pct: float

    def to_dict(self) -> dict:
        return asdict(self)


def _levels(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.int64)
    return quantize(arr).astype(np.int64)


def norms(a, b, l0_threshold: int = 1) -> NormTriple:
    """L2, L-infinity and L0 distance between two images on the 0-255 scale.

    Float images are quantized first; ``uint8`` inputs are used as-is.  L0 is
    the percentage of *pixels* where any channel differs by at least
    ``l0_threshold`` levels.
    """
    qa, qb = _levels(a), _levels(b)
    if qa.shape != qb.shape:
        raise DimensionMismatch(f"cannot compare {qa.shape} with {qb.shape}")
    diff = qa - qb
    l2 = float(np.sqrt(np.sum(diff * diff)))
    absdiff = np.abs(diff)
    linf = int(absdiff.max()) if absdiff.size else 0
    per_pixel = absdiff.max(axis=-1) if absdiff.ndim == 3 else absdiff
    l0 = 100.0 * float(np.count_nonzero(per_pixel >= l0_threshold)) / per_pixel.size
    return NormTriple(l2, linf, l0)


def reduction_pct(clean_conf: float, patched_conf: float) -> float:
    """Percentage drop from the clean confidence, clamped to [0, 100]."""
    if clean_conf <= 0.0:
        raise CleanZero("clean confidence is zero")
    pct = 100.0 * (clean_conf - patched_conf) / clean_conf
    return float(min(max(pct, 0.0), 100.0))
