"""Lossy paths between the digital and physical domains.

``capture`` models the camera: zero-mean Gaussian noise, drawn once per pixel
and shared by its three channels (luminance noise), then clamped.  The
default standard deviation was chosen by Monte-Carlo so that two consecutive
captures of a mid-gray frame differ, after 8-bit quantization, on roughly 78%
of pixels.

``print_patch`` models the printer: a 3x3 colour transfer with mild
cross-talk, a gamma curve and posterization to a fixed number of levels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .analysis.metrics import NormTriple, norms
from .imaging import DimensionMismatch
from .rng import RngStream

DEFAULT_PRINT_MATRIX = (
    (0.86, 0.05, 0.05),
    (0.05, 0.86, 0.05),
    (0.05, 0.05, 0.86),
)
IDENTITY_MATRIX = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    sensor_sigma: float = 0.005
    shot_floor: float = 0.0
    print_matrix: tuple = field(default=DEFAULT_PRINT_MATRIX)
    print_gamma: float = 0.8
    print_quant_levels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.sensor_sigma < 0 or self.shot_floor < 0:
            raise ChannelError("noise parameters must be non-negative")
        if self.print_quant_levels < 2:
            raise ChannelError("print_quant_levels must be at least 2")
        if self.print_gamma <= 0:
            raise ChannelError("print_gamma must be positive")
        m = np.asarray(self.print_matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ChannelError("print_matrix must be 3x3")
        object.__setattr__(self, "print_matrix", tuple(tuple(float(v) for v in row) for row in m))

    @property
    def noise_sigma(self) -> float:
        return max(self.sensor_sigma, self.shot_floor)

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)

    @classmethod
    def ideal(cls, seed: int = 0) -> "ChannelParams":
        """A lossless channel: no sensor noise, identity print at 8-bit precision."""
        return cls(
            sensor_sigma=0.0,
            print_matrix=IDENTITY_MATRIX,
            print_gamma=1.0,
            print_quant_levels=256,
            seed=seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["print_matrix"] = [list(r) for r in self.print_matrix]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ChannelError(f"unknown channel fields: {sorted(unknown)}")
        if "print_matrix" in d:
            d["print_matrix"] = tuple(tuple(r) for r in d["print_matrix"])
        return cls(**d)


def capture(scene_image: np.ndarray, params: ChannelParams, rng: RngStream) -> np.ndarray:
    img = np.asarray(scene_image, dtype=np.float64)
    sigma = params.noise_sigma
    if sigma == 0.0:
        return img.copy()
    noise = rng.normal(img.shape[:2] + (1,), scale=sigma)
    return np.clip(img + noise, 0.0, 1.0)


def print_colors(raster: np.ndarray, params: ChannelParams) -> np.ndarray:
    rgb = np.asarray(raster, dtype=np.float64)
    mixed = np.clip(rgb @ np.asarray(params.print_matrix).T, 0.0, 1.0)
    curved = mixed ** (1.0 / params.print_gamma)
    levels = params.print_quant_levels - 1
    return np.clip(np.floor(curved * levels + 0.5) / levels, 0.0, 1.0)


def print_patch(patch, params: ChannelParams):
    """Return the printed counterpart of ``patch`` (same type as given)."""
    raster = getattr(patch, "raster", None)
    if raster is None:
        return print_colors(patch, params)
    return replace(patch, raster=print_colors(raster, params))


def channel_discrepancy_report(a: np.ndarray, b: np.ndarray) -> NormTriple:
    if np.shape(a) != np.shape(b):
        raise DimensionMismatch(f"cannot compare {np.shape(a)} with {np.shape(b)}")
    return norms(a, b)
