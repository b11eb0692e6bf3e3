"""Nadir camera footprint geometry and descent-projection arithmetic.

A camera pointed straight down with full field-of-view angle `fov_degrees`
sees a ground square of side 2*h*tan(fov/2) from altitude h (the angle is
interpreted across the square image side). During a pure vertical descent the
view at a lower altitude is the central fraction h_low/h_high of the view
above it, which is what `backproject_crop` extracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .imageops import sample_bilinear


@dataclass(frozen=True)
class CameraModel:
    """Nadir camera: full FOV angle across the (square) image side."""
    fov_degrees: float = 107.0

    def __post_init__(self):
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValueError(f"fov must lie in (0,180), got {self.fov_degrees}")


@dataclass(frozen=True)
class DescentProfile:
    """Frame-index -> altitude law for a constant-rate vertical descent.

    `drop_per_frame_m`, when set, overrides the rate/fps-derived step (the two
    disagree for the defaults: 15 km/h at 30 fps is ~0.139 m/frame, while the
    default step is 0.10 m/frame; both are expressible).
    """
    fps: float = 30.0
    descent_rate_mps: float = 15.0 / 3.6
    drop_per_frame_m: float | None = 0.10
    landing_frame: int = 300

    def __post_init__(self):
        if self.landing_frame < 0:
            raise ValueError("landing_frame must be >= 0")
        if self.drop_per_frame() <= 0:
            raise ValueError("altitude drop per frame must be positive")

    def drop_per_frame(self) -> float:
        if self.drop_per_frame_m is not None:
            return self.drop_per_frame_m
        return self.descent_rate_mps / self.fps


def footprint_width(altitude_m: float, camera: CameraModel) -> float:
    """Ground width covered across the image side at the given altitude."""
    if altitude_m < 0:
        raise ValueError(f"altitude must be >= 0, got {altitude_m}")
    return 2.0 * altitude_m * math.tan(math.radians(camera.fov_degrees) / 2.0)


def altitude_at(profile: DescentProfile, frame_index: int) -> float:
    """Altitude worked backwards from touchdown at `landing_frame`."""
    if not 0 <= frame_index <= profile.landing_frame:
        raise ValueError(
            f"frame {frame_index} outside descent range [0,{profile.landing_frame}]")
    return (profile.landing_frame - frame_index) * profile.drop_per_frame()


def _crop_coords(n: int, s: float) -> np.ndarray:
    c = (n - 1) / 2.0
    return c + (np.arange(n) - c) * s


def backproject_crop(reference: np.ndarray, h_ref: float, h_target: float,
                     kind: str = "mask") -> np.ndarray:
    """View a reference frame captured at h_ref as it would appear at the
    lower altitude h_target: the central fraction s = h_target/h_ref of each
    axis, resampled back to the reference resolution. The sampling grid is
    center-anchored and exactly linear in s with each sample rounded to the
    nearest pixel, which keeps chained crops within one source pixel of the
    direct crop. Masks resample nearest, images bilinear.
    """
    if kind not in ("mask", "image"):
        raise ValueError(f"kind must be 'mask' or 'image', got {kind!r}")
    if h_target <= 0 or h_target > h_ref:
        raise ValueError(
            f"target altitude must satisfy 0 < h_target <= h_ref, "
            f"got h_target={h_target}, h_ref={h_ref}")
    if h_target == h_ref:
        return reference.copy()
    s = h_target / h_ref
    h, w = reference.shape[-2:]
    rows = _crop_coords(h, s)
    cols = _crop_coords(w, s)
    if kind == "mask":
        ri = np.clip(np.rint(rows).astype(np.int64), 0, h - 1)
        ci = np.clip(np.rint(cols).astype(np.int64), 0, w - 1)
        return reference[..., ri[:, None], ci[None, :]]
    return sample_bilinear(reference, rows, cols)


@dataclass(frozen=True)
class InterframeIou:
    per_class: tuple[float, ...]
    mean: float
    binary: float


def interframe_iou(pred_high: np.ndarray, pred_low: np.ndarray,
                   h_high: float, h_low: float, num_classes: int,
                   safe_ids: tuple[int, ...]) -> InterframeIou:
    """Consistency between predictions at two altitudes of the same descent:
    the higher mask is cropped to the lower footprint, then compared both
    multi-class and as a safe/unsafe collapse."""
    if pred_high.shape != pred_low.shape:
        raise ValueError(
            f"masks must share a resolution: {pred_high.shape} vs {pred_low.shape}")
    projected = backproject_crop(pred_high, h_high, h_low, kind="mask")
    cm = metrics.confusion(pred_low, projected, num_classes)
    multi = metrics.iou(cm)
    lut = np.zeros(num_classes, dtype=bool)
    lut[list(safe_ids)] = True
    binary = metrics.binary_iou(lut[projected], lut[pred_low])
    return InterframeIou(multi.per_class, multi.mean, binary)
