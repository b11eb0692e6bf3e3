"""Frame-sampled landing decision loop.

Every stride-th frame of a descent is segmented (optionally on a center crop
to cut compute), collapsed to a safe/unsafe mask, compared against the
previous processed frame for sudden changes that indicate a moving object,
and searched for the largest all-safe square big enough for the drone.
Verdict precedence: abort_dynamic > unsafe > safe.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics, unet
from .data import ClassScheme, load_image_png, load_mask_png, remap
from .geometry import CameraModel, backproject_crop, footprint_width
from .imageops import center_window


@dataclass(frozen=True)
class FrameRecord:
    """One frame of a descent: index, altitude, and pixels (in memory or on
    disk)."""
    frame_index: int
    altitude_m: float
    image: np.ndarray | None = None          # (3,H,W) float32 in [0,1]
    truth_mask: np.ndarray | None = None     # (H,W) base-class IDs
    image_path: str | None = None
    truth_mask_path: str | None = None

    def load_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.image_path is None:
            raise ValueError(f"frame {self.frame_index} has no image")
        return load_image_png(self.image_path)

    def load_truth_mask(self) -> np.ndarray:
        if self.truth_mask is not None:
            return self.truth_mask
        if self.truth_mask_path is None:
            raise ValueError(f"frame {self.frame_index} has no ground-truth mask")
        return load_mask_png(self.truth_mask_path)

    @property
    def has_truth(self) -> bool:
        return self.truth_mask is not None or self.truth_mask_path is not None


@dataclass(frozen=True)
class Zone:
    """Axis-aligned all-safe square, in full-frame pixel coordinates."""
    center_x: int
    center_y: int
    side_px: int
    side_m: float


@dataclass(frozen=True)
class LandingDecision:
    frame_index: int
    altitude_m: float
    verdict: str                              # safe | unsafe | abort_dynamic
    zone: Zone | None
    interframe_binary_iou: float | None       # None for the first processed frame
    pixels_processed: int


@dataclass(frozen=True)
class PipelineConfig:
    scheme: ClassScheme
    stride: int = 1
    crop_fraction: float = 1.0
    dynamic_iou_threshold: float = 0.84
    drone_footprint_m: float = 1.0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError("crop_fraction must lie in (0,1]")
        if not 0.0 < self.dynamic_iou_threshold < 1.0:
            raise ValueError("dynamic_iou_threshold must lie in (0,1)")
        if self.drone_footprint_m <= 0:
            raise ValueError("drone_footprint_m must be positive")


# ---------------------------------------------------------------------------
# segmenters
# ---------------------------------------------------------------------------

Segmenter = Callable[[FrameRecord, tuple[int, int, int, int]], np.ndarray]


class UNetSegmenter:
    """Segments the cropped window with a trained network, padding the crop
    by edge replication up to the next valid size so the pooling constraint
    never bites mid-flight."""

    def __init__(self, params: unet.UNetParams, scheme: ClassScheme):
        if params.config.num_classes != scheme.num_classes:
            raise ValueError(
                f"checkpoint predicts {params.config.num_classes} classes but "
                f"scheme '{scheme.name}' defines {scheme.num_classes}")
        self.params = params
        self.scheme = scheme

    def __call__(self, frame: FrameRecord,
                 window: tuple[int, int, int, int]) -> np.ndarray:
        y0, x0, h, w = window
        crop = frame.load_image()[:, y0:y0 + h, x0:x0 + w]
        div = 2 ** self.params.config.depth
        ph = -(-h // div) * div
        pw = -(-w // div) * div
        if (ph, pw) != (h, w):
            padded = np.pad(crop, ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")
            return unet.predict_mask(self.params, padded)[:h, :w]
        return unet.predict_mask(self.params, crop)


class OracleSegmenter:
    """Returns the frame's ground-truth mask remapped to the scheme; the
    reference segmenter for pipeline and metric plumbing."""

    def __init__(self, scheme: ClassScheme):
        self.scheme = scheme

    def __call__(self, frame: FrameRecord,
                 window: tuple[int, int, int, int]) -> np.ndarray:
        y0, x0, h, w = window
        return remap(frame.load_truth_mask(), self.scheme)[y0:y0 + h, x0:x0 + w]


# ---------------------------------------------------------------------------
# per-frame assessment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameAssessment:
    pred_mask: np.ndarray       # scheme classes, crop-window sized
    safety: np.ndarray          # bool, crop-window sized
    window: tuple[int, int, int, int]   # y0, x0, h, w in full-frame coords
    pixels_processed: int


def crop_window(frame_h: int, frame_w: int,
                crop_fraction: float) -> tuple[int, int, int, int]:
    h = max(1, round(frame_h * crop_fraction))
    w = max(1, round(frame_w * crop_fraction))
    return center_window(frame_h, h), center_window(frame_w, w), h, w


def assess_frame(segmenter: Segmenter, frame: FrameRecord,
                 cfg: PipelineConfig,
                 frame_shape: tuple[int, int]) -> FrameAssessment:
    """Center-crop, segment, collapse to safe/unsafe. pixels_processed is the
    crop area and is independent of the image content."""
    window = crop_window(frame_shape[0], frame_shape[1], cfg.crop_fraction)
    pred = segmenter(frame, window)
    safety = metrics.to_binary(pred, cfg.scheme)
    return FrameAssessment(pred_mask=pred, safety=safety, window=window,
                           pixels_processed=window[2] * window[3])


def detect_dynamic(prev_safety: np.ndarray, h_prev: float,
                   curr_safety: np.ndarray, h_curr: float,
                   threshold: float) -> tuple[bool, float]:
    """Binary safe-set IOU between the back-projected previous view and the
    current one; a drop below the threshold flags a moving object."""
    if prev_safety.shape != curr_safety.shape:
        raise ValueError(f"safety masks must share a resolution: "
                         f"{prev_safety.shape} vs {curr_safety.shape}")
    projected = backproject_crop(prev_safety.astype(np.uint8), h_prev, h_curr,
                                 kind="mask").astype(bool)
    value = metrics.binary_iou(projected, curr_safety)
    return value < threshold, value


def select_zone(safety: np.ndarray, altitude_m: float, camera: CameraModel,
                required_side_m: float,
                image_side_px: int | None = None) -> Zone | None:
    """Largest axis-aligned all-safe square (dynamic programming over
    min-of-neighbours), accepted only if its ground side covers the required
    footprint. Ties go to the topmost, then leftmost corner. image_side_px
    sets the meters-per-pixel scale and defaults to the mask width."""
    if altitude_m <= 0:
        raise ValueError("zone selection needs a positive altitude")
    safety = safety.astype(bool)
    h, w = safety.shape
    best = 0
    top = left = 0
    prev = [0] * w
    for i in range(h):
        row_safe = safety[i].tolist()
        row = [0] * w
        for j in range(w):
            if row_safe[j]:
                if i == 0 or j == 0:
                    v = 1
                else:
                    v = 1 + min(prev[j], row[j - 1], prev[j - 1])
                row[j] = v
                # strict improvement keeps the topmost/leftmost corner on ties
                if v > best:
                    best = v
                    top = i - v + 1
                    left = j - v + 1
        prev = row
    if best == 0:
        return None
    mpp = footprint_width(altitude_m, camera) / (image_side_px or w)
    side_m = best * mpp
    if side_m < required_side_m:
        return None
    half = best // 2
    return Zone(center_x=left + half, center_y=top + half,
                side_px=best, side_m=side_m)


# ---------------------------------------------------------------------------
# descent loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSummary:
    processed_frames: int
    total_pixels_processed: int
    iou_series: tuple[tuple[int, float, float], ...]  # (frame, altitude, binary iou)
    pred_masks: dict[int, np.ndarray] = field(default_factory=dict)


def run_descent(segmenter: Segmenter, frames: Sequence[FrameRecord],
                cfg: PipelineConfig, camera: CameraModel,
                keep_masks: bool = False
                ) -> tuple[list[LandingDecision], RunSummary]:
    """Sequential decision loop over every stride-th frame. Returns per-frame
    decisions plus a summary with the compute accounting and the inter-frame
    IOU-vs-altitude series."""
    if len(frames) == 0:
        raise ValueError("descent requires at least one frame")
    alts = [f.altitude_m for f in frames]
    if any(a < 0 for a in alts):
        raise ValueError("altitudes must be >= 0")
    if any(b > a for a, b in zip(alts, alts[1:])):
        raise ValueError("frames must be ordered by non-increasing altitude")

    first = frames[0].load_image() if frames[0].image is not None or \
        frames[0].image_path is not None else None
    if first is not None:
        frame_shape = first.shape[1:]
    else:
        frame_shape = frames[0].load_truth_mask().shape

    decisions: list[LandingDecision] = []
    series: list[tuple[int, float, float]] = []
    pred_masks: dict[int, np.ndarray] = {}
    prev: tuple[np.ndarray, float] | None = None
    total_pixels = 0

    for idx in range(0, len(frames), cfg.stride):
        fr = frames[idx]
        assessment = assess_frame(segmenter, fr, cfg, frame_shape)
        total_pixels += assessment.pixels_processed
        if keep_masks:
            pred_masks[fr.frame_index] = assessment.pred_mask.astype(np.uint8)

        verdict = None
        iou_val: float | None = None
        if prev is not None:
            triggered, iou_val = detect_dynamic(
                prev[0], prev[1], assessment.safety, fr.altitude_m,
                cfg.dynamic_iou_threshold)
            series.append((fr.frame_index, fr.altitude_m, iou_val))
            if triggered:
                verdict = "abort_dynamic"

        zone = None
        if verdict is None:
            zone = select_zone(assessment.safety, fr.altitude_m, camera,
                               cfg.drone_footprint_m,
                               image_side_px=frame_shape[1])
            if zone is not None:
                y0, x0, _, _ = assessment.window
                zone = Zone(zone.center_x + x0, zone.center_y + y0,
                            zone.side_px, zone.side_m)
            verdict = "safe" if zone is not None else "unsafe"

        decisions.append(LandingDecision(
            frame_index=fr.frame_index, altitude_m=fr.altitude_m,
            verdict=verdict, zone=zone, interframe_binary_iou=iou_val,
            pixels_processed=assessment.pixels_processed))
        prev = (assessment.safety, fr.altitude_m)

    summary = RunSummary(processed_frames=len(decisions),
                         total_pixels_processed=total_pixels,
                         iou_series=tuple(series),
                         pred_masks=pred_masks)
    return decisions, summary


DECISIONS_HEADER = ["frame_index", "altitude_m", "verdict", "zone_center_x",
                    "zone_center_y", "zone_side_px", "zone_side_m",
                    "interframe_binary_iou", "pixels_processed"]


def write_decisions_csv(path: str | Path,
                        decisions: Sequence[LandingDecision]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISIONS_HEADER)
        for d in decisions:
            z = d.zone
            writer.writerow([
                d.frame_index, f"{d.altitude_m:.6f}", d.verdict,
                z.center_x if z else "", z.center_y if z else "",
                z.side_px if z else "", f"{z.side_m:.6f}" if z else "",
                "" if d.interframe_binary_iou is None
                else f"{d.interframe_binary_iou:.6f}",
                d.pixels_processed,
            ])
