"""Deterministic image resampling and padding helpers.

All functions operate on the trailing two axes, so they accept both (H,W)
masks and (C,H,W) images. Nearest-neighbour uses the pixel-center convention
with exact integer arithmetic (source index = floor((2i+1)*m / (2n))), which
makes a same-size resample the exact identity and keeps repeated crops
composable to within one source pixel.
"""

from __future__ import annotations

import numpy as np


def _nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    i = np.arange(n_out, dtype=np.int64)
    return (2 * i + 1) * n_in // (2 * n_out)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of the trailing two axes."""
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ri = _nearest_indices(out_h, h)
    ci = _nearest_indices(out_w, w)
    return arr[..., ri[:, None], ci[None, :]]


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes (pixel-center convention,
    edges clamped)."""
    h, w = arr.shape[-2:]
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def axis_weights(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.clip(np.floor(src).astype(np.int64), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = np.clip(src - lo, 0.0, 1.0)
        return lo, hi, frac

    r0, r1, fr = axis_weights(out_h, h)
    c0, c1, fc = axis_weights(out_w, w)
    a = arr.astype(np.float64, copy=False)
    top = a[..., r0[:, None], c0[None, :]] * (1 - fc) + a[..., r0[:, None], c1[None, :]] * fc
    bot = a[..., r1[:, None], c0[None, :]] * (1 - fc) + a[..., r1[:, None], c1[None, :]] * fc
    out = top * (1 - fr[:, None]) + bot * fr[:, None]
    return out.astype(arr.dtype, copy=False) if np.issubdtype(arr.dtype, np.floating) else out


def sample_bilinear(arr: np.ndarray, row_coords: np.ndarray,
                    col_coords: np.ndarray) -> np.ndarray:
    """Bilinear lookup of the trailing two axes at fractional coordinates
    (outer product of row_coords x col_coords, edges clamped)."""
    h, w = arr.shape[-2:]

    def split(coords: np.ndarray, n: int):
        lo = np.clip(np.floor(coords).astype(np.int64), 0, n - 1)
        hi = np.minimum(lo + 1, n - 1)
        frac = np.clip(coords - lo, 0.0, 1.0)
        return lo, hi, frac

    r0, r1, fr = split(row_coords, h)
    c0, c1, fc = split(col_coords, w)
    a = arr.astype(np.float64, copy=False)
    top = a[..., r0[:, None], c0[None, :]] * (1 - fc) + a[..., r0[:, None], c1[None, :]] * fc
    bot = a[..., r1[:, None], c0[None, :]] * (1 - fc) + a[..., r1[:, None], c1[None, :]] * fc
    out = top * (1 - fr[:, None]) + bot * fr[:, None]
    return out.astype(arr.dtype, copy=False) if np.issubdtype(arr.dtype, np.floating) else out


def center_window(size: int, window: int) -> int:
    """Start offset of a centered window (floor on the half pixel)."""
    return (size - window) // 2


def center_crop(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    if out_h > h or out_w > w:
        raise ValueError(f"crop {out_h}x{out_w} exceeds input {h}x{w}")
    r = center_window(h, out_h)
    c = center_window(w, out_w)
    return arr[..., r:r + out_h, c:c + out_w]


def center_pad_edge(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pad the trailing two axes up to (out_h, out_w) by edge replication,
    keeping the content centered."""
    h, w = arr.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"pad target {out_h}x{out_w} smaller than input {h}x{w}")
    top = center_window(out_h, h)
    left = center_window(out_w, w)
    pad = [(0, 0)] * (arr.ndim - 2)
    pad += [(top, out_h - h - top), (left, out_w - w - left)]
    return np.pad(arr, pad, mode="edge")
