"""Raster primitives: grayscale conversion, Otsu thresholding, cropping,
resizing, connected components and projection profiles.

Images are plain numpy ``uint8`` arrays, shape ``(h, w)`` for grayscale and
``(h, w, 3)`` for RGB. Binary masks are ``uint8`` arrays of 0/1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .geometry import BBox

DARK_FG = "dark-fg"
LIGHT_FG = "light-fg"

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Component:
    pixel_count: int
    bbox: BBox
    centroid: tuple[float, float]


def as_image(data) -> np.ndarray:
    """Validate and return ``data`` as a uint8 image array."""
    arr = np.asarray(data)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (1, 3)):
        raise ValueError(f"expected (h, w) or (h, w, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has zero width or height")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return arr


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"to_grayscale needs a 3-channel image, got shape {img.shape}")
    gray = np.rint(img.astype(np.float64) @ _GRAY_WEIGHTS)
    return np.clip(gray, 0, 255).astype(np.uint8)


def to_rgb(img: np.ndarray) -> np.ndarray:
    """Replicate a grayscale image to three channels (RGB passes through)."""
    if img.ndim == 3:
        return img
    return np.repeat(img[:, :, None], 3, axis=2)


def ensure_gray(img: np.ndarray) -> np.ndarray:
    return img if img.ndim == 2 else to_grayscale(img)


def otsu_threshold(img: np.ndarray) -> int:
    """Smallest threshold ``t`` maximizing the between-class variance.

    Class 0 is ``pixel <= t``. A single-valued image returns that value.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("otsu_threshold needs a single-channel image")
    if img.size == 0:
        raise ValueError("otsu_threshold on an empty image")
    hist = np.bincount(img.ravel(), minlength=256).astype(np.int64)
    levels = np.flatnonzero(hist)
    if len(levels) == 1:
        return int(levels[0])

    n_total = int(img.size)
    s_total = int(np.dot(hist, np.arange(256)))
    n0 = np.cumsum(hist)
    s0 = np.cumsum(hist * np.arange(256))
    n1 = n_total - n0
    # sigma_b^2 * N^2 = (N*S0 - n0*S_T)^2 / (n0*n1)
    num = (n_total * s0.astype(np.float64) - n0 * float(s_total)) ** 2
    den = (n0 * n1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(den > 0, num / den, 0.0)

    best = score.max()
    # float ranking can blur near-ties; settle candidates exactly with integers
    candidates = np.flatnonzero(score >= best * (1 - 1e-9))
    best_t, best_val = None, None
    for t in candidates:
        a, b = int(n0[t]), int(n1[t])
        if a == 0 or b == 0:
            continue
        val = Fraction((n_total * int(s0[t]) - a * s_total) ** 2, a * b)
        if best_val is None or val > best_val:
            best_t, best_val = int(t), val
    return best_t


def binarize(img: np.ndarray, t: int, polarity: str = DARK_FG) -> np.ndarray:
    if polarity == DARK_FG:
        return (img <= t).astype(np.uint8)
    if polarity == LIGHT_FG:
        return (img > t).astype(np.uint8)
    raise ValueError(f"unknown polarity {polarity!r}")


def crop_bounds(shape, box: BBox) -> tuple[int, int, int, int]:
    """Integer pixel bounds ``(x0, y0, x1, y1)`` of ``box`` clipped to an image."""
    h, w = shape[:2]
    x0 = max(0, math.floor(box.x_min))
    y0 = max(0, math.floor(box.y_min))
    x1 = min(w, math.ceil(box.x_max))
    y1 = min(h, math.ceil(box.y_max))
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"box {box} does not intersect the {w}x{h} image")
    return x0, y0, x1, y1


def crop(img: np.ndarray, box: BBox) -> np.ndarray:
    x0, y0, x1, y1 = crop_bounds(img.shape, box)
    return img[y0:y1, x0:x1].copy()


def _bilinear_axis(n_in: int, n_out: int):
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_float(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize of a float array, (h, w) or (h, w, c)."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError("resize target dimensions must be positive")
    h, w = arr.shape[:2]
    arr = arr.astype(np.float64)
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ylo, yhi, fy = _bilinear_axis(h, out_h)
    xlo, xhi, fx = _bilinear_axis(w, out_w)
    if arr.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = arr[ylo][:, xlo] * (1 - fx) + arr[ylo][:, xhi] * fx
    bottom = arr[yhi][:, xlo] * (1 - fx) + arr[yhi][:, xhi] * fx
    return top * (1 - fy) + bottom * fy


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    out = resize_float(img, out_w, out_h)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    else:
        raise ValueError("connectivity must be 4 or 8")
    labels, count = ndimage.label(np.asarray(mask) > 0, structure=structure)
    if count == 0:
        return []
    comps = []
    index = np.arange(1, count + 1)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index)
    centers = ndimage.center_of_mass(np.ones_like(labels), labels, index)
    for k, sl in enumerate(ndimage.find_objects(labels)):
        ys, xs = sl
        cy, cx = centers[k]
        comps.append(
            Component(
                pixel_count=int(sizes[k]),
                bbox=BBox(int(xs.start), int(ys.start), int(xs.stop), int(ys.stop)),
                centroid=(float(cx) + 0.5, float(cy) + 0.5),
            )
        )
    comps.sort(key=lambda c: (c.bbox.x_min, c.bbox.y_min))
    return comps


def horizontal_projection(mask: np.ndarray) -> np.ndarray:
    """Foreground count per row."""
    return np.asarray(mask, dtype=np.int64).sum(axis=1)


def vertical_projection(mask: np.ndarray) -> np.ndarray:
    """Foreground count per column."""
    return np.asarray(mask, dtype=np.int64).sum(axis=0)
