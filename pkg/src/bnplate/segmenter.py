"""Cropped plate -> ordered 64x64 glyph patches.

Pipeline: grayscale, Otsu threshold, binarize, split into upper/lower rows
on the horizontal projection, 8-connected components per row, size/shape
filtering, merging of vertically stacked pieces, left-to-right ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imaging as im
from .geometry import BBox
from .grammar import LOWER, UPPER

PATCH = 64


@dataclass(frozen=True)
class SegmentConfig:
    min_area_frac: float = 0.01
    min_height_frac: float = 0.30
    aspect_range: tuple[float, float] = (0.2, 12.0)
    merge_overlap: float = 0.60
    valley_frac: float = 0.05
    middle_frac: float = 0.40
    clear_border: bool = True
    auto_polarity: bool = True


@dataclass(frozen=True)
class SegmentedGlyph:
    patch: np.ndarray
    source_box: BBox
    row: str
    order: int


def normalize_glyph(crop: np.ndarray, background: int | None = None) -> np.ndarray:
    """Pad to a centered square with background intensity, resize to 64x64x3."""
    crop = np.asarray(crop)
    if crop.size == 0 or crop.shape[0] == 0 or crop.shape[1] == 0:
        raise ValueError("normalize_glyph on an empty crop")
    if crop.shape[:2] == (PATCH, PATCH):
        return im.to_rgb(crop)
    h, w = crop.shape[:2]
    if background is None:
        border = np.concatenate([crop[0].reshape(-1), crop[-1].reshape(-1),
                                 crop[:, 0].reshape(-1), crop[:, -1].reshape(-1)])
        background = int(np.median(border))
    side = max(h, w)
    square = np.full((side, side) + crop.shape[2:], background, dtype=np.uint8)
    y0, x0 = (side - h) // 2, (side - w) // 2
    square[y0:y0 + h, x0:x0 + w] = crop
    return im.to_rgb(im.resize(square, PATCH, PATCH))


def split_rows(mask: np.ndarray, config: SegmentConfig = SegmentConfig()) -> list[tuple[int, int]]:
    """Row bands ``[(y0, y1), ...]``: two when a projection valley separates them."""
    h = mask.shape[0]
    proj = im.horizontal_projection(mask)
    if h < 2 or proj.max() == 0:
        return [(0, h)]
    lo = math.floor(h * (0.5 - config.middle_frac / 2))
    hi = math.ceil(h * (0.5 + config.middle_frac / 2))
    lo, hi = max(lo, 1), min(hi, h - 1)
    if lo >= hi:
        return [(0, h)]
    y = lo + int(np.argmin(proj[lo:hi]))
    if proj[y] >= config.valley_frac * proj.max():
        return [(0, h)]
    if proj[:y].sum() == 0 or proj[y + 1:].sum() == 0:
        return [(0, h)]
    return [(0, y), (y, h)]


def _clear_border(mask):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n == 0:
        return mask
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    edge = edge[edge > 0]
    return np.where(np.isin(labels, edge), 0, mask).astype(np.uint8)


def binarize_plate(gray: np.ndarray, config: SegmentConfig = SegmentConfig()) -> np.ndarray:
    t = im.otsu_threshold(gray)
    mask = im.binarize(gray, t, im.DARK_FG)
    if config.auto_polarity and 0 < (gray > t).sum() < mask.sum():
        # glyphs are the minority class; an inverted crop has light glyphs
        mask = im.binarize(gray, t, im.LIGHT_FG)
    if config.clear_border:
        mask = _clear_border(mask)
    return mask


def _merge(boxes: list[BBox], overlap: float) -> list[BBox]:
    boxes = list(boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                span = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
                if span > 0 and span >= overlap * min(a.width, b.width):
                    boxes[i] = BBox(min(a.x_min, b.x_min), min(a.y_min, b.y_min),
                                    max(a.x_max, b.x_max), max(a.y_max, b.y_max))
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return boxes


def segment_row(mask: np.ndarray, config: SegmentConfig = SegmentConfig()) -> list[BBox]:
    """Glyph boxes (row-local coordinates) for one row band, left to right."""
    ys = np.nonzero(mask.any(axis=1))[0]
    if len(ys) == 0:
        return []
    row_h = ys[-1] - ys[0] + 1
    row_area = row_h * mask.shape[1]
    lo, hi = config.aspect_range
    keep = []
    for c in im.connected_components(mask, 8):
        b = c.bbox
        aspect = b.height / b.width
        if (c.pixel_count >= config.min_area_frac * row_area
                and b.height >= config.min_height_frac * row_h
                and lo <= aspect <= hi):
            keep.append(b)
    boxes = _merge(keep, config.merge_overlap)
    return sorted(boxes, key=lambda b: (b.x_min, b.y_min))


def segment_plate(plate: np.ndarray, config: SegmentConfig = SegmentConfig()) -> list[SegmentedGlyph]:
    gray = im.ensure_gray(im.as_image(plate))
    mask = binarize_plate(gray, config)
    if not mask.any():
        return []
    bands = split_rows(mask, config)
    labels = [UPPER, LOWER] if len(bands) == 2 else [LOWER]
    background = int(np.median(gray[mask == 0])) if (mask == 0).any() else 255
    out = []
    for (y0, y1), row in zip(bands, labels):
        for order, b in enumerate(segment_row(mask[y0:y1], config)):
            box = b.translated(0, y0)
            crop = im.crop(gray, box)
            out.append(SegmentedGlyph(normalize_glyph(crop, background), box, row, order))
    return out
