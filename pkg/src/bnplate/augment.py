"""Seeded photometric augmentations applied to synthetic training images."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdditiveGaussianNoise:
    sigma: float

    def check(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float

    def check(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class SaltPepper:
    density: float

    def check(self):
        if not 0 <= self.density <= 1:
            raise ValueError("density must lie in [0, 1]")


@dataclass(frozen=True)
class CoarseDropout:
    fraction: float
    patch_size: int

    def check(self):
        if not 0 <= self.fraction <= 1:
            raise ValueError("fraction must lie in [0, 1]")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")


@dataclass(frozen=True)
class ContrastNormalization:
    gain: float

    def check(self):
        if not self.gain > 0:
            raise ValueError("gain must be > 0")


AugmentSpec = AdditiveGaussianNoise | GaussianBlur | SaltPepper | CoarseDropout | ContrastNormalization


def _finish(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    norm = np.zeros(n)
    for off, w in zip(range(-radius, radius + 1), kernel):
        lo, hi = max(0, -off), min(n, n - off)
        if lo >= hi:
            continue
        dst = [slice(None)] * arr.ndim
        src = [slice(None)] * arr.ndim
        dst[axis] = slice(lo, hi)
        src[axis] = slice(lo + off, hi + off)
        out[tuple(dst)] += w * arr[tuple(src)]
        norm[lo:hi] += w
    shape = [1] * arr.ndim
    shape[axis] = n
    return out / norm.reshape(shape)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    arr = img.astype(np.float64)
    arr = _blur_axis(arr, k, 0)
    arr = _blur_axis(arr, k, 1)
    return _finish(arr)


def augment(img: np.ndarray, op: AugmentSpec, rng_seed: int) -> np.ndarray:
    """Apply one augmentation; deterministic for a given seed."""
    op.check()
    rng = np.random.default_rng(rng_seed)
    h, w = img.shape[:2]

    if isinstance(op, AdditiveGaussianNoise):
        if op.sigma == 0:
            return img.copy()
        return _finish(img + rng.normal(0.0, op.sigma, size=img.shape))

    if isinstance(op, GaussianBlur):
        return gaussian_blur(img, op.sigma)

    if isinstance(op, SaltPepper):
        out = img.copy()
        hit = rng.random((h, w)) < op.density
        salt = rng.random((h, w)) < 0.5
        out[hit & salt] = 255
        out[hit & ~salt] = 0
        return out

    if isinstance(op, CoarseDropout):
        out = img.copy()
        p = op.patch_size
        gh, gw = math.ceil(h / p), math.ceil(w / p)
        drop = rng.random((gh, gw)) < op.fraction
        mean = img.reshape(h, w, -1).mean(axis=(0, 1))
        fill = np.rint(mean).astype(np.uint8)
        if img.ndim == 2:
            fill = fill[0]
        for gy, gx in zip(*np.nonzero(drop)):
            out[gy * p:(gy + 1) * p, gx * p:(gx + 1) * p] = fill
        return out

    if isinstance(op, ContrastNormalization):
        arr = img.astype(np.float64)
        mean = arr.reshape(h, w, -1).mean(axis=(0, 1))
        if img.ndim == 2:
            mean = mean[0]
        return _finish(mean + op.gain * (arr - mean))

    raise TypeError(f"unknown augmentation {op!r}")


def augment_chain(img: np.ndarray, ops, rng_seed: int) -> np.ndarray:
    seeds = np.random.SeedSequence(rng_seed).generate_state(max(1, len(ops)), dtype=np.uint64)
    for op, s in zip(ops, seeds):
        img = augment(img, op, int(s))
    return img
