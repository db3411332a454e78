"""Classification losses with probability clamping."""
from __future__ import annotations

import numpy as np

from .layers import sigmoid

EPS = 1e-7


def cross_entropy(probs, target: int) -> float:
    """``-ln p[target]`` for a single probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[-1]:
        raise ValueError(f"target class {target} outside [0, {probs.shape[-1]})")
    return float(-np.log(np.clip(probs[target], EPS, 1 - EPS)))


def cross_entropy_batch(probs, targets):
    """Mean cross-entropy over a batch and its gradient w.r.t. ``probs``."""
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    n, k = probs.shape
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        raise ValueError("target class index out of range")
    picked = np.clip(probs[np.arange(n), targets].astype(np.float64), EPS, 1 - EPS)
    loss = float(-np.log(picked).mean())
    grad = np.zeros_like(probs)
    grad[np.arange(n), targets] = -1.0 / (picked * n)
    return loss, grad


def bce(p, target):
    """Binary cross-entropy, elementwise; ``p`` clamped to ``[EPS, 1 - EPS]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    t = np.asarray(target, dtype=np.float64)
    out = -(t * np.log(p) + (1 - t) * np.log(1 - p))
    return float(out) if out.ndim == 0 else out


def bce_with_logits(z, target):
    """BCE of ``sigmoid(z)`` computed stably, plus its gradient w.r.t. ``z``.

    Matches :func:`bce` of the sigmoid wherever the clamp is inactive.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return loss, sigmoid(z) - t
