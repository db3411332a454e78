"""Training configuration shared by the detector and the recognizer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    rng_seed: int = 0
    split: tuple[float, float] = (0.8, 0.2)

    def __post_init__(self):
        tr, va = self.split
        if not (0 < tr <= 1 and 0 <= va < 1 and tr + va <= 1 + 1e-9):
            raise ValueError(f"invalid split {self.split}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size must be >= 1 and learning_rate > 0")


def parse_split(text: str) -> tuple[float, float]:
    """``"80:20"`` -> ``(0.8, 0.2)``; fractions like ``"0.8,0.2"`` also accepted."""
    for sep in (":", ","):
        if sep in text:
            a, b = (float(p) for p in text.split(sep))
            break
    else:
        raise ValueError(f"cannot parse split {text!r}")
    total = a + b if a + b > 1 + 1e-9 else 1.0
    return a / total, b / total


def split_indices(n: int, split, seed: int):
    """Seeded shuffle then contiguous train / validation slices."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(split[0] * n)))
    n_val = min(n - n_train, int(round(split[1] * n)))
    return order[:n_train], order[n_train:n_train + n_val]
