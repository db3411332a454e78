"""Glyph classifier: a 7-conv CNN over 64x64x3 patches with a softmax head."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging as im
from .nn import LayerSpec, Network, cross_entropy_batch, sgd_step
from .nn.training import TrainConfig, split_indices
from .nn.weights_io import load_weights, save_weights
from .segmenter import PATCH
from .synth import read_annotations, read_class_map

log = logging.getLogger(__name__)

INPUT_SHAPE = (PATCH, PATCH, 3)


def ocr_layer_specs(class_count: int) -> list[LayerSpec]:
    if class_count < 2:
        raise ValueError("the recognizer needs at least 2 classes")
    specs = [
        LayerSpec.conv("conv1", 5, 5, 3, 64), LayerSpec("relu", "relu1"),
        LayerSpec.conv("conv2", 5, 5, 64, 64), LayerSpec("relu", "relu2"),
        LayerSpec("maxpool", "pool"),
    ]
    for i in range(3, 8):
        specs += [LayerSpec.conv(f"conv{i}", 3, 3, 64, 64), LayerSpec("relu", f"relu{i}")]
    specs += [
        LayerSpec("flatten", "flatten"),
        LayerSpec.dense("dense1", 18 * 18 * 64, 32), LayerSpec("relu", "relu_d"),
        LayerSpec.dense("dense2", 32, class_count),
        LayerSpec("softmax", "softmax"),
    ]
    return specs


def build_ocr_network(class_count: int, seed: int = 0, dtype=np.float32) -> Network:
    net = Network(ocr_layer_specs(class_count), INPUT_SHAPE, dtype=dtype)
    net.init_weights(seed)
    return net


def prepare_patches(patches) -> np.ndarray:
    """uint8 patches ``(N, 64, 64[, 3])`` -> float32 network input."""
    x = np.asarray(patches)
    if x.ndim == 3:
        x = np.repeat(x[..., None], 3, axis=3)
    if x.shape[1:] != INPUT_SHAPE:
        raise ValueError(f"patches must be 64x64x3, got {x.shape[1:]}")
    return (x.astype(np.float32) / 255.0 - 0.5)


def save_class_map(path, class_names) -> None:
    Path(path).write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(class_names)), encoding="utf-8")


def load_class_map(path) -> list[str]:
    names = read_class_map(path)
    if len(names) < 2:
        raise ValueError(f"{path}: class map needs at least 2 classes")
    return names


def class_map_path_for(weights_path) -> Path:
    return Path(str(weights_path) + ".classes")


class Recognizer:
    """Trained weights plus their class names; inference only."""

    def __init__(self, weights: dict, class_names):
        self.class_names = list(class_names)
        self.net = Network(ocr_layer_specs(len(self.class_names)), INPUT_SHAPE)
        self.net.set_weights(weights)

    def probabilities(self, patches, batch_size: int = 64) -> np.ndarray:
        return self.net.predict(prepare_patches(patches), batch_size).astype(np.float64)

    def recognize(self, patch):
        patch = np.asarray(patch)
        if patch.shape not in (INPUT_SHAPE, INPUT_SHAPE[:2]):
            raise ValueError(f"patch must be 64x64x3, got {patch.shape}")
        p = self.probabilities(patch[None])[0]
        k = int(np.argmax(p))
        return k, self.class_names[k], float(p[k])

    def recognize_batch(self, patches):
        if len(patches) == 0:
            return []
        p = self.probabilities(np.stack(patches))
        ks = p.argmax(axis=1)
        return [(int(k), self.class_names[k], float(p[i, k])) for i, k in enumerate(ks)]

    def save(self, path) -> None:
        save_weights(path, self.net.weights())
        save_class_map(class_map_path_for(path), self.class_names)

    @classmethod
    def load(cls, path) -> "Recognizer":
        return cls(load_weights(path), load_class_map(class_map_path_for(path)))


def recognize_glyph(weights, patch, class_names=None):
    """``(class index, class name, confidence)`` for one 64x64x3 patch."""
    model = weights if isinstance(weights, Recognizer) else Recognizer(weights, class_names)
    return model.recognize(patch)


# ---------------------------------------------------------------- training

@dataclass
class OcrEpoch:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_loss: float = float("nan")


def load_glyph_samples(manifest):
    """``(patches uint8 (N,64,64), labels)`` from a glyph dataset manifest."""
    patches, labels = [], []
    for i in range(len(manifest)):
        img = im.ensure_gray(manifest.load_image(i))
        ann = read_annotations(manifest.annotation_path(i))
        if len(ann) != 1:
            raise ValueError(f"{manifest.annotation_path(i)}: expected one glyph label")
        if img.shape != (PATCH, PATCH):
            img = im.resize(img, PATCH, PATCH)
        patches.append(img)
        labels.append(ann[0][0])
    return np.stack(patches) if patches else np.zeros((0, PATCH, PATCH), np.uint8), np.array(labels, dtype=np.int64)


def accuracy(net: Network, x, labels, batch_size: int = 64) -> float:
    return _evaluate(net, x, labels, batch_size)[0]


def _evaluate(net: Network, x, labels, batch_size: int = 64):
    """``(accuracy, mean cross-entropy)`` over a labelled set."""
    if len(x) == 0:
        return 0.0, float("nan")
    probs = net.predict(x, batch_size)
    loss, _ = cross_entropy_batch(probs, labels)
    return float((probs.argmax(axis=1) == labels).mean()), float(loss)


def train_ocr(patches, labels, class_names, config: TrainConfig = TrainConfig(),
              target_accuracy: float | None = None):
    """SGD on softmax cross-entropy; returns ``(best_weights, history)``.

    Weights are taken from the epoch with the highest validation accuracy,
    ties going to the lower validation loss. With ``target_accuracy`` training stops once validation reaches it.
    """
    k = len(class_names)
    labels = np.asarray(labels, dtype=np.int64)
    x = prepare_patches(patches)
    if len(x) != len(labels):
        raise ValueError("patches and labels differ in length")
    if len(x) == 0:
        raise ValueError("empty dataset")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside the class map")
    train_idx, val_idx = split_indices(len(x), config.split, config.rng_seed)
    missing = sorted(set(range(k)) - set(labels[train_idx].tolist()))
    if missing:
        raise ValueError(f"classes missing from the training split: {[class_names[m] for m in missing]}")
    if len(val_idx) == 0:
        val_idx = train_idx

    net = build_ocr_network(k, config.rng_seed)
    rng = np.random.default_rng(config.rng_seed + 1)
    fused = len(net.layers) - 1
    history: list[OcrEpoch] = []
    best_key, best_weights = None, None
    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            probs = net.forward(x[batch])
            loss, _ = cross_entropy_batch(probs, labels[batch])
            total += loss * len(batch)
            # softmax + cross-entropy backward fused: (p - onehot) / n
            grad = probs.astype(np.float64)
            grad[np.arange(len(batch)), labels[batch]] -= 1
            net.backward((grad / len(batch)).astype(net.dtype), start=fused, need_input_grad=False)
            sgd_step(net.weights(), net.gradients(), config.learning_rate, inplace=True)
        net.clear()
        acc, val_loss = _evaluate(net, x[val_idx], labels[val_idx])
        history.append(OcrEpoch(epoch, total / len(order), acc, val_loss))
        log.info("epoch %d loss %.4f val_acc %.4f val_loss %.4f", epoch, total / len(order), acc, val_loss)
        if best_key is None or (acc, -val_loss) > best_key:
            best_key, best_weights = (acc, -val_loss), copy.deepcopy(net.weights())
        if target_accuracy is not None and acc >= target_accuracy:
            break
    return best_weights, history


def confusion_matrix(model: Recognizer, patches, labels) -> np.ndarray:
    k = len(model.class_names)
    pred = model.probabilities(patches).argmax(axis=1) if len(patches) else np.zeros(0, int)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), pred), 1)
    return cm


SPLIT_RATIOS = ((0.70, 0.30), (0.80, 0.20), (0.85, 0.15))


def split_study(patches, labels, class_names, config: TrainConfig = TrainConfig(),
                splits=SPLIT_RATIOS, target_accuracy: float | None = None):
    """Train once per split ratio; rows of ``(train %, val %, best val accuracy, epochs run)``."""
    rows = []
    for split in splits:
        cfg = TrainConfig(config.epochs, config.batch_size, config.learning_rate, config.rng_seed, split)
        _, hist = train_ocr(patches, labels, class_names, cfg, target_accuracy)
        rows.append((round(split[0] * 100), round(split[1] * 100),
                     max(h.val_accuracy for h in hist), len(hist)))
    return rows


def format_split_table(rows) -> str:
    lines = ["ratio\tval_accuracy\tepochs"]
    lines += [f"{a}:{b}\t{acc * 100:.2f}\t{n}" for a, b, acc, n in rows]
    return "\n".join(lines) + "\n"
