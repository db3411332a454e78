"""Single-scale, single-class grid detector for plate localization.

Each of the S x S cells predicts ``(tx, ty, tw, th, obj)``: the box center is
``(cell + sigmoid(t)) * stride``, its size ``anchor * exp(t)``, and the
objectness ``sigmoid(obj)``. Training minimizes objectness BCE over all cells
plus ``lambda * (1 - GIoU)`` over the cells responsible for a plate.

The backbone is four valid 3x3 conv + relu + 2x2 maxpool blocks and a 1x1
head. The input is zero-padded by ``2**blocks - 1`` pixels per side so the
output grid lands exactly on the cell centers of the unpadded frame.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging as im
from .geometry import BBox, Detection, average_precision, nms
from .nn import LayerSpec, Network, bce_with_logits, sgd_step
from .nn.layers import sigmoid
from .nn.training import TrainConfig, split_indices
from .nn.weights_io import load_weights, save_weights

log = logging.getLogger(__name__)

GIOU_WEIGHT = 5.0
NMS_IOU = 0.45
_FRAC_EPS = 1e-9


@dataclass(frozen=True)
class DetectorSpec:
    input_size: int = 128
    grid: int = 8
    anchor: tuple[float, float] = (48.0, 16.0)
    channels: tuple[int, ...] = (8, 16, 32, 64)
    in_channels: int = 1

    def __post_init__(self):
        if self.input_size % self.grid:
            raise ValueError("input_size must be divisible by grid")
        if self.input_size != self.grid * 2 ** len(self.channels):
            raise ValueError(
                f"{len(self.channels)} pooling blocks need input_size = grid * {2 ** len(self.channels)}")
        if min(self.anchor) <= 0:
            raise ValueError("anchor dimensions must be positive")

    @property
    def stride(self) -> float:
        return self.input_size / self.grid

    @property
    def pad(self) -> int:
        return 2 ** len(self.channels) - 1

    def layer_specs(self) -> list[LayerSpec]:
        specs, c_in = [], self.in_channels
        for i, c in enumerate(self.channels, 1):
            specs += [LayerSpec.conv(f"conv{i}", 3, 3, c_in, c),
                      LayerSpec("relu", f"relu{i}"),
                      LayerSpec("maxpool", f"pool{i}")]
            c_in = c
        specs.append(LayerSpec.conv("head", 1, 1, c_in, 5))
        return specs

    def network(self, dtype=np.float32) -> Network:
        side = self.input_size + 2 * self.pad
        return Network(self.layer_specs(), (side, side, self.in_channels), dtype=dtype)


def save_spec(path, spec: DetectorSpec) -> None:
    lines = [
        f"input_size={spec.input_size}",
        f"grid={spec.grid}",
        f"anchor_w={spec.anchor[0]:g}",
        f"anchor_h={spec.anchor[1]:g}",
        f"channels={','.join(map(str, spec.channels))}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_spec(path) -> DetectorSpec:
    kv = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        kv[key.strip()] = value.strip()
    try:
        channels = tuple(int(c) for c in kv["channels"].split(",")) if "channels" in kv else DetectorSpec.channels
        return DetectorSpec(
            input_size=int(kv["input_size"]),
            grid=int(kv["grid"]),
            anchor=(float(kv["anchor_w"]), float(kv["anchor_h"])),
            channels=channels,
        )
    except KeyError as e:
        raise ValueError(f"{path}: missing key {e.args[0]}") from None


def spec_path_for(weights_path) -> Path:
    return Path(str(weights_path) + ".spec")


# ---------------------------------------------------------------- targets

@dataclass
class TargetAssignment:
    """Per-cell training targets for one image."""

    objectness: np.ndarray            # (S, S) in {0, 1}
    offsets: np.ndarray               # (S, S, 4) tx, ty, tw, th (valid where objectness == 1)
    boxes: dict[tuple[int, int], BBox] = field(default_factory=dict)


def _logit(p):
    p = np.clip(p, _FRAC_EPS, 1 - _FRAC_EPS)
    return np.log(p / (1 - p))


def encode_targets(truths, spec: DetectorSpec) -> TargetAssignment:
    s, stride = spec.grid, spec.stride
    aw, ah = spec.anchor
    obj = np.zeros((s, s))
    offsets = np.zeros((s, s, 4))
    boxes: dict[tuple[int, int], BBox] = {}
    for box in truths:
        cx, cy = box.center
        if not (0 <= cx <= spec.input_size and 0 <= cy <= spec.input_size):
            raise ValueError(f"box center ({cx}, {cy}) outside the {spec.input_size}px frame")
        j = min(int(cx // stride), s - 1)
        i = min(int(cy // stride), s - 1)
        if (i, j) in boxes and boxes[(i, j)].area >= box.area:
            continue
        boxes[(i, j)] = box
        obj[i, j] = 1
        offsets[i, j] = (
            _logit(cx / stride - j),
            _logit(cy / stride - i),
            np.log(box.width / aw),
            np.log(box.height / ah),
        )
    return TargetAssignment(obj, offsets, boxes)


def encode_raw(truths, spec: DetectorSpec, confidence: float = 20.0) -> np.ndarray:
    """A raw head tensor that decodes to exactly ``truths``."""
    t = encode_targets(truths, spec)
    raw = np.zeros((spec.grid, spec.grid, 5))
    raw[..., :4] = t.offsets
    raw[..., 4] = np.where(t.objectness > 0, confidence, -confidence)
    return raw


def _decode_cells(raw, spec: DetectorSpec):
    """Center-size boxes for every cell: arrays (S, S) of cx, cy, w, h."""
    s, stride = spec.grid, spec.stride
    jj, ii = np.meshgrid(np.arange(s), np.arange(s))
    cx = (jj + sigmoid(raw[..., 0])) * stride
    cy = (ii + sigmoid(raw[..., 1])) * stride
    w = spec.anchor[0] * np.exp(raw[..., 2])
    h = spec.anchor[1] * np.exp(raw[..., 3])
    return cx, cy, w, h


def decode_predictions(raw, spec: DetectorSpec, conf_threshold: float = 0.5,
                       nms_iou: float = NMS_IOU, clamp: bool = True) -> list[Detection]:
    raw = np.asarray(raw, dtype=np.float64)
    cx, cy, w, h = _decode_cells(raw, spec)
    score = sigmoid(raw[..., 4])
    dets = []
    for i, j in zip(*np.nonzero(score >= conf_threshold)):
        box = BBox.from_center(float(cx[i, j]), float(cy[i, j]), float(w[i, j]), float(h[i, j]))
        if clamp:
            box = box.clamped(spec.input_size, spec.input_size)
        dets.append(Detection(box, float(score[i, j])))
    return nms(dets, nms_iou)


# ---------------------------------------------------------------- loss

def giou_with_grad(pred: np.ndarray, truth: np.ndarray):
    """GIoU of corner boxes ``(..., 4)`` and its gradient w.r.t. ``pred``."""
    x1, y1, x2, y2 = np.moveaxis(pred, -1, 0)
    X1, Y1, X2, Y2 = np.moveaxis(truth, -1, 0)
    ix = np.minimum(x2, X2) - np.maximum(x1, X1)
    iy = np.minimum(y2, Y2) - np.maximum(y1, Y1)
    ox, oy = ix > 0, iy > 0
    iw, ih = np.where(ox, ix, 0.0), np.where(oy, iy, 0.0)
    inter = iw * ih
    pw, ph = x2 - x1, y2 - y1
    area_p = pw * ph
    union = area_p + (X2 - X1) * (Y2 - Y1) - inter
    cw = np.maximum(x2, X2) - np.minimum(x1, X1)
    chh = np.maximum(y2, Y2) - np.minimum(y1, Y1)
    hull = cw * chh
    g = inter / union + union / hull - 1.0

    d_inter = (union + inter) / union**2 - 1.0 / hull
    d_area = -inter / union**2 + 1.0 / hull
    d_hull = -union / hull**2
    # partials of inter, area_p and hull w.r.t. each corner
    di_x1 = np.where(ox & (x1 > X1), -ih, 0.0)
    di_x2 = np.where(ox & (x2 < X2), ih, 0.0)
    di_y1 = np.where(oy & (y1 > Y1), -iw, 0.0)
    di_y2 = np.where(oy & (y2 < Y2), iw, 0.0)
    dh_x1 = np.where(x1 < X1, -chh, 0.0)
    dh_x2 = np.where(x2 > X2, chh, 0.0)
    dh_y1 = np.where(y1 < Y1, -cw, 0.0)
    dh_y2 = np.where(y2 > Y2, cw, 0.0)
    grad = np.stack([
        d_inter * di_x1 - d_area * ph + d_hull * dh_x1,
        d_inter * di_y1 - d_area * pw + d_hull * dh_y1,
        d_inter * di_x2 + d_area * ph + d_hull * dh_x2,
        d_inter * di_y2 + d_area * pw + d_hull * dh_y2,
    ], axis=-1)
    return g, grad


def detector_loss(raw, assignment: TargetAssignment, spec: DetectorSpec,
                  giou_weight: float = GIOU_WEIGHT, return_grad: bool = False):
    """``(total, obj_bce, giou_term)`` for one image's (S, S, 5) head output.

    With ``return_grad`` the gradient of ``total`` w.r.t. ``raw`` is appended.
    """
    raw = np.asarray(raw, dtype=np.float64)
    bce, d_obj = bce_with_logits(raw[..., 4], assignment.objectness)
    obj_bce = float(bce.sum())
    grad = np.zeros_like(raw)
    grad[..., 4] = d_obj

    giou_term = 0.0
    cells = list(assignment.boxes)
    if cells:
        ii, jj = np.array(cells).T
        t = raw[ii, jj]
        stride = spec.stride
        sx, sy = sigmoid(t[:, 0]), sigmoid(t[:, 1])
        cx, cy = (jj + sx) * stride, (ii + sy) * stride
        w, h = spec.anchor[0] * np.exp(t[:, 2]), spec.anchor[1] * np.exp(t[:, 3])
        pred = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
        truth = np.array([tuple(assignment.boxes[c]) for c in cells], dtype=np.float64)
        g, dg = giou_with_grad(pred, truth)
        giou_term = float((1.0 - g).sum())
        # d(1 - g) = -dg; chain through corners -> center/size -> raw offsets
        dl = -giou_weight * dg
        d_cx = dl[:, 0] + dl[:, 2]
        d_cy = dl[:, 1] + dl[:, 3]
        d_w = (dl[:, 2] - dl[:, 0]) / 2
        d_h = (dl[:, 3] - dl[:, 1]) / 2
        grad[ii, jj, 0] = d_cx * stride * sx * (1 - sx)
        grad[ii, jj, 1] = d_cy * stride * sy * (1 - sy)
        grad[ii, jj, 2] = d_w * w
        grad[ii, jj, 3] = d_h * h
    total = obj_bce + giou_weight * giou_term
    if return_grad:
        return total, obj_bce, giou_term, grad
    return total, obj_bce, giou_term


# ---------------------------------------------------------------- model

def prepare_input(img: np.ndarray, spec: DetectorSpec):
    """Grayscale, resize to the square input and pad. Returns ``(x, sx, sy)``.

    ``sx``/``sy`` map input-frame coordinates back to the original image.
    """
    img = im.as_image(img)
    if spec.in_channels == 1:
        img = im.ensure_gray(img)
    h, w = img.shape[:2]
    n = spec.input_size
    x = im.resize_float(img, n, n) / 255.0 - 0.5
    if x.ndim == 2:
        x = x[:, :, None]
    p = spec.pad
    x = np.pad(x, ((p, p), (p, p), (0, 0)))
    return x, w / n, h / n


class Detector:
    def __init__(self, spec: DetectorSpec = DetectorSpec(), weights: dict | None = None, seed: int = 0):
        self.spec = spec
        self.net = spec.network()
        self.net.init_weights(seed)
        head = self.net.layers[-1]
        # zero head: uniform 0.5 objectness and anchor-sized boxes at init
        head.params["weight"][:] = 0
        if weights is not None:
            self.net.set_weights(weights)

    def raw(self, batch: np.ndarray) -> np.ndarray:
        return self.net.forward(batch)

    def predict_raw(self, batch: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return self.net.predict(batch, batch_size)

    def detect(self, img: np.ndarray, conf_threshold: float = 0.5) -> list[Detection]:
        x, sx, sy = prepare_input(img, self.spec)
        raw = self.predict_raw(x[None])[0]
        h, w = img.shape[:2]
        out = []
        for d in decode_predictions(raw, self.spec, conf_threshold):
            box = d.box.scaled(sx, sy).clamped(w, h)
            out.append(Detection(box, d.score))
        return out

    def save(self, path) -> None:
        save_weights(path, self.net.weights())
        save_spec(spec_path_for(path), self.spec)

    @classmethod
    def load(cls, path) -> "Detector":
        spec = load_spec(spec_path_for(path))
        return cls(spec, load_weights(path))


def detect_plates(img, weights, spec: DetectorSpec, conf_threshold: float = 0.5) -> list[Detection]:
    return Detector(spec, weights).detect(img, conf_threshold)


# ---------------------------------------------------------------- training

def load_detection_data(manifest, spec: DetectorSpec):
    """Padded network inputs and truth boxes in input-frame coordinates."""
    xs, truths = [], []
    for i in range(len(manifest)):
        try:
            img = manifest.load_image(i)
        except (OSError, ValueError) as e:
            raise ValueError(f"unreadable image {manifest.image_path(i)}: {e}") from None
        h, w = img.shape[:2]
        x, sx, sy = prepare_input(img, spec)
        xs.append(x)
        truths.append([b.scaled(1 / sx, 1 / sy) for b in manifest.boxes(i, w, h)])
    return np.stack(xs).astype(np.float32), truths


def evaluate_map(det: Detector, xs, truths, iou_threshold: float = 0.5, conf_threshold: float = 0.01,
                 raw=None):
    raw = det.predict_raw(xs) if raw is None else raw
    preds = [decode_predictions(r, det.spec, conf_threshold) for r in raw]
    return average_precision(preds, truths, iou_threshold)


@dataclass
class EpochStats:
    epoch: int
    obj_bce: float
    giou_term: float
    val_map: float
    val_loss: float = float("nan")


def train_detector(manifest, spec: DetectorSpec = DetectorSpec(), config: TrainConfig = TrainConfig(),
                   data=None):
    """Train with SGD; returns ``(best_weights, history)``.

    The returned weights come from the epoch with the highest validation mAP.
    mAP saturates on easy data, so ties go to the lower mean validation loss.
    ``data`` may supply preloaded ``(xs, truths)``.
    """
    xs, truths = data if data is not None else load_detection_data(manifest, spec)
    if len(xs) == 0:
        raise ValueError("empty dataset")
    train_idx, val_idx = split_indices(len(xs), config.split, config.rng_seed)
    if len(val_idx) == 0:
        val_idx = train_idx
    targets = [encode_targets(t, spec) for t in truths]
    det = Detector(spec, seed=config.rng_seed)
    rng = np.random.default_rng(config.rng_seed + 1)
    history: list[EpochStats] = []
    best_key, best_weights = None, None
    n_layers = len(det.net.layers)

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        sums = np.zeros(2)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            raw = det.net.forward(xs[batch])
            grad = np.empty(raw.shape, dtype=np.float64)
            for k, idx in enumerate(batch):
                _, ob, gt, g = detector_loss(raw[k], targets[idx], spec, return_grad=True)
                sums += (ob, gt)
                grad[k] = g
            det.net.backward((grad / len(batch)).astype(det.net.dtype), need_input_grad=False)
            sgd_step(det.net.weights(), det.net.gradients(), config.learning_rate, inplace=True)
        det.net.clear()
        val_raw = det.predict_raw(xs[val_idx])
        report = evaluate_map(det, None, [truths[i] for i in val_idx], raw=val_raw)
        val_loss = float(np.mean([detector_loss(r, targets[i], spec)[0] for r, i in zip(val_raw, val_idx)]))
        stats = EpochStats(epoch, sums[0] / len(order), sums[1] / len(order), report.map, val_loss)
        history.append(stats)
        log.info("epoch %d obj_bce %.4f giou %.4f val_map %.4f val_loss %.4f",
                 epoch, *sums / len(order), report.map, val_loss)
        key = (report.map, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_weights = copy.deepcopy(det.net.weights())
    return best_weights, history
