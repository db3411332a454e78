"""Axis-aligned boxes, overlap measures, NMS and average precision."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {tuple(self)}")

    def __iter__(self):
        return iter((self.x_min, self.y_min, self.x_max, self.y_max))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def scaled(self, sx: float, sy: float) -> "BBox":
        return BBox(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clamped(self, width: float, height: float) -> "BBox":
        return BBox(
            max(0.0, self.x_min), max(0.0, self.y_min),
            min(float(width), self.x_max), min(float(height), self.y_max),
        )


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class EvalReport:
    map: float
    precision_recall: list[tuple[float, float]] = field(default_factory=list)
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    @property
    def detection_rate(self) -> float:
        """Correctly detected truths over all truths."""
        total = self.true_positives + self.false_negatives
        return self.true_positives / total if total else 0.0


def intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    inter = intersection(a, b)
    return inter / (a.area + b.area - inter)


def enclosing(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.x_min, b.x_min), min(a.y_min, b.y_min),
                max(a.x_max, b.x_max), max(a.y_max, b.y_max))


def giou(a: BBox, b: BBox) -> float:
    inter = intersection(a, b)
    union = a.area + b.area - inter
    hull = enclosing(a, b).area
    return inter / union - (hull - union) / hull


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression; equal scores keep input order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def _align(preds, truths):
    if isinstance(preds, Mapping) or isinstance(truths, Mapping):
        if not (isinstance(preds, Mapping) and isinstance(truths, Mapping)):
            raise ValueError("preds and truths must both be mappings or both sequences")
        if set(preds) != set(truths):
            missing = set(preds) ^ set(truths)
            raise ValueError(f"image identifiers do not align: {sorted(map(str, missing))[:5]}")
        keys = list(truths)
        return [preds[k] for k in keys], [truths[k] for k in keys]
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} prediction lists for {len(truths)} images")
    return list(preds), list(truths)


def match_detections(preds, truths, iou_threshold: float = 0.5):
    """Rank detections globally and mark each TP/FP.

    Returns ``(ranked, flags, n_truths)`` where ``ranked`` holds
    ``(image_index, Detection)`` pairs in descending score order.
    """
    preds, truths = _align(preds, truths)
    flat = [(img, d) for img, ds in enumerate(preds) for d in ds]
    ranked = [flat[i] for i in sorted(range(len(flat)), key=lambda i: -flat[i][1].score)]
    matched = [[False] * len(t) for t in truths]
    flags = []
    for img, det in ranked:
        best_j, best_iou = -1, -1.0
        for j, gt in enumerate(truths[img]):
            if matched[img][j]:
                continue
            v = iou(det.box, gt)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[img][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return ranked, flags, sum(len(t) for t in truths)


def average_precision(preds, truths, iou_threshold: float = 0.5) -> EvalReport:
    """All-point interpolated AP for a single class (so mAP == AP)."""
    _, flags, n_truths = match_detections(preds, truths, iou_threshold)
    tp = fp = 0
    curve = []
    for is_tp in flags:
        tp += is_tp
        fp += not is_tp
        recall = tp / n_truths if n_truths else 0.0
        curve.append((recall, tp / (tp + fp)))

    ap = 0.0
    if n_truths:
        # precision envelope, swept from the high-recall end
        envelope = [p for _, p in curve]
        for i in range(len(envelope) - 2, -1, -1):
            envelope[i] = max(envelope[i], envelope[i + 1])
        prev_recall = 0.0
        for (r, _), p in zip(curve, envelope):
            if r > prev_recall:
                ap += (r - prev_recall) * p
                prev_recall = r
    return EvalReport(
        map=min(1.0, ap),
        precision_recall=curve,
        true_positives=tp,
        false_positives=fp,
        false_negatives=n_truths - tp,
    )
