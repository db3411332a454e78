"""Detect -> crop -> segment -> recognize -> parse, per image."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imaging as im
from . import pnm
from .detector import Detector, load_spec, spec_path_for
from .geometry import BBox, iou
from .grammar import Grammar, PlateParseError, PlateRecord, Token, format_plate, parse_plate
from .nn.weights_io import load_weights
from .ocr import Recognizer, class_map_path_for, load_class_map
from .segmenter import SegmentConfig, segment_plate
from .synth import load_atlas

FORMATS = ("text", "json-lines")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    detector_weights: str = ""
    detector_spec: str = ""          # defaults to the weights sidecar
    ocr_weights: str = ""
    class_map: str = ""              # defaults to the weights sidecar
    atlas: str = ""
    conf_threshold: float = 0.25
    crop_margin: float = 0.0
    refine_box: bool = True
    refine_search: float = 0.25      # detection grown by this fraction per side
    refine_tolerance: int = 24       # gray levels around the plate body brightness
    output_format: str = "text"
    segmentation: SegmentConfig = SegmentConfig()

    def __post_init__(self):
        if self.output_format not in FORMATS:
            raise ValueError(f"output format must be one of {FORMATS}")
        if not 0 <= self.conf_threshold <= 1:
            raise ValueError("conf_threshold must lie in [0, 1]")
        if self.crop_margin < 0:
            raise ValueError("crop_margin must be >= 0")
        if self.refine_search < 0 or self.refine_tolerance < 0:
            raise ValueError("refinement parameters must be >= 0")


_SEG_KEYS = {f.name for f in fields(SegmentConfig)}
_KEY_ALIASES = {"format": "output_format", "confidence": "conf_threshold"}


def read_config_file(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(current, text: str):
    if isinstance(current, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(current, tuple):
        return tuple(type(c)(p) for c, p in zip(current, text.replace(":", ",").split(",")))
    return type(current)(text)


def build_config(values: dict[str, str], base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    top, seg = {}, {}
    for key, text in values.items():
        key = _KEY_ALIASES.get(key, key)
        if key in _SEG_KEYS:
            seg[key] = _coerce(getattr(base.segmentation, key), text)
        elif key in {f.name for f in fields(PipelineConfig)} and key != "segmentation":
            top[key] = _coerce(getattr(base, key), text)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(base, segmentation=replace(base.segmentation, **seg), **top)


@dataclass
class PlateResult:
    box: BBox
    score: float
    glyphs: list[tuple[str, float, str]] = field(default_factory=list)
    record: PlateRecord | None = None
    error: PlateParseError | None = None

    def to_json(self) -> dict:
        err = None
        if self.error is not None:
            err = {"row": self.error.row, "position": self.error.position,
                   "token": self.error.token, "message": str(self.error)}
        return {
            "box": [round(float(v), 3) for v in self.box],
            "score": round(self.score, 6),
            "record": format_plate(self.record) if self.record else None,
            "error": err,
            "glyphs": [{"class": n, "confidence": round(c, 6), "row": r} for n, c, r in self.glyphs],
        }


@dataclass
class ImageResult:
    image: str
    plates: list[PlateResult] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> dict:
        return {"v": SCHEMA_VERSION, "image": self.image,
                "plates": [p.to_json() for p in self.plates], "error": self.error}

    def to_text(self) -> str:
        if self.error is not None:
            return f"{self.image}\tERROR\t{self.error}"
        cols = [self.image, str(len(self.plates))]
        for p in self.plates:
            box = ",".join(f"{v:.1f}" for v in p.box)
            text = format_plate(p.record) if p.record else f"UNPARSED ({p.error})"
            cols.append(f"{box}\t{p.score:.4f}\t{text}")
        return "\t".join(cols)

    def render(self, fmt: str) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True) if fmt == "json-lines" else self.to_text()


def _grow(box: BBox, frac: float, w: int, h: int) -> BBox:
    dx, dy = frac * box.width, frac * box.height
    return BBox(box.x_min - dx, box.y_min - dy, box.x_max + dx, box.y_max + dy).clamped(w, h)


def refine_plate_box(gray: np.ndarray, box: BBox, search: float = 0.25, tolerance: int = 24,
                     min_iou: float = 0.4) -> BBox:
    """Snap a coarse detection to the plate body at full resolution.

    The plate body is the large region near the brightness of the bright
    half of the detected box; glyphs are holes in it, so its bounding box is
    the plate. Falls back to ``box`` when the snapped box disagrees too much.
    """
    h, w = gray.shape
    x0, y0, x1, y1 = im.crop_bounds(gray.shape, _grow(box, search, w, h))
    region = gray[y0:y1, x0:x1].astype(np.int16)
    inner = im.crop(gray, box)
    if region.size == 0 or inner.size == 0:
        return box
    level = np.percentile(inner, 75)
    mask = np.abs(region - level) <= tolerance
    mask = ndimage.binary_opening(mask, np.ones((3, 3), bool))
    labels, n = ndimage.label(mask)
    if n == 0:
        return box
    bx0, by0, bx1, by1 = im.crop_bounds(gray.shape, box)
    inside = labels[by0 - y0:by1 - y0, bx0 - x0:bx1 - x0]
    counts = np.bincount(inside.ravel(), minlength=n + 1)
    counts[0] = 0
    k = int(counts.argmax())
    if counts[k] == 0:
        return box
    ys, xs = ndimage.find_objects(labels)[k - 1]
    snapped = BBox(x0 + xs.start, y0 + ys.start, x0 + xs.stop, y0 + ys.stop)
    return snapped if iou(snapped, box) >= min_iou else box


def read_any_image(path) -> np.ndarray:
    """PGM/PPM via the built-in codec; anything else through Pillow."""
    with open(path, "rb") as f:
        head = f.read(2)
    if head in (b"P5", b"P6"):
        return pnm.read_image(path)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L" if img.mode in ("1", "L", "I;16", "I") else "RGB"))
    except UnidentifiedImageError:
        raise ValueError("unrecognized image format") from None


class Pipeline:
    def __init__(self, detector: Detector, recognizer: Recognizer, config: PipelineConfig = PipelineConfig(),
                 grammar: Grammar = Grammar()):
        self.detector = detector
        self.recognizer = recognizer
        self.config = config
        self.grammar = grammar

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "Pipeline":
        """Load and validate every referenced file before any image is touched."""
        for key in ("detector_weights", "ocr_weights"):
            if not getattr(config, key):
                raise ValueError(f"config is missing {key}")
        spec = load_spec(config.detector_spec or spec_path_for(config.detector_weights))
        detector = Detector(spec, load_weights(config.detector_weights))
        names = load_class_map(config.class_map or class_map_path_for(config.ocr_weights))
        recognizer = Recognizer(load_weights(config.ocr_weights), names)
        if config.atlas:
            missing = set(names) - set(load_atlas(config.atlas).class_names)
            if missing:
                raise ValueError(f"class map names absent from the atlas: {sorted(missing)}")
        return cls(detector, recognizer, config)

    def read_plate(self, plate: np.ndarray, box: BBox, score: float) -> PlateResult:
        segs = segment_plate(plate, self.config.segmentation)
        result = PlateResult(box, score)
        preds = self.recognizer.recognize_batch([s.patch for s in segs])
        tokens = []
        for seg, (_, name, conf) in zip(segs, preds):
            tokens.append(Token(name, conf, seg.row, seg.order))
            result.glyphs.append((name, conf, seg.row))
        try:
            result.record = parse_plate(tokens, self.grammar)
        except PlateParseError as e:
            result.error = e
        return result

    def process(self, img: np.ndarray) -> list[PlateResult]:
        img = im.as_image(img)
        gray = im.ensure_gray(img)
        h, w = gray.shape
        out = []
        for det in self.detector.detect(gray, self.config.conf_threshold):
            box = det.box
            if self.config.refine_box:
                box = refine_plate_box(gray, box, self.config.refine_search, self.config.refine_tolerance)
            m = self.config.crop_margin
            if m:
                box = BBox(box.x_min - m * box.width, box.y_min - m * box.height,
                           box.x_max + m * box.width, box.y_max + m * box.height).clamped(w, h)
            try:
                plate = im.crop(gray, box)
            except ValueError:
                continue
            out.append(self.read_plate(plate, box, det.score))
        return out

    def process_path(self, path) -> ImageResult:
        try:
            img = read_any_image(path)
        except (OSError, ValueError) as e:
            return ImageResult(str(path), error=f"unreadable image: {e}")
        return ImageResult(str(path), self.process(img))
