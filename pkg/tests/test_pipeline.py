import json

import numpy as np
import pytest

from bnplate.detector import Detector, DetectorSpec
from bnplate.geometry import BBox, Detection, iou
from bnplate.grammar import format_plate, random_record
from bnplate.ocr import Recognizer, build_ocr_network
from bnplate.pipeline import (
    ImageResult, Pipeline, PipelineConfig, build_config, read_any_image, read_config_file, refine_plate_box,
)
from bnplate.segmenter import SegmentConfig, normalize_glyph
from bnplate.synth import SceneSpec, compose_scene, render_plate


class BoxDetector:
    """Returns fixed boxes regardless of the image."""

    def __init__(self, boxes):
        self.boxes = boxes

    def detect(self, img, conf_threshold=0.5):
        return [Detection(b, 0.9) for b in self.boxes]


class TemplateRecognizer:
    """Nearest atlas template; stands in for a trained classifier."""

    def __init__(self, atlas):
        self.class_names = list(atlas.class_names)
        temps = []
        for n in self.class_names:
            bm = atlas.bitmaps[n]
            ys, xs = np.nonzero(bm)
            ink = bm[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
            temps.append(normalize_glyph(np.where(ink > 0, 30, 225).astype(np.uint8), 225)[:, :, 0])
        self.temps = np.stack(temps).astype(np.float64)

    def recognize_batch(self, patches):
        out = []
        for p in patches:
            d = ((self.temps - p[:, :, 0]) ** 2).sum(axis=(1, 2))
            k = int(d.argmin())
            out.append((k, self.class_names[k], 1.0))
        return out


@pytest.fixture(scope="module")
def scene(atlas):
    record = random_record(np.random.default_rng(21))
    plate, _ = render_plate(record, atlas, seed=21)
    img, box = compose_scene(plate, SceneSpec(canvas=(400, 300), scale_range=(1, 1), background="gradient"), seed=2)
    return record, img, box


def test_pipeline_reads_plate_with_exact_box(atlas, scene):
    record, img, box = scene
    pipe = Pipeline(BoxDetector([box]), TemplateRecognizer(atlas))
    (res,) = pipe.process(img)
    assert res.error is None and res.record == record


def test_refinement_recovers_loose_box(atlas, scene):
    record, img, box = scene
    loose = BBox(box.x_min + 9, box.y_min - 6, box.x_max + 12, box.y_max - 4)
    assert iou(refine_plate_box(img, loose), box) > 0.95
    res = Pipeline(BoxDetector([loose]), TemplateRecognizer(atlas)).process(img)
    assert res[0].record == record


def test_no_detection_gives_empty_list(atlas):
    pipe = Pipeline(BoxDetector([]), TemplateRecognizer(atlas))
    assert pipe.process(np.full((64, 64), 128, np.uint8)) == []


def test_parse_failure_is_reported(atlas, scene):
    _, img, box = scene
    half = BBox(box.x_min, box.y_min, box.x_min + box.width / 2, box.y_max)
    cfg = PipelineConfig(refine_box=False)
    (res,) = Pipeline(BoxDetector([half]), TemplateRecognizer(atlas), cfg).process(img)
    assert res.record is None and res.error is not None
    doc = res.to_json()
    assert doc["error"]["row"] in ("upper", "lower") and doc["record"] is None


def test_result_rendering(atlas, scene):
    record, img, box = scene
    pipe = Pipeline(BoxDetector([box]), TemplateRecognizer(atlas))
    r = ImageResult("a.pgm", pipe.process(img))
    doc = json.loads(r.render("json-lines"))
    assert doc["v"] == 1 and doc["plates"][0]["record"] == format_plate(record)
    assert "\n" not in r.render("json-lines")
    assert r.render("text").split("\t")[:2] == ["a.pgm", "1"]
    assert format_plate(record) in r.render("text")
    assert ImageResult("b.png", error="unreadable").render("text") == "b.png\tERROR\tunreadable"


def test_config_file(tmp_path):
    (tmp_path / "c.conf").write_text("# comment\nconfidence = 0.4\nformat = json-lines\nmin_area_frac = 0.01\n"
                                     "refine_box = false\n")
    cfg = build_config(read_config_file(tmp_path / "c.conf"))
    assert cfg.conf_threshold == 0.4 and cfg.output_format == "json-lines" and not cfg.refine_box
    assert cfg.segmentation == SegmentConfig(min_area_frac=0.01)
    with pytest.raises(ValueError, match="unknown"):
        build_config({"colour": "red"})
    with pytest.raises(ValueError):
        build_config({"format": "xml"})
    (tmp_path / "bad.conf").write_text("just words\n")
    with pytest.raises(ValueError, match="bad.conf:1"):
        read_config_file(tmp_path / "bad.conf")


def test_from_config_validates_files(tmp_path, atlas):
    det = tmp_path / "d.bnpw"
    ocr = tmp_path / "o.bnpw"
    Detector(DetectorSpec()).save(det)
    Recognizer(build_ocr_network(3).weights(), ["KA", "KHA", "ZZ"]).save(ocr)
    with pytest.raises(ValueError, match="missing"):
        Pipeline.from_config(PipelineConfig(detector_weights=str(det)))
    with pytest.raises(FileNotFoundError):
        Pipeline.from_config(PipelineConfig(detector_weights=str(det), ocr_weights=str(tmp_path / "nope")))
    atlas_path = tmp_path / "atlas.txt"
    from bnplate.synth import save_atlas
    save_atlas(atlas_path, atlas)
    with pytest.raises(ValueError, match="ZZ"):
        Pipeline.from_config(PipelineConfig(detector_weights=str(det), ocr_weights=str(ocr), atlas=str(atlas_path)))


def test_read_any_image(tmp_path):
    from PIL import Image

    from bnplate import pnm
    arr = (np.arange(48).reshape(6, 8) * 5).astype(np.uint8)
    pnm.write_image(tmp_path / "a.pgm", arr)
    Image.fromarray(arr).save(tmp_path / "a.png")
    assert np.array_equal(read_any_image(tmp_path / "a.pgm"), arr)
    assert np.array_equal(read_any_image(tmp_path / "a.png"), arr)
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ValueError):
        read_any_image(tmp_path / "junk.png")
