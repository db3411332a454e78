import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnplate import imaging as im
from bnplate.detector import (
    Detector, DetectorSpec, decode_predictions, detect_plates, detector_loss, encode_raw, encode_targets,
    giou_with_grad, load_spec, prepare_input, save_spec, spec_path_for, train_detector,
)
from bnplate.geometry import BBox, giou, iou
from bnplate.nn.gradcheck import check_network_gradient, numeric_gradient, relative_error
from bnplate.nn.training import TrainConfig
from bnplate.synth import SceneSpec, compose_scene, render_plate
from bnplate.grammar import random_record

SPEC = DetectorSpec()


def random_box(rng, size=128.0):
    w, h = rng.uniform(8, 90), rng.uniform(6, 50)
    cx, cy = rng.uniform(0, size), rng.uniform(0, size)
    return BBox.from_center(cx, cy, w, h)


def test_spec_validation_and_shapes():
    assert SPEC.stride == 16 and SPEC.pad == 15
    assert SPEC.network().shapes[-1] == (8, 8, 5)
    with pytest.raises(ValueError):
        DetectorSpec(input_size=96, grid=8)
    with pytest.raises(ValueError):
        DetectorSpec(anchor=(0, 16))


def test_spec_sidecar_roundtrip(tmp_path):
    spec = DetectorSpec(input_size=64, grid=4, anchor=(20.0, 7.5))
    save_spec(tmp_path / "s", spec)
    assert load_spec(tmp_path / "s") == spec
    (tmp_path / "bad").write_text("grid=8\n")
    with pytest.raises(ValueError):
        load_spec(tmp_path / "bad")


def test_encode_identity_point():
    box = BBox.from_center(3.5 * 16, 2.5 * 16, 48, 16)
    a = encode_targets([box], SPEC)
    assert a.objectness[2, 3] == 1 and a.objectness.sum() == 1
    assert np.allclose(a.offsets[2, 3], 0)


def test_encode_collision_keeps_larger():
    small = BBox.from_center(40, 40, 10, 10)
    big = BBox.from_center(42, 42, 30, 20)
    for order in ([small, big], [big, small]):
        a = encode_targets(order, SPEC)
        assert a.boxes == {(2, 2): big}


def test_encode_rejects_outside_center():
    with pytest.raises(ValueError):
        encode_targets([BBox(120, 120, 160, 140)], SPEC)


def test_decode_example():
    raw = np.zeros((8, 8, 5))
    raw[..., 4] = -100
    assert decode_predictions(raw, SPEC) == []
    raw[3, 2, 4] = 100  # x-cell 2, y-cell 3
    (d,) = decode_predictions(raw, SPEC)
    assert d.box.center == pytest.approx((40, 56)) and d.box.width == pytest.approx(48)
    assert d.box.height == pytest.approx(16) and d.score == pytest.approx(1.0)


def test_decode_encode_roundtrip_100(rng):
    for _ in range(100):
        box = random_box(rng)
        (d,) = decode_predictions(encode_raw([box], SPEC), SPEC, 0.0 + 1e-6, clamp=False)
        assert np.allclose(tuple(d.box), tuple(box), atol=1e-6)


@given(st.floats(0, 127.99), st.floats(0, 127.99), st.floats(2, 120), st.floats(2, 120))
def test_roundtrip_property(cx, cy, w, h):
    box = BBox.from_center(cx, cy, w, h)
    (d,) = decode_predictions(encode_raw([box], SPEC), SPEC, 0.5, clamp=False)
    assert np.allclose(tuple(d.box), tuple(box), atol=1e-6)


def test_nms_output_has_no_overlaps(rng):
    raw = rng.normal(size=(8, 8, 5))
    raw[..., 2:4] = rng.uniform(0, 1.5, size=(8, 8, 2))
    dets = decode_predictions(raw, SPEC, 0.0)
    for i, a in enumerate(dets):
        for b in dets[i + 1:]:
            assert iou(a.box, b.box) <= 0.45


def test_loss_examples():
    empty = encode_targets([], SPEC)
    total, ob, gt = detector_loss(np.zeros((8, 8, 5)), empty, SPEC)
    assert ob == pytest.approx(64 * math.log(2)) and gt == 0 and total == pytest.approx(ob)
    truth = [BBox(10, 20, 70, 44), BBox(80, 90, 120, 110)]
    a = encode_targets(truth, SPEC)
    total, ob, gt = detector_loss(encode_raw(truth, SPEC, confidence=30), a, SPEC)
    assert total < 1e-3 and gt < 1e-6
    # the giou term only looks at responsible cells
    raw = encode_raw(truth, SPEC)
    raw[..., 4] = np.random.default_rng(0).normal(size=(8, 8))
    assert detector_loss(raw, a, SPEC)[2] < 1e-6


def test_loss_nonnegative_and_zero_only_at_optimum(rng):
    for _ in range(50):
        truth = [random_box(rng, 120)]
        raw = rng.normal(size=(8, 8, 5))
        total, ob, gt = detector_loss(raw, encode_targets(truth, SPEC), SPEC)
        assert ob > 0 and gt >= 0 and total > 1e-3


def test_giou_gradient_matches_value():
    rng = np.random.default_rng(4)
    for _ in range(200):
        p = np.array(tuple(random_box(rng)))
        t = np.array(tuple(random_box(rng)))
        g, grad = giou_with_grad(p, t)
        assert g == pytest.approx(giou(BBox(*p), BBox(*t)), abs=1e-12)
        num = numeric_gradient(lambda: float(giou_with_grad(p, t)[0]), p, eps=1e-6)
        close = np.abs(np.subtract.outer(p, t)).min(axis=1) > 1e-3  # away from max/min kinks
        assert np.allclose(grad[close], num[close], atol=1e-6)


def test_loss_gradient_wrt_head_outputs(rng):
    for trial in range(10):
        truth = [random_box(rng, 120) for _ in range(2)]
        a = encode_targets(truth, SPEC)
        raw = encode_raw(truth, SPEC) + rng.normal(0, 0.5, size=(8, 8, 5))
        raw[..., 4] = rng.normal(size=(8, 8))
        _, _, _, grad = detector_loss(raw, a, SPEC, return_grad=True)
        num = numeric_gradient(lambda: detector_loss(raw, a, SPEC)[0], raw, eps=1e-3).reshape(raw.shape)
        assert relative_error(grad, num, floor=1e-6).max() < 1e-3


def test_full_network_gradient(rng):
    spec = DetectorSpec(input_size=32, grid=2, channels=(2, 2, 2, 2))
    net = spec.network(dtype=np.float64)
    net.init_weights(1)
    x = rng.uniform(-0.5, 0.5, size=(2,) + net.input_shape)
    truths = [[BBox(2, 4, 20, 12)], [BBox(10, 16, 30, 28)]]
    assigns = [encode_targets(t, spec) for t in truths]

    def loss_fn(out):
        parts = [detector_loss(o, a, spec, return_grad=True) for o, a in zip(out, assigns)]
        return sum(p[0] for p in parts) / len(parts), np.stack([p[3] for p in parts]) / len(parts)

    errs, _ = check_network_gradient(net, x, loss_fn, 40, seed=2)
    assert len(errs) == 40 and errs.max() < 1e-3


def test_prepare_input_geometry():
    x, sx, sy = prepare_input(np.zeros((256, 384), np.uint8), SPEC)
    assert x.shape == (158, 158, 1) and (sx, sy) == (3.0, 2.0)
    assert x[:15].max() == 0 and x[15, 15, 0] == -0.5


def test_zero_head_and_weight_mismatch():
    det = Detector()
    out = det.raw(np.zeros((1, 158, 158, 1), np.float32))
    assert np.allclose(out[..., 4], out[0, 0, 0, 4])
    small = Detector(DetectorSpec(input_size=64, grid=4))
    with pytest.raises((ValueError, KeyError)):
        Detector(SPEC, small.net.weights() | {"head.weight": np.zeros((1, 1, 3, 5))})


@pytest.fixture(scope="module")
def one_scene(atlas):
    plate, _ = render_plate(random_record(np.random.default_rng(1)), atlas, seed=1)
    return compose_scene(plate, SceneSpec(), seed=9)


@pytest.fixture(scope="module")
def overfit(one_scene):
    img, box = one_scene
    x, _, _ = prepare_input(img, SPEC)
    weights, hist = train_detector(None, SPEC, TrainConfig(epochs=200, batch_size=1, learning_rate=0.01,
                                                           split=(1.0, 0.0)),
                                   data=(x[None].astype(np.float32), [[box]]))
    return weights, hist


def test_overfit_single_image(one_scene, overfit):
    img, box = one_scene
    weights, hist = overfit
    assert len(hist) == 200
    assert hist[0].obj_bce == pytest.approx(64 * math.log(2), rel=1e-3)
    assert all(np.isfinite([h.obj_bce, h.giou_term]).all() for h in hist)
    best = max(range(len(hist)), key=lambda e: (hist[e].val_map, -hist[e].val_loss))
    assert hist[best].val_map == max(h.val_map for h in hist)
    x, _, _ = prepare_input(img, SPEC)
    best_loss = detector_loss(Detector(SPEC, weights).raw(x[None].astype(np.float32))[0],
                              encode_targets([box], SPEC), SPEC)[0]
    assert best_loss == pytest.approx(hist[best].val_loss, rel=1e-4)
    dets = detect_plates(img, weights, SPEC, 0.5)
    assert dets and iou(dets[0].box, box) >= 0.9


def test_scale_consistency(one_scene, overfit):
    img, _ = one_scene
    det = Detector(SPEC, overfit[0])
    a = det.detect(img, 0.3)[0].box
    big = np.kron(img, np.ones((2, 2), np.uint8))
    b = det.detect(big, 0.3)[0].box
    assert np.allclose(tuple(b), tuple(2 * v for v in a), atol=2)


def test_save_load(tmp_path, overfit, one_scene):
    det = Detector(SPEC, overfit[0])
    det.save(tmp_path / "d.bnpw")
    assert spec_path_for(tmp_path / "d.bnpw").exists()
    back = Detector.load(tmp_path / "d.bnpw")
    img = one_scene[0]
    assert det.detect(img, 0.1) == back.detect(img, 0.1)


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train_detector(None, SPEC, TrainConfig(epochs=1), data=(np.zeros((0, 158, 158, 1)), []))
