"""``bnplate`` command line: synthesis, training, the recognition pipeline, evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth
from .geometry import Detection, average_precision
from .nn.training import TrainConfig, parse_split

log = logging.getLogger("bnplate")


class UsageError(Exception):
    pass


def _pair(text: str, cast=float):
    parts = text.replace("x", ",").replace(":", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    try:
        return cast(parts[0]), cast(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _split(text: str):
    try:
        return parse_split(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _atlas(path):
    return synth.load_atlas(path) if path else synth.default_atlas()


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    kind = {"synth-glyphs": "glyphs", "synth-plates": "plates", "synth-scenes": "scenes"}[args.command]
    scene = synth.SceneSpec()
    if kind == "scenes":
        scene = synth.SceneSpec(canvas=args.canvas, scale_range=args.scale,
                                jitter=args.jitter, background=args.background)
    m = synth.generate_dataset(kind, args.count, args.out, seed=args.seed, atlas=_atlas(args.atlas), scene=scene)
    print(f"wrote {len(m)} samples to {Path(args.out) / 'manifest.txt'}")
    return 0


# ---------------------------------------------------------------- training

def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       rng_seed=args.seed, split=args.split)


def _write_history(path, header, rows) -> None:
    lines = ["\t".join(header)] + ["\t".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train_detector(args) -> int:
    from .detector import Detector, DetectorSpec, train_detector

    manifest = synth.load_manifest(args.manifest)
    if len(manifest) == 0:
        raise RuntimeError("manifest is empty")
    spec = DetectorSpec(input_size=args.input_size, grid=args.grid, anchor=args.anchor)
    weights, history = train_detector(manifest, spec, _train_config(args))
    Detector(spec, weights).save(args.out)
    rows = [(str(h.epoch), f"{h.obj_bce:.6f}", f"{h.giou_term:.6f}", f"{h.val_map:.6f}", f"{h.val_loss:.6f}")
            for h in history]
    hist_path = args.history or f"{args.out}.history.tsv"
    _write_history(hist_path, ("epoch", "obj_bce", "giou_term", "val_map", "val_loss"), rows)
    best = max(history, key=lambda h: (h.val_map, -h.val_loss))
    print(f"best epoch {best.epoch} val_map {best.val_map:.4f}; weights {args.out}; history {hist_path}")
    return 0


def cmd_train_ocr(args) -> int:
    from .ocr import Recognizer, load_glyph_samples, train_ocr

    manifest = synth.load_manifest(args.manifest)
    if len(manifest) == 0:
        raise RuntimeError("manifest is empty")
    if not manifest.class_names:
        raise RuntimeError("glyph manifest has no classes.txt")
    patches, labels = load_glyph_samples(manifest)
    weights, history = train_ocr(patches, labels, manifest.class_names, _train_config(args), args.target_accuracy)
    Recognizer(weights, manifest.class_names).save(args.out)
    rows = [(str(h.epoch), f"{h.train_loss:.6f}", f"{h.val_accuracy:.6f}", f"{h.val_loss:.6f}") for h in history]
    hist_path = args.history or f"{args.out}.history.tsv"
    _write_history(hist_path, ("epoch", "train_loss", "val_accuracy", "val_loss"), rows)
    best = max(h.val_accuracy for h in history)
    a, b = (round(x * 100) for x in args.split)
    print("ratio\tval_accuracy")
    print(f"{a}:{b}\t{best * 100:.2f}")
    return 0


# ---------------------------------------------------------------- pipeline

def cmd_pipeline(args) -> int:
    from .pipeline import Pipeline, build_config, read_config_file

    values = read_config_file(args.config) if args.config else {}
    flags = {"detector_weights": args.detector, "ocr_weights": args.ocr, "atlas": args.atlas,
             "conf_threshold": args.conf, "crop_margin": args.crop_margin, "output_format": args.format}
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    config = build_config(values)
    pipe = Pipeline.from_config(config)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    processed = 0
    try:
        for path in args.images:
            try:
                result = pipe.process_path(path)
            except Exception as e:  # keep going; one bad image must not stop the batch
                from .pipeline import ImageResult
                result = ImageResult(str(path), error=f"{type(e).__name__}: {e}")
            if result.error is None:
                processed += 1
            else:
                print(f"{path}: {result.error}", file=sys.stderr)
            out.write(result.render(config.output_format) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0 if processed else 1


# ---------------------------------------------------------------- evaluation

def _manifest_boxes(manifest, with_scores: bool):
    """image path -> list of boxes (or detections), pixel coordinates."""
    from .pipeline import read_any_image

    out = {}
    for i, (img_rel, _) in enumerate(manifest.entries):
        h, w = read_any_image(manifest.image_path(i)).shape[:2]
        anns = manifest.load_annotations(i)
        boxes = [synth.annotation_box(a, w, h) for a in anns]
        if with_scores:
            out[img_rel] = [Detection(b, a[5] if len(a) > 5 else 1.0) for a, b in zip(anns, boxes)]
        else:
            out[img_rel] = boxes
    return out


def format_eval_report(report) -> str:
    rows = [("map", f"{report.map:.6f}"),
            ("true_positives", str(report.true_positives)),
            ("false_positives", str(report.false_positives)),
            ("false_negatives", str(report.false_negatives)),
            ("detection_rate", f"{report.detection_rate:.6f}")]
    return "metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in rows)


def cmd_eval_detect(args) -> int:
    truth_m = synth.load_manifest(args.truth)
    truths = _manifest_boxes(truth_m, with_scores=False)
    if args.weights:
        from .detector import Detector
        from .pipeline import read_any_image

        det = Detector.load(args.weights)
        preds = {rel: det.detect(read_any_image(truth_m.image_path(i)), args.conf)
                 for i, (rel, _) in enumerate(truth_m.entries)}
    elif args.pred:
        preds = _manifest_boxes(synth.load_manifest(args.pred), with_scores=True)
    else:
        raise UsageError("eval-detect needs --pred or --weights")
    if set(preds) != set(truths):
        raise RuntimeError("prediction and truth manifests list different images")
    keys = sorted(truths)
    report = average_precision([preds[k] for k in keys], [truths[k] for k in keys], args.iou)
    sys.stdout.write(format_eval_report(report))
    return 0


def format_confusion(cm, names) -> str:
    lines = ["true\\pred\t" + "\t".join(names)]
    lines += [names[i] + "\t" + "\t".join(str(v) for v in row) for i, row in enumerate(cm)]
    return "\n".join(lines) + "\n"


def cmd_eval_ocr(args) -> int:
    from .ocr import Recognizer, confusion_matrix, load_glyph_samples

    model = Recognizer.load(args.weights)
    manifest = synth.load_manifest(args.manifest)
    if manifest.class_names and manifest.class_names != model.class_names:
        raise RuntimeError("manifest classes differ from the model's class map")
    patches, labels = load_glyph_samples(manifest)
    cm = confusion_matrix(model, patches, labels)
    total = cm.sum()
    acc = np.trace(cm) / total if total else 0.0
    out = [f"accuracy\t{acc:.6f}\t{int(np.trace(cm))}/{int(total)}", "class\taccuracy\tcount"]
    for i, name in enumerate(model.class_names):
        n = cm[i].sum()
        out.append(f"{name}\t{(cm[i, i] / n if n else 0.0):.6f}\t{int(n)}")
    sys.stdout.write("\n".join(out) + "\n\n" + format_confusion(cm, model.class_names))
    if args.confusion:
        Path(args.confusion).write_text(format_confusion(cm, model.class_names), encoding="utf-8")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bnplate", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in (("synth-glyphs", "render augmented 64x64 glyph patches"),
                        ("synth-plates", "render two-row plates with glyph boxes"),
                        ("synth-scenes", "compose plates onto backgrounds")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--count", type=_nonneg_int, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--atlas", help="glyph atlas file (default: bundled atlas)")
        if name == "synth-scenes":
            p.add_argument("--canvas", type=lambda t: _pair(t, int), default=(128, 128), help="W,H")
            p.add_argument("--scale", type=_pair, default=(0.22, 0.32), help="plate scale range lo,hi")
            p.add_argument("--jitter", type=float, default=1.0)
            p.add_argument("--background", default="mixed", choices=("mixed",) + synth.BACKGROUNDS)
        p.set_defaults(func=cmd_synth)

    for name, func, lr in (("train-detector", cmd_train_detector, 0.01), ("train-ocr", cmd_train_ocr, 0.01)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="weights file; sidecars are written next to it")
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--lr", type=float, default=lr)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--split", type=_split, default=(0.8, 0.2), help="train:validation, e.g. 80:20")
        p.add_argument("--history", help="history TSV path (default: <out>.history.tsv)")
        if name == "train-detector":
            p.add_argument("--input-size", type=int, default=128)
            p.add_argument("--grid", type=int, default=8)
            p.add_argument("--anchor", type=_pair, default=(48.0, 16.0), help="W,H in input pixels")
        else:
            p.add_argument("--target-accuracy", type=float, help="stop once validation accuracy reaches this")
        p.set_defaults(func=func)

    p = sub.add_parser("pipeline", help="detect, segment, recognize and parse plates in images")
    p.add_argument("images", nargs="+")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--detector", help="detector weights (spec sidecar <weights>.spec)")
    p.add_argument("--ocr", help="recognizer weights (class map sidecar <weights>.classes)")
    p.add_argument("--atlas")
    p.add_argument("--conf", type=float)
    p.add_argument("--crop-margin", type=float)
    p.add_argument("--format", choices=("text", "json-lines"))
    p.add_argument("--output", help="write results here instead of stdout")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval-detect", help="mAP, TP/FP/FN and detection rate")
    p.add_argument("--truth", required=True, help="truth manifest")
    p.add_argument("--pred", help="prediction manifest (annotation lines may end with a score)")
    p.add_argument("--weights", help="run this detector on the truth images instead of --pred")
    p.add_argument("--conf", type=float, default=0.01)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval_detect)

    p = sub.add_parser("eval-ocr", help="accuracy and confusion matrix on a glyph manifest")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--confusion", help="also write the confusion matrix TSV here")
    p.set_defaults(func=cmd_eval_ocr)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "epochs", 1) < 1:
        parser.error("--epochs must be >= 1 (nothing to train)")
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (OSError, ValueError, RuntimeError) as e:
        print(f"bnplate {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
