"""Generate the desk-scale corpora and train both networks.

    python scripts/train_models.py --out runs/models

Writes det.bnpw / ocr.bnpw plus their sidecars and history TSVs. About 25
minutes on one CPU core with the defaults.
"""
import argparse
import logging
from pathlib import Path

from bnplate.detector import Detector, DetectorSpec, train_detector
from bnplate.nn.training import TrainConfig
from bnplate.ocr import Recognizer, load_glyph_samples, train_ocr
from bnplate.synth import generate_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/models")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--glyphs-per-class", type=int, default=300)
    ap.add_argument("--scenes", type=int, default=1000)
    ap.add_argument("--ocr-epochs", type=int, default=30)
    ap.add_argument("--det-epochs", type=int, default=20)
    ap.add_argument("--target-accuracy", type=float, default=0.98)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    glyphs = generate_dataset("glyphs", 17 * args.glyphs_per_class, out / "data" / "glyphs", seed=args.seed)
    patches, labels = load_glyph_samples(glyphs)
    weights, hist = train_ocr(patches, labels, glyphs.class_names,
                              TrainConfig(epochs=args.ocr_epochs, rng_seed=args.seed), args.target_accuracy)
    Recognizer(weights, glyphs.class_names).save(out / "ocr.bnpw")
    (out / "ocr.history.tsv").write_text("epoch\ttrain_loss\tval_accuracy\n" + "".join(
        f"{h.epoch}\t{h.train_loss:.6f}\t{h.val_accuracy:.6f}\n" for h in hist))

    scenes = generate_dataset("scenes", args.scenes, out / "data" / "scenes", seed=args.seed + 1)
    spec = DetectorSpec()
    weights, hist = train_detector(scenes, spec, TrainConfig(epochs=args.det_epochs, rng_seed=args.seed))
    Detector(spec, weights).save(out / "det.bnpw")
    (out / "det.history.tsv").write_text("epoch\tobj_bce\tgiou_term\tval_map\n" + "".join(
        f"{h.epoch}\t{h.obj_bce:.6f}\t{h.giou_term:.6f}\t{h.val_map:.6f}\n" for h in hist))
    print(f"models written to {out}")


if __name__ == "__main__":
    main()
