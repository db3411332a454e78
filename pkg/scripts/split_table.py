"""Train the recognizer at 70:30, 80:20 and 85:15 and print the accuracy table.

    python scripts/split_table.py --per-class 300 --epochs 30
"""
import argparse
import logging

from bnplate.nn.training import TrainConfig
from bnplate.ocr import format_split_table, load_glyph_samples, split_study
from bnplate.synth import generate_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--per-class", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target-accuracy", type=float, default=None,
                    help="stop each run early once validation reaches this")
    ap.add_argument("--data", default="runs/split_glyphs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    m = generate_dataset("glyphs", 17 * args.per_class, args.data, seed=args.seed)
    patches, labels = load_glyph_samples(m)
    rows = split_study(patches, labels, m.class_names, TrainConfig(epochs=args.epochs, rng_seed=args.seed),
                       target_accuracy=args.target_accuracy)
    print(format_split_table(rows), end="")


if __name__ == "__main__":
    main()
