"""Run the full pipeline on fresh scenes and break down the failures.

    python scripts/end_to_end.py --models runs/models --count 100
"""
import argparse
from collections import Counter

from bnplate.detector import Detector
from bnplate.grammar import format_plate
from bnplate.ocr import Recognizer
from bnplate.pipeline import Pipeline, PipelineConfig
from bnplate.synth import SceneSpec, generate_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--models", default="runs/models")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=909)
    ap.add_argument("--canvas", type=int, default=384)
    ap.add_argument("--conf", type=float, default=0.25)
    ap.add_argument("--no-refine", action="store_true")
    ap.add_argument("--data", default="runs/e2e_scenes")
    args = ap.parse_args()
    # plate scale relative to the canvas matches the 128px training scenes
    k = args.canvas / 128
    scene = SceneSpec(canvas=(args.canvas, args.canvas), scale_range=(0.22 * k, 0.32 * k))
    m = generate_dataset("scenes", args.count, args.data, seed=args.seed, scene=scene)
    cfg = PipelineConfig(conf_threshold=args.conf, refine_box=not args.no_refine)
    pipe = Pipeline(Detector.load(f"{args.models}/det.bnpw"), Recognizer.load(f"{args.models}/ocr.bnpw"), cfg)
    outcome = Counter()
    for i in range(len(m)):
        truth = m.records[m.entries[i][0]]
        plates = pipe.process(m.load_image(i))
        if not plates:
            outcome["no detection"] += 1
        elif plates[0].record is None:
            outcome["parse error"] += 1
        elif format_plate(plates[0].record) != truth:
            outcome["wrong record"] += 1
        else:
            outcome["exact"] += 1
    for key in ("exact", "wrong record", "parse error", "no detection"):
        print(f"{key}\t{outcome[key]}")


if __name__ == "__main__":
    main()
