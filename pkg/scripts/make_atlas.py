"""Rasterize the default glyph atlas from a Bengali-capable font.

    python scripts/make_atlas.py --font NotoSansBengali-Bold.woff \
        --out src/bnplate/data/default_atlas.txt

Every class becomes one 64x64 binary bitmap. Glyphs made of several
8-connected pieces are bridged with a bar along the headline so that each
class segments as a single component.
"""
import argparse

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from bnplate.synth import GlyphAtlas, save_atlas

CLASSES = [
    ("0", "০"), ("1", "১"), ("2", "২"), ("3", "৩"), ("4", "৪"),
    ("5", "৫"), ("6", "৬"), ("7", "৭"), ("8", "৮"), ("9", "৯"),
    ("KA", "ক"), ("KHA", "খ"), ("GHA", "ঘ"), ("CHA", "চ"),
    ("DHAKA", "ঢাকা"), ("CHATTA", "চট্ট"), ("METRO", "মেট্রো"),
]


def rasterize(font, text):
    img = Image.new("L", (400, 200), 0)
    ImageDraw.Draw(img).text((20, 20), text, font=font, fill=255)
    ink = np.asarray(img) > 127
    ys, xs = np.nonzero(ink)
    return ink[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def bridge(mask):
    """Join separate pieces with a bar on the topmost busy row of each gap."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n <= 1:
        return mask
    mask = mask.copy()
    rows = mask.sum(axis=1)
    bar = int(np.argmax(rows))  # the headline is the densest row
    cols = np.nonzero(mask.any(axis=0))[0]
    thick = max(2, mask.shape[0] // 16)
    mask[max(0, bar - thick // 2):bar + thick - thick // 2, cols.min():cols.max() + 1] = True
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n > 1:
        # drop leftover specks (dots, detached marks)
        sizes = ndimage.sum_labels(mask, labels, range(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    return mask


def fit(mask, max_w, max_h, keep_aspect):
    h, w = mask.shape
    if keep_aspect:
        s = min(max_w / w, max_h / h)
        nw, nh = max(1, round(w * s)), max(1, round(h * s))
    else:
        nw, nh = max_w, max_h
    img = Image.fromarray(mask.astype(np.uint8) * 255).resize((nw, nh), Image.Resampling.BOX)
    return np.asarray(img) > 127


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--font", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--size", type=int, default=150)
    args = ap.parse_args()
    font = ImageFont.truetype(args.font, args.size)

    bitmaps = {}
    for name, text in CLASSES:
        ink = rasterize(font, text)
        word = len(name) > 3
        glyph = fit(ink, 60, 44 if word else 56, keep_aspect=not word)
        glyph = bridge(glyph)
        canvas = np.zeros((64, 64), dtype=bool)
        gh, gw = glyph.shape
        y0, x0 = (64 - gh) // 2, (64 - gw) // 2
        canvas[y0:y0 + gh, x0:x0 + gw] = glyph
        bitmaps[name] = canvas.astype(np.uint8)
    save_atlas(args.out, GlyphAtlas(bitmaps))


if __name__ == "__main__":
    main()
