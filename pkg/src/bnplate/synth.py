"""Synthetic data: glyph atlas, plate rendering, scene composition, datasets.

Everything is reproducible from a single integer seed; per-sample seeds are
derived as ``SeedSequence([seed, index])`` so samples can be generated in
any order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment as A
from . import pnm
from .geometry import BBox
from .grammar import LOWER, UPPER, Grammar, PlateRecord, format_plate, random_record
from .imaging import resize_float

ATLAS_HEADER = "GLYPHATLAS 1"
GLYPH_SIZE = 64


class AtlasError(ValueError):
    pass


@dataclass
class GlyphAtlas:
    bitmaps: dict[str, np.ndarray]

    def __post_init__(self):
        if len(self.bitmaps) < 2:
            raise AtlasError("atlas needs at least 2 classes")
        for name, bm in self.bitmaps.items():
            if bm.shape != (GLYPH_SIZE, GLYPH_SIZE):
                raise AtlasError(f"class {name!r}: bitmap shape {bm.shape}, expected 64x64")
            if not bm.any():
                raise AtlasError(f"class {name!r}: empty bitmap")

    @property
    def class_names(self) -> list[str]:
        return list(self.bitmaps)

    def index(self, name: str) -> int:
        return self.class_names.index(name)

    def ink(self, name: str) -> np.ndarray:
        """Bitmap cropped to its ink bounding box."""
        bm = self.bitmaps[name]
        ys, xs = np.nonzero(bm)
        return bm[ys.min():ys.max() + 1, xs.min():xs.max() + 1]

    def subset(self, names) -> "GlyphAtlas":
        return GlyphAtlas({n: self.bitmaps[n] for n in names})


def parse_atlas(text: str) -> GlyphAtlas:
    lines = text.splitlines()
    if not lines or lines[0].strip() != ATLAS_HEADER:
        raise AtlasError(f"line 1: expected header {ATLAS_HEADER!r}")
    bitmaps: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i].rstrip("\n")
        if not line.strip():
            i += 1
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] != "CLASS":
            raise AtlasError(f"line {i + 1}: expected 'CLASS <name>'")
        name = parts[1]
        if name in bitmaps:
            raise AtlasError(f"line {i + 1}: duplicate class {name!r}")
        rows = []
        for r in range(GLYPH_SIZE):
            ln = i + 2 + r
            if ln > len(lines):
                raise AtlasError(f"line {ln}: class {name!r} bitmap has only {r} rows")
            row = lines[ln - 1].rstrip()
            if len(row) != GLYPH_SIZE:
                raise AtlasError(f"line {ln}: class {name!r} row has {len(row)} columns, expected 64")
            if set(row) - {".", "#"}:
                raise AtlasError(f"line {ln}: class {name!r} row has characters other than '.' and '#'")
            rows.append([c == "#" for c in row])
        bitmaps[name] = np.array(rows, dtype=np.uint8)
        i += 1 + GLYPH_SIZE
    return GlyphAtlas(bitmaps)


def load_atlas(path: str | os.PathLike) -> GlyphAtlas:
    with open(path, encoding="utf-8") as f:
        return parse_atlas(f.read())


def save_atlas(path: str | os.PathLike, atlas: GlyphAtlas) -> None:
    out = [ATLAS_HEADER]
    for name, bm in atlas.bitmaps.items():
        out.append(f"CLASS {name}")
        out.extend("".join("#" if v else "." for v in row) for row in bm)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")


def default_atlas() -> GlyphAtlas:
    text = resources.files("bnplate").joinpath("data/default_atlas.txt").read_text("utf-8")
    return parse_atlas(text)


def area_resize(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-filtered resize of a float map; falls back to bilinear when enlarging."""
    h, w = arr.shape[:2]
    if (out_w, out_h) == (w, h):
        return arr.astype(np.float64)
    if out_w > w or out_h > h:
        return resize_float(arr, out_w, out_h)
    img = Image.fromarray(arr.astype(np.float32), mode="F")
    return np.asarray(img.resize((out_w, out_h), Image.Resampling.BOX), dtype=np.float64)


def _ink_box(alpha: np.ndarray, x0: int, y0: int) -> BBox:
    ys, xs = np.nonzero(alpha >= 0.5)
    if len(ys) == 0:
        ys, xs = np.nonzero(alpha > 0)
    return BBox(int(x0 + xs.min()), int(y0 + ys.min()), int(x0 + xs.max() + 1), int(y0 + ys.max() + 1))


# ---------------------------------------------------------------- plates

@dataclass(frozen=True)
class PlateStyle:
    plate_w: int = 240
    plate_h: int = 120
    margin: int = 12
    row_gap: int = 10
    glyph_gap: int = 5
    group_gap: int = 16
    fg: int = 30
    bg: int = 225
    jitter: int = 1


def _layout_row(atlas, names, row_h, avail_w, gaps, rng, jitter):
    """Scaled ink maps and x offsets for one row, centered in ``avail_w``."""
    scale = row_h / 56
    inks = [atlas.ink(n) for n in names]
    sizes = [(max(1, round(k.shape[1] * scale)), max(1, round(k.shape[0] * scale))) for k in inks]
    total = sum(w for w, _ in sizes) + sum(gaps)
    if total > avail_w:
        shrink = avail_w / total
        sizes = [(max(1, int(w * shrink)), max(1, int(h * shrink))) for w, h in sizes]
        gaps = [int(g * shrink) for g in gaps]
        total = sum(w for w, _ in sizes) + sum(gaps)
    x = (avail_w - total) // 2
    placed = []
    for i, (ink, (w, h)) in enumerate(zip(inks, sizes)):
        dx = int(rng.integers(-jitter, jitter + 1)) if jitter and i else 0
        dy = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
        x += dx
        placed.append((area_resize(ink.astype(np.float64), w, h), x, dy))
        x += w + (gaps[i] if i < len(gaps) else 0)
    return placed


def render_plate(record: PlateRecord, atlas: GlyphAtlas, style: PlateStyle = PlateStyle(), seed: int = 0):
    """Render a two-row plate.

    Returns ``(image, truth)`` where ``truth`` lists ``(class_name, BBox, row)``
    for each glyph in reading order.
    """
    rows = {UPPER: record.upper_tokens(), LOWER: record.lower_tokens()}
    for names in rows.values():
        for n in names:
            if n not in atlas.bitmaps:
                raise KeyError(f"token {n!r} missing from atlas")
    rng = np.random.default_rng(seed)
    w, h = style.plate_w, style.plate_h
    row_h = (h - 2 * style.margin - style.row_gap) // 2
    avail = w - 2 * style.margin
    alpha = np.zeros((h, w))
    truth = []
    for r, row in enumerate((UPPER, LOWER)):
        names = rows[row]
        gaps = [style.glyph_gap] * (len(names) - 1)
        if row == LOWER:
            gaps[1] = style.group_gap
        y_row = style.margin + r * (row_h + style.row_gap)
        for name, (ink, x, dy) in zip(names, _layout_row(atlas, names, row_h, avail, gaps, rng, style.jitter)):
            gh, gw = ink.shape
            x0 = style.margin + x
            y0 = y_row + (row_h - gh) // 2 + dy
            x0 = min(max(x0, 0), w - gw)
            y0 = min(max(y0, 0), h - gh)
            region = alpha[y0:y0 + gh, x0:x0 + gw]
            np.maximum(region, ink, out=region)
            truth.append((name, _ink_box(ink, x0, y0), row))
    img = style.bg + alpha * (style.fg - style.bg)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), truth


# ---------------------------------------------------------------- scenes

BACKGROUNDS = ("noise", "gradient", "checker")


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int] = (128, 128)
    scale_range: tuple[float, float] = (0.22, 0.32)
    jitter: float = 1.0  # fraction of the free space used for placement
    background: str = "mixed"
    augmentations: tuple = ()


def make_background(kind: str, width: int, height: int, rng) -> np.ndarray:
    if kind == "noise":
        lo = rng.uniform(0, 110)
        hi = lo + rng.uniform(30, 100)
        return rng.uniform(lo, hi, size=(height, width))
    if kind == "gradient":
        a, b = rng.uniform(0, 200, size=2)
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        t = (np.cos(theta) * xx / width + np.sin(theta) * yy / height)
        t = (t - t.min()) / max(np.ptp(t), 1e-9)
        return a + (b - a) * t
    if kind == "checker":
        cell = int(rng.integers(4, 17))
        a, b = rng.uniform(0, 200, size=2)
        yy, xx = np.mgrid[0:height, 0:width]
        return np.where(((xx // cell) + (yy // cell)) % 2 == 0, a, b)
    raise ValueError(f"unknown background {kind!r}")


def compose_scene(plate: np.ndarray, spec: SceneSpec = SceneSpec(), seed: int = 0):
    """Place ``plate`` on a generated background. Returns ``(image, plate_box)``."""
    rng = np.random.default_rng(seed)
    cw, ch = spec.canvas
    lo, hi = spec.scale_range
    s = lo if lo == hi else rng.uniform(lo, hi)
    ph0, pw0 = plate.shape[:2]
    pw, ph = max(1, round(pw0 * s)), max(1, round(ph0 * s))
    if pw > cw or ph > ch:
        raise ValueError(f"plate {pw}x{ph} does not fit the {cw}x{ch} canvas")
    u, v = rng.random(2)
    x0 = round((cw - pw) * (0.5 + spec.jitter * (u - 0.5)))
    y0 = round((ch - ph) * (0.5 + spec.jitter * (v - 0.5)))
    kind = spec.background
    if kind == "mixed":
        kind = BACKGROUNDS[int(rng.integers(len(BACKGROUNDS)))]
    scene = make_background(kind, cw, ch, rng)
    if plate.ndim == 3:
        scene = np.repeat(scene[:, :, None], plate.shape[2], axis=2)
    scene[y0:y0 + ph, x0:x0 + pw] = area_resize(plate.astype(np.float64), pw, ph)
    img = np.clip(np.rint(scene), 0, 255).astype(np.uint8)
    if spec.augmentations:
        img = A.augment_chain(img, list(spec.augmentations), int(rng.integers(2**63)))
    return img, BBox(x0, y0, x0 + pw, y0 + ph)


# ---------------------------------------------------------------- glyph samples

@dataclass(frozen=True)
class GlyphStyle:
    height_range: tuple[int, int] = (12, 48)
    aspect_jitter: float = 0.12
    fg_range: tuple[int, int] = (0, 90)
    bg_range: tuple[int, int] = (160, 255)
    box_jitter: int = 1
    augment_prob: float = 0.5


def random_augmentations(rng) -> list:
    """Mild random chain drawn from the five photometric augmentations."""
    ops = []
    if rng.random() < 0.5:
        ops.append(A.ContrastNormalization(rng.uniform(0.6, 1.4)))
    if rng.random() < 0.5:
        ops.append(A.GaussianBlur(rng.uniform(0.3, 1.2)))
    if rng.random() < 0.5:
        ops.append(A.AdditiveGaussianNoise(rng.uniform(2, 14)))
    if rng.random() < 0.3:
        ops.append(A.SaltPepper(rng.uniform(0.0, 0.02)))
    if rng.random() < 0.3:
        ops.append(A.CoarseDropout(rng.uniform(0.0, 0.03), int(rng.integers(3, 6))))
    rng.shuffle(ops)
    return ops


def render_glyph_sample(atlas: GlyphAtlas, name: str, style: GlyphStyle = GlyphStyle(), seed: int = 0):
    """One 64x64 grayscale training patch, shaped like a segmented glyph."""
    from .segmenter import normalize_glyph

    rng = np.random.default_rng(seed)
    ink = atlas.ink(name).astype(np.float64)
    gh = int(rng.integers(style.height_range[0], style.height_range[1] + 1))
    aspect = ink.shape[1] / ink.shape[0] * (1 + rng.uniform(-style.aspect_jitter, style.aspect_jitter))
    gw = max(1, round(gh * aspect))
    alpha = area_resize(ink, gw, gh)
    pad = style.box_jitter + 2
    canvas = np.zeros((gh + 2 * pad, gw + 2 * pad))
    canvas[pad:pad + gh, pad:pad + gw] = alpha
    fg = rng.uniform(*style.fg_range)
    bg = rng.uniform(*style.bg_range)
    img = np.clip(np.rint(bg + canvas * (fg - bg)), 0, 255).astype(np.uint8)
    box = _ink_box(canvas, 0, 0)
    j = style.box_jitter
    dx0, dy0, dx1, dy1 = rng.integers(-j, j + 1, size=4) if j else (0, 0, 0, 0)
    x0, y0 = int(box.x_min) + dx0, int(box.y_min) + dy0
    x1, y1 = int(box.x_max) + dx1, int(box.y_max) + dy1
    patch = normalize_glyph(img[y0:y1, x0:x1], background=int(round(bg)))
    if rng.random() < style.augment_prob:
        patch = A.augment_chain(patch, random_augmentations(rng), int(rng.integers(2**63)))
    return patch[:, :, 0] if patch.ndim == 3 else patch


# ---------------------------------------------------------------- datasets

@dataclass
class DatasetManifest:
    """Ordered ``(image, annotation)`` pairs, paths relative to ``root``."""

    root: Path
    entries: list[tuple[str, str]] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    records: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def image_path(self, i: int) -> Path:
        return self.root / self.entries[i][0]

    def annotation_path(self, i: int) -> Path:
        return self.root / self.entries[i][1]

    def load_image(self, i: int) -> np.ndarray:
        return pnm.read_image(self.image_path(i))

    def load_annotations(self, i: int):
        return read_annotations(self.annotation_path(i))

    def boxes(self, i: int, width: int, height: int) -> list[BBox]:
        return [annotation_box(a, width, height) for a in self.load_annotations(i)]


def write_annotations(path, objects) -> None:
    """``objects``: iterable of ``(class_id, BBox, width, height)``."""
    lines = []
    for cid, box, w, h in objects:
        cx, cy = box.center
        lines.append(f"{cid} {cx / w:.6f} {cy / h:.6f} {box.width / w:.6f} {box.height / h:.6f}")
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def read_annotations(path):
    """Annotation tuples; prediction files may carry a trailing score column."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) not in (5, 6):
            raise ValueError(f"{path}:{n}: expected 'class_id cx cy w h [score]'")
        try:
            out.append((int(parts[0]), *map(float, parts[1:])))
        except ValueError:
            raise ValueError(f"{path}:{n}: non-numeric annotation field") from None
    return out


def annotation_box(ann, width: int, height: int) -> BBox:
    cx, cy, w, h = ann[1:5]
    return BBox.from_center(cx * width, cy * height, w * width, h * height)


def write_manifest(manifest: DatasetManifest, name: str = "manifest.txt") -> Path:
    root = Path(manifest.root)
    path = root / name
    path.write_text("".join(f"{a}\t{b}\n" for a, b in manifest.entries), encoding="utf-8")
    if manifest.class_names:
        (root / "classes.txt").write_text(
            "".join(f"{i}\t{n}\n" for i, n in enumerate(manifest.class_names)), encoding="utf-8")
    if manifest.records:
        (root / "records.txt").write_text(
            "".join(f"{k}\t{v}\n" for k, v in manifest.records.items()), encoding="utf-8")
    return path


def read_class_map(path) -> list[str]:
    names = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        idx, _, name = line.partition("\t")
        if not idx.strip().isdigit() or int(idx) != len(names) or not name:
            raise ValueError(f"{path}:{n}: expected '{len(names)}<TAB>name'")
        names.append(name)
    return names


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{n}: expected 'image_path<TAB>annotation_path'")
        entries.append((parts[0], parts[1]))
    classes = read_class_map(root / "classes.txt") if (root / "classes.txt").exists() else []
    records = {}
    if (root / "records.txt").exists():
        for line in (root / "records.txt").read_text(encoding="utf-8").splitlines():
            if line.strip():
                k, _, v = line.partition("\t")
                records[k] = v
    return DatasetManifest(root, entries, classes, records)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


KINDS = ("glyphs", "plates", "scenes")


def generate_dataset(
    kind: str,
    count: int,
    out_dir: str | os.PathLike,
    seed: int = 0,
    atlas: GlyphAtlas | None = None,
    style: PlateStyle = PlateStyle(),
    scene: SceneSpec = SceneSpec(),
    glyph: GlyphStyle = GlyphStyle(),
    grammar: Grammar = Grammar(),
) -> DatasetManifest:
    """Write ``count`` samples plus ``manifest.txt`` under ``out_dir``.

    Glyph datasets cycle round-robin over the atlas classes; plate and scene
    datasets draw records uniformly and also write ``records.txt``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if count < 0:
        raise ValueError("count must be >= 0")
    atlas = atlas or default_atlas()
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    names = atlas.class_names
    manifest = DatasetManifest(root, class_names=names if kind != "scenes" else ["plate"])

    for i in range(count):
        s = sample_seed(seed, i)
        img_rel, ann_rel = f"images/{i:06d}.pgm", f"labels/{i:06d}.txt"
        if kind == "glyphs":
            name = names[i % len(names)]
            img = render_glyph_sample(atlas, name, glyph, s)
            h, w = img.shape
            objects = [(names.index(name), BBox(0, 0, w, h), w, h)]
        else:
            rng = np.random.default_rng(s)
            record = random_record(rng, grammar)
            plate, truth = render_plate(record, atlas, style, int(rng.integers(2**63)))
            manifest.records[img_rel] = format_plate(record)
            if kind == "plates":
                img = plate
                h, w = img.shape
                objects = [(names.index(n), box, w, h) for n, box, _ in truth]
            else:
                img, box = compose_scene(plate, scene, int(rng.integers(2**63)))
                h, w = img.shape[:2]
                objects = [(0, box, w, h)]
        pnm.write_image(root / img_rel, img)
        write_annotations(root / ann_rel, objects)
        manifest.entries.append((img_rel, ann_rel))
    write_manifest(manifest)
    return manifest
