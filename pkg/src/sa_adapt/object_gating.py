"""Per-category gating masks from box annotations, aligned to token layouts.

A pixel (x, y) belongs to category c's mask iff it lies inside ANY box of
that category, with inclusive bounds on both ends: x_min <= x <= x_max and
y_min <= y <= y_max. Coordinates are continuous; a pixel is identified
with the integer lattice point at its index, so a box (0, 0, 1, 1) covers
exactly the 2x2 top-left pixels.

Token alignment downsamples each image-resolution mask onto every pyramid
level by max pooling over floor-partition cells (a token cell is
attendable iff ANY covered pixel is set, so small objects survive), then
concatenates the levels in pyramid order, row-major within a level.

Mask polarity: True marks a token the category's query may attend; False
positions are ignored by the attention (key-padding semantics).

Annotation text format: one image per line,

    <image_id> <height> <width> [<class> <xmin> <ymin> <xmax> <ymax>]...

whitespace-separated, ``#`` starts a comment line. A converter from the
common interchange layout (``images``/``annotations`` records with
``bbox`` as [x, y, width, height]) is provided.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Box = tuple[float, float, float, float]  # (x_min, y_min, x_max, y_max)


@dataclass
class Annotation:
    """Boxes in pixel units with one integer category id per box."""

    boxes: list[Box]
    categories: list[int]

    def __post_init__(self):
        if len(self.boxes) != len(self.categories):
            raise ValueError(
                f"{len(self.boxes)} boxes but {len(self.categories)} category ids"
            )
        self.boxes = [tuple(float(v) for v in b) for b in self.boxes]
        self.categories = [int(c) for c in self.categories]
        for b in self.boxes:
            if len(b) != 4 or not all(np.isfinite(b)):
                raise ValueError(f"malformed box {b}")
            if b[0] > b[2] or b[1] > b[3]:
                raise ValueError(f"box has x_min > x_max or y_min > y_max: {b}")


@dataclass
class AnnotationRecord:
    image_id: str
    image_size: tuple[int, int]  # (H, W)
    annotation: Annotation


@dataclass
class GatingMaskSet:
    """Per-category pixel masks plus (once aligned) token-level masks."""

    per_category: np.ndarray  # (C, H, W) bool
    present: np.ndarray  # (C,) bool, True iff the category has boxes
    image_size: tuple[int, int]
    token_masks: np.ndarray | None = None  # (C, N) bool
    level_shapes: list[tuple[int, int]] | None = None

    @property
    def num_categories(self) -> int:
        return self.per_category.shape[0]


def build_masks(
    ann: Annotation, image_size: tuple[int, int], num_categories: int
) -> GatingMaskSet:
    """Rasterize per-category union-of-boxes masks at image resolution."""
    h, w = image_size
    if h < 1 or w < 1:
        raise ValueError(f"image size must be positive, got {image_size}")
    if num_categories < 1:
        raise ValueError("num_categories must be >= 1")
    masks = np.zeros((num_categories, h, w), dtype=bool)
    present = np.zeros(num_categories, dtype=bool)
    xs = np.arange(w, dtype=float)
    ys = np.arange(h, dtype=float)
    for (x_min, y_min, x_max, y_max), cat in zip(ann.boxes, ann.categories):
        if not 0 <= cat < num_categories:
            raise ValueError(f"category id {cat} out of range [0, {num_categories})")
        present[cat] = True
        col = (xs >= x_min) & (xs <= x_max)
        row = (ys >= y_min) & (ys <= y_max)
        masks[cat] |= row[:, None] & col[None, :]
    return GatingMaskSet(per_category=masks, present=present, image_size=(h, w))


def _floor_partition(full: int, cells: int) -> np.ndarray:
    """Start offsets of the floor partition of ``full`` positions into ``cells``."""
    if not 1 <= cells <= full:
        raise ValueError(f"cannot partition {full} positions into {cells} cells")
    return (np.arange(cells) * full) // cells


def align_to_tokens(
    mask_set: GatingMaskSet, level_shapes: list[tuple[int, int]]
) -> GatingMaskSet:
    """Fill the token-level masks for a multi-scale token sequence.

    Levels are concatenated in the given order; within a level tokens run
    row-major. Token count equals sum(H_l * W_l).
    """
    if not level_shapes:
        raise ValueError("level_shapes must be non-empty")
    h, w = mask_set.image_size
    per_level = []
    for h_l, w_l in level_shapes:
        rows = _floor_partition(h, h_l)
        cols = _floor_partition(w, w_l)
        pooled = np.maximum.reduceat(mask_set.per_category, rows, axis=1)
        pooled = np.maximum.reduceat(pooled, cols, axis=2)
        per_level.append(pooled.reshape(mask_set.num_categories, h_l * w_l))
    token_masks = np.concatenate(per_level, axis=1)
    return replace(
        mask_set, token_masks=token_masks, level_shapes=[tuple(s) for s in level_shapes]
    )


# ---------------------------------------------------------------------------
# annotation ingestion


def parse_annotations(text: str) -> list[AnnotationRecord]:
    """Parse the line-based annotation format documented in the module docstring."""
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3 or (len(fields) - 3) % 5 != 0:
            raise ValueError(f"line {lineno}: expected 'id H W [cls x0 y0 x1 y1]...'")
        image_id, h, w = fields[0], int(fields[1]), int(fields[2])
        boxes, cats = [], []
        for i in range(3, len(fields), 5):
            cats.append(int(fields[i]))
            boxes.append(tuple(float(v) for v in fields[i + 1 : i + 5]))
        records.append(
            AnnotationRecord(image_id, (h, w), Annotation(boxes=boxes, categories=cats))
        )
    return records


def format_annotations(records: list[AnnotationRecord]) -> str:
    """Inverse of :func:`parse_annotations` (floats use repr round-tripping)."""
    lines = []
    for rec in records:
        fields = [rec.image_id, str(rec.image_size[0]), str(rec.image_size[1])]
        for box, cat in zip(rec.annotation.boxes, rec.annotation.categories):
            fields.append(str(cat))
            fields.extend(repr(v) for v in box)
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def from_interchange(data: dict) -> list[AnnotationRecord]:
    """Convert category/bbox records keyed by image id to AnnotationRecords.

    Expects ``{"images": [{"id", "height", "width"}, ...],
    "annotations": [{"image_id", "category_id", "bbox": [x, y, w, h]}, ...]}``.
    Boxes are converted to corner form and clipped to the image bounds.
    """
    sizes = {img["id"]: (int(img["height"]), int(img["width"])) for img in data.get("images", [])}
    grouped: dict = {img_id: ([], []) for img_id in sizes}
    for entry in data.get("annotations", []):
        img_id = entry["image_id"]
        if img_id not in sizes:
            raise ValueError(f"annotation references unknown image id {img_id!r}")
        h, w = sizes[img_id]
        x, y, bw, bh = entry["bbox"]
        x0 = min(max(float(x), 0.0), w - 1.0)
        y0 = min(max(float(y), 0.0), h - 1.0)
        x1 = min(max(float(x) + float(bw), 0.0), w - 1.0)
        y1 = min(max(float(y) + float(bh), 0.0), h - 1.0)
        grouped[img_id][0].append((x0, y0, max(x1, x0), max(y1, y0)))
        grouped[img_id][1].append(int(entry["category_id"]))
    return [
        AnnotationRecord(str(img_id), sizes[img_id], Annotation(boxes=bx, categories=ct))
        for img_id, (bx, ct) in grouped.items()
    ]
