"""Boxes, token rectangles, and the pixel-to-patch projection.

Coordinate conventions used throughout the package:

* pixel boxes are (x1, y1, x2, y2) with x to the right, y down, and the
  max edge exclusive; annotations live in a source coordinate system of
  size W x H that may differ from the model's canonical pixel size
  W' x H';
* token rectangles index the patch grid, i = column, j = row, max
  exclusive;
* 2-d grid arrays are indexed [j, i] (row-major).

The box-to-token projection resizes the box into canonical pixels and
takes floor/ceil of the patch coordinates, so a box maps to exactly the
patches whose footprint its resized interior overlaps.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, max-exclusive edges."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}")
        if self.x1 < 0 or self.y1 < 0:
            raise ValueError(f"negative box corner {self.as_tuple()}")

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self):
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class TokenRect:
    """Rectangle of patch-grid cells; i = column, j = row, max exclusive."""

    i_min: int
    i_max: int
    j_min: int
    j_max: int

    def __post_init__(self):
        if not (0 <= self.i_min < self.i_max and 0 <= self.j_min < self.j_max):
            raise ValueError(f"empty token rect {self}")

    @property
    def n_cells(self):
        return (self.i_max - self.i_min) * (self.j_max - self.j_min)


@dataclass(frozen=True)
class GridGeometry:
    """Source image size, canonical model size, and patch size.

    image_w/image_h are the annotation coordinate system (the W x H a
    box lives in); model_w/model_h are the canonical pixel size the
    model consumes; patch divides both canonical dimensions.
    """

    image_w: int
    image_h: int
    model_w: int
    model_h: int
    patch: int

    def __post_init__(self):
        for name in ("image_w", "image_h", "model_w", "model_h", "patch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.model_w % self.patch or self.model_h % self.patch:
            raise ValueError("patch size must divide the canonical image size")

    @property
    def tokens_w(self):
        return self.model_w // self.patch

    @property
    def tokens_h(self):
        return self.model_h // self.patch

    @property
    def n_tokens(self):
        return self.tokens_w * self.tokens_h


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area of two boxes."""
    if a.area == 0 or b.area == 0:
        raise ValueError("zero-area box in iou")
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _float_at_least(value: Fraction) -> float:
    f = float(value)
    if Fraction(f) < value:
        f = math.nextafter(f, math.inf)
    return f


def _float_at_most(value: Fraction) -> float:
    f = float(value)
    if Fraction(f) > value:
        f = math.nextafter(f, -math.inf)
    return f


def box_to_tokens(box: BBox, geom: GridGeometry) -> TokenRect:
    """Project a source-coordinate box onto the patch grid.

    Column range is floor(x1 * W'/(W*P)) .. ceil(x2 * W'/(W*P)), rows
    likewise with H, H'; indices are clamped to the grid and the result
    is never empty.  The arithmetic is exact (rationals), so the patch
    set equals the patches overlapped by the resized box.
    """
    if box.x2 > geom.image_w or box.y2 > geom.image_h:
        raise ValueError(f"box {box.as_tuple()} outside {geom.image_w}x{geom.image_h}")
    sx = Fraction(geom.model_w, geom.image_w * geom.patch)
    sy = Fraction(geom.model_h, geom.image_h * geom.patch)
    i_min = math.floor(Fraction(box.x1) * sx)
    i_max = math.ceil(Fraction(box.x2) * sx)
    j_min = math.floor(Fraction(box.y1) * sy)
    j_max = math.ceil(Fraction(box.y2) * sy)
    i_min = max(0, min(i_min, geom.tokens_w - 1))
    j_min = max(0, min(j_min, geom.tokens_h - 1))
    i_max = max(i_min + 1, min(i_max, geom.tokens_w))
    j_max = max(j_min + 1, min(j_max, geom.tokens_h))
    return TokenRect(i_min, i_max, j_min, j_max)


def tokens_to_box(rect: TokenRect, geom: GridGeometry) -> BBox:
    """Source-coordinate box covering a token rectangle.

    Inverse of box_to_tokens up to patch quantization; the floats are
    rounded toward the rect interior so the round-trip is exact.
    """
    if rect.i_max > geom.tokens_w or rect.j_max > geom.tokens_h:
        raise ValueError(f"{rect} outside {geom.tokens_w}x{geom.tokens_h} grid")
    px = Fraction(geom.patch * geom.image_w, geom.model_w)
    py = Fraction(geom.patch * geom.image_h, geom.model_h)
    return BBox(
        _float_at_least(rect.i_min * px),
        _float_at_least(rect.j_min * py),
        _float_at_most(rect.i_max * px),
        _float_at_most(rect.j_max * py),
    )


def rect_cells(rect: TokenRect) -> list[tuple[int, int]]:
    """Cells of a token rect as (i, j) pairs in row-major order."""
    return [
        (i, j)
        for j in range(rect.j_min, rect.j_max)
        for i in range(rect.i_min, rect.i_max)
    ]


def rect_cell_index(rect: TokenRect, geom: GridGeometry) -> np.ndarray:
    """Flat row-major token indices of a rect's cells."""
    cols = np.arange(rect.i_min, rect.i_max)
    rows = np.arange(rect.j_min, rect.j_max)
    return (rows[:, None] * geom.tokens_w + cols[None, :]).ravel()


def rect_pixel_mask(rect: TokenRect, geom: GridGeometry) -> np.ndarray:
    """Boolean canonical-pixel mask of the patches in a token rect."""
    mask = np.zeros((geom.model_h, geom.model_w), dtype=bool)
    p = geom.patch
    mask[rect.j_min * p : rect.j_max * p, rect.i_min * p : rect.i_max * p] = True
    return mask


@dataclass(frozen=True)
class Component:
    """A 4-connected group of grid cells and its tight bounding rect."""

    rect: TokenRect
    cells: tuple[tuple[int, int], ...]


def connected_components(mask: np.ndarray) -> list[Component]:
    """4-connected components of a boolean [j, i] grid.

    Components are ordered by their first cell in row-major scan order;
    each component's cells are row-major as (i, j) pairs.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-d")
    labels, n = kernels.label_grid(np.ascontiguousarray(mask, dtype=np.uint8))
    out = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        rect = TokenRect(
            int(cols.min()), int(cols.max()) + 1, int(rows.min()), int(rows.max()) + 1
        )
        cells = tuple((int(i), int(j)) for j, i in zip(rows, cols))
        out.append(Component(rect=rect, cells=cells))
    return out
