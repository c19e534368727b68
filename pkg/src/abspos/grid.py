"""Grid geometry: position labels, 3x3 regions, 9x9 cells, and pixel mappings."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import InputError

# Canonical row-major order (top to bottom, left to right). This ordering is
# the tie-break order everywhere a deterministic choice between labels is needed.
POSITION_LABELS = (
    "top left",
    "top center",
    "top right",
    "center left",
    "center",
    "center right",
    "bottom left",
    "bottom center",
    "bottom right",
)

LABEL_INDEX = {label: i for i, label in enumerate(POSITION_LABELS)}


@dataclass(frozen=True, order=True)
class Region:
    """One of the nine 3x3 image partitions, row-major."""

    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < 3 and 0 <= self.col < 3):
            raise InputError(f"region indices out of range: ({self.row}, {self.col})")

    @property
    def label(self) -> str:
        return POSITION_LABELS[self.row * 3 + self.col]

    @classmethod
    def from_label(cls, label: str) -> "Region":
        if label not in LABEL_INDEX:
            raise InputError(f"unknown position label: {label!r}")
        idx = LABEL_INDEX[label]
        return cls(idx // 3, idx % 3)


@dataclass(frozen=True, order=True)
class Cell:
    """One of the 81 9x9 placement slots, row-major."""

    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < 9 and 0 <= self.col < 9):
            raise InputError(f"cell indices out of range: ({self.row}, {self.col})")


class Color(enum.Enum):
    """Object palette. Channels are fully saturated (0 or 255 only)."""

    red = (255, 0, 0)
    green = (0, 255, 0)
    blue = (0, 0, 255)
    cyan = (0, 255, 255)
    magenta = (255, 0, 255)
    yellow = (255, 255, 0)
    white = (255, 255, 255)

    @property
    def rgb(self) -> tuple[int, int, int]:
        return self.value


class Shape(enum.Enum):
    circle = "circle"
    triangle = "triangle"
    square = "square"
    star = "star"
    plus = "plus"


@dataclass(frozen=True)
class Size:
    kind: str
    side_px: int


# Pixel sizes on the 672px canvas: the regular side fits well inside one
# ~74.7px cell band, and the small side is exactly half of it.
SIZE_REGULAR = Size("regular", 64)
SIZE_SMALL = Size("small", 32)
SIZES = (SIZE_REGULAR, SIZE_SMALL)
SIZE_BY_KIND = {s.kind: s for s in SIZES}

# Colored targets of the evaluation stimuli; white is reserved for training shapes.
EVAL_COLORS = (Color.red, Color.green, Color.blue, Color.cyan, Color.magenta, Color.yellow)
# Shapes of the evaluation stimuli; plus is held out as the unseen training shape.
EVAL_SHAPES = (Shape.circle, Shape.triangle, Shape.square, Shape.star)


@dataclass(frozen=True)
class ImageGeometry:
    width: int
    height: int
    grid_cells: int = 9
    grid_regions: int = 3

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"invalid image dimensions: {self.width}x{self.height}")


SYNTH_GEOMETRY = ImageGeometry(672, 672)


def cell_of_pixel(x: int, y: int, geom: ImageGeometry) -> Cell:
    """Map an integer pixel coordinate to its 9x9 cell.

    Floor-based banding; a coordinate exactly on an interior boundary belongs
    to the higher-index band, and the max index is clamped.
    """
    if not (0 <= x < geom.width and 0 <= y < geom.height):
        raise InputError(f"pixel ({x}, {y}) outside {geom.width}x{geom.height} image")
    n = geom.grid_cells
    col = min(n - 1, x * n // geom.width)
    row = min(n - 1, y * n // geom.height)
    return Cell(row, col)


def cell_of_point(x: float, y: float, geom: ImageGeometry) -> Cell:
    """Cell of a real-valued point (e.g. a bounding-box center)."""
    if not (0 <= x <= geom.width and 0 <= y <= geom.height):
        raise InputError(f"point ({x}, {y}) outside {geom.width}x{geom.height} image")
    n = geom.grid_cells
    col = min(n - 1, math.floor(x * n / geom.width))
    row = min(n - 1, math.floor(y * n / geom.height))
    return Cell(row, col)


def region_of_point(x: float, y: float, geom: ImageGeometry) -> Region:
    """Map a real-valued point to its 3x3 region."""
    if not (0 <= x <= geom.width and 0 <= y <= geom.height):
        raise InputError(f"point ({x}, {y}) outside {geom.width}x{geom.height} image")
    m = geom.grid_regions
    col = min(m - 1, math.floor(x * m / geom.width))
    row = min(m - 1, math.floor(y * m / geom.height))
    return Region(row, col)


def region_of_cell(c: Cell) -> Region:
    return Region(c.row // 3, c.col // 3)


def cell_center(c: Cell, geom: ImageGeometry) -> tuple[int, int]:
    """Pixel coordinates of a cell's center, rounded half-up."""
    n = geom.grid_cells
    x = math.floor((c.col + 0.5) * geom.width / n + 0.5)
    y = math.floor((c.row + 0.5) * geom.height / n + 0.5)
    return x, y
