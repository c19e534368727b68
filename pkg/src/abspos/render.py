"""Deterministic software rasterizer for the synthetic stimuli.

Solid shapes on a black background, no anti-aliasing: a pixel is colored iff
its center lies inside the shape, so pixel counts are exact and renders are
byte-stable.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .errors import InputError
from .grid import Cell, Color, ImageGeometry, Shape, Size, SYNTH_GEOMETRY, cell_center

# Fixed star geometry: 5 points, one point up, inner/outer radius ratio 0.5.
STAR_POINTS = 5
STAR_INNER_RATIO = 0.5
# Plus bars span a third of the bounding square.
PLUS_BAR_FRACTION = 1.0 / 3.0

PNG_COMPRESS_LEVEL = 6


@dataclass(frozen=True)
class SceneObject:
    shape: Shape
    color: Color
    size: Size
    cell: Cell


@dataclass(frozen=True)
class StimulusSpec:
    """Full deterministic description of one synthetic scene."""

    target: SceneObject
    distractors: tuple[SceneObject, ...] = ()
    geom: ImageGeometry = SYNTH_GEOMETRY

    def objects(self) -> tuple[SceneObject, ...]:
        return (self.target, *self.distractors)


def _star_vertices() -> list[tuple[float, float]]:
    # 10-vertex outline in unit-square coordinates, apex at (0.5, 0).
    pts = []
    for k in range(2 * STAR_POINTS):
        r = 0.5 if k % 2 == 0 else 0.5 * STAR_INNER_RATIO
        th = math.radians(k * 180.0 / STAR_POINTS)
        pts.append((0.5 + r * math.sin(th), 0.5 - r * math.cos(th)))
    return pts


def _polygon_mask(pts: list[tuple[float, float]], fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    # Even-odd crossing test, vectorized over the pixel-center grids fx/fy.
    inside = np.zeros(fx.shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        crosses = (y1 > fy) != (y2 > fy)
        if not crosses.any():
            continue
        xc = x1 + (fy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (fx < xc)
    return inside


def shape_mask(kind: Shape, side: int) -> np.ndarray:
    """Boolean membership mask of a filled shape inside a side x side box.

    Membership is evaluated at pixel centers in unit-square coordinates:
      circle   - disk of radius 1/2
      square   - the whole box
      triangle - isoceles, apex up, inscribed in the box
      star     - 5-pointed outline filled by the even-odd rule
      plus     - union of a horizontal and a vertical centered bar of width 1/3
    """
    if side < 1:
        raise InputError(f"shape side must be positive, got {side}")
    f = (np.arange(side) + 0.5) / side
    fx, fy = np.meshgrid(f, f)
    if kind is Shape.square:
        return np.ones((side, side), dtype=bool)
    if kind is Shape.circle:
        return (fx - 0.5) ** 2 + (fy - 0.5) ** 2 <= 0.25
    if kind is Shape.triangle:
        return np.abs(fx - 0.5) <= fy / 2.0
    if kind is Shape.plus:
        half_bar = PLUS_BAR_FRACTION / 2.0
        return (np.abs(fx - 0.5) <= half_bar) | (np.abs(fy - 0.5) <= half_bar)
    if kind is Shape.star:
        return _polygon_mask(_star_vertices(), fx, fy)
    raise InputError(f"unknown shape: {kind}")


def rasterize_shape(
    kind: Shape,
    side: int,
    center: tuple[int, int],
    color: Color,
    target: np.ndarray,
) -> np.ndarray:
    """Draw a filled shape onto an RGB canvas; bounds are checked, not clipped."""
    x, y = center
    left = x - side // 2
    top = y - side // 2
    h, w = target.shape[:2]
    if left < 0 or top < 0 or left + side > w or top + side > h:
        raise InputError(
            f"shape box [{left}:{left + side}, {top}:{top + side}] exceeds {w}x{h} image"
        )
    mask = shape_mask(kind, side)
    target[top : top + side, left : left + side][mask] = color.rgb
    return target


def render_scene(spec: StimulusSpec) -> np.ndarray:
    """Render a stimulus to an (H, W, 3) uint8 array. Pure function of the spec."""
    cells = [obj.cell for obj in spec.objects()]
    if len(set(cells)) != len(cells):
        raise InputError("scene objects must occupy pairwise-distinct cells")
    img = np.zeros((spec.geom.height, spec.geom.width, 3), dtype=np.uint8)
    for obj in spec.objects():
        center = cell_center(obj.cell, spec.geom)
        rasterize_shape(obj.shape, obj.size.side_px, center, obj.color, img)
    return img


def png_bytes(img: np.ndarray) -> bytes:
    """Lossless PNG encoding with fixed settings (byte-stable)."""
    buf = io.BytesIO()
    PilImage.fromarray(img).save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    return buf.getvalue()


def decode_png(path) -> np.ndarray:
    with PilImage.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_bytes_atomic(data: bytes, path) -> None:
    """Write via a temp file in the same directory; never leaves partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError:
        if tmp.exists():
            tmp.unlink()
        raise


def encode_image(img: np.ndarray, path) -> None:
    """Encode to PNG and write atomically."""
    write_bytes_atomic(png_bytes(img), path)
