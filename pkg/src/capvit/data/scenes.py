"""Procedural toy scenes: 1-3 colored shapes placed on a 3x3 grid.

A scene is a pure function of its seed; rendering is a pure function of
(objects, height, width), so any resolution can be produced for the same
scene. Rasterization is anti-aliased by 4x4 subpixel coverage sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..rng import SplitMix64

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow", "purple")

_COLOR_RGB = {
    "red": (1.0, 0.15, 0.15),
    "green": (0.15, 1.0, 0.15),
    "blue": (0.2, 0.35, 1.0),
    "yellow": (1.0, 1.0, 0.2),
    "purple": (0.75, 0.2, 0.9),
}

_SUBSAMPLES = 4  # per axis, 16 coverage samples per pixel


class SceneObject(NamedTuple):
    shape: str
    color: str
    cell: int  # 0..8, row-major on the 3x3 grid

    @property
    def row(self) -> int:
        return self.cell // 3

    @property
    def col(self) -> int:
        return self.cell % 3


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    seed: int

    def render(self, size: int) -> np.ndarray:
        return render(self.objects, size, size)


def generate_scene(seed: int) -> Scene:
    """Draw object count, cells, shapes, and colors from SplitMix64(seed).

    Draw order: count in 1..3, then distinct cells, then per object a
    shape and a color. Objects are stored sorted by cell index, which is
    also the template order used by captions.
    """
    rng = SplitMix64(seed)
    count = 1 + rng.randint(3)
    cells = rng.sample_without_replacement(9, count)
    objects = []
    for cell in cells:
        shape = SHAPES[rng.randint(len(SHAPES))]
        color = COLORS[rng.randint(len(COLORS))]
        objects.append(SceneObject(shape, color, cell))
    objects.sort(key=lambda o: o.cell)
    return Scene(objects=tuple(objects), seed=int(seed))


def _shape_mask(shape: str, x: np.ndarray, y: np.ndarray, r: float) -> np.ndarray:
    """Inside test for subpixel coords (x, y) relative to the cell center."""
    if shape == "circle":
        return x * x + y * y <= r * r
    if shape == "square":
        s = 0.82 * r
        return (np.abs(x) <= s) & (np.abs(y) <= s)
    if shape == "triangle":
        # apex up: vertices (0,-r), (0.9r, 0.65r), (-0.9r, 0.65r); y axis points down
        v = [(0.0, -r), (0.9 * r, 0.65 * r), (-0.9 * r, 0.65 * r)]
        inside = np.ones_like(x, dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, v[1:] + v[:1]):
            inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
        return inside
    if shape == "cross":
        w = 0.32 * r
        return ((np.abs(x) <= w) & (np.abs(y) <= r)) | ((np.abs(y) <= w) & (np.abs(x) <= r))
    raise ValueError(f"unknown shape {shape!r}")


def render(objects, height: int, width: int) -> np.ndarray:
    """Rasterize to [H, W, 3] float32 in [0, 1] on a black background."""
    ss = _SUBSAMPLES
    # subpixel sample centers in image coordinates
    ys = (np.arange(height * ss) + 0.5) / ss
    xs = (np.arange(width * ss) + 0.5) / ss
    yg, xg = np.meshgrid(ys, xs, indexing="ij")

    image = np.zeros((height, width, 3), dtype=np.float64)
    cell_h, cell_w = height / 3.0, width / 3.0
    radius = 0.38 * min(cell_h, cell_w)
    for obj in objects:
        cy = (obj.row + 0.5) * cell_h
        cx = (obj.col + 0.5) * cell_w
        mask = _shape_mask(obj.shape, xg - cx, yg - cy, radius)
        coverage = mask.reshape(height, ss, width, ss).mean(axis=(1, 3))
        rgb = np.asarray(_COLOR_RGB[obj.color])
        image += coverage[:, :, None] * rgb[None, None, :]
    return np.clip(image, 0.0, 1.0).astype(np.float32)
