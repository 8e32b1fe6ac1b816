"""Deterministic synthetic scenes with exact object registries.

A scene is a textured background plus up to eight colored shapes, one
per grid cell, each placed with enough headroom that the placement band
above it stays inside its own cell. The registry records the exact mask
of every object, which makes region localization exactly checkable:
the oracle backend answers from the registry, so IoU against it is 1.0
by construction and any drift is a real bug.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..core.maskops import mask_union
from ..core.types import BinaryMask, RasterImage
from ..errors import LocalizationError

PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (220, 50, 47),
    "green": (60, 160, 60),
    "blue": (50, 90, 200),
    "yellow": (230, 200, 40),
    "purple": (140, 70, 160),
    "orange": (235, 130, 30),
    "cyan": (60, 190, 200),
    "magenta": (200, 60, 170),
}

SHAPES = ("square", "circle", "triangle")

MAX_OBJECTS = 8
_GRID_COLS, _GRID_ROWS = 4, 2


@dataclass(frozen=True, eq=False)
class SceneObject:
    object_id: str
    color_name: str
    shape_name: str
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1; end-exclusive
    exact_mask: BinaryMask

    def __eq__(self, other):
        if not isinstance(other, SceneObject):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.color_name == other.color_name
            and self.shape_name == other.shape_name
            and self.bbox == other.bbox
            and self.exact_mask == other.exact_mask
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: RasterImage
    registry: tuple[SceneObject, ...]
    background_seed: int
    free_rects: tuple[tuple[int, int, int, int], ...]

    def find(self, color: str, shape: str) -> SceneObject | None:
        for obj in self.registry:
            if obj.color_name == color and obj.shape_name == shape:
                return obj
        return None

    def objects_mask(self) -> BinaryMask:
        acc = BinaryMask.zeros(self.image.width, self.image.height)
        for obj in self.registry:
            acc = mask_union(acc, obj.exact_mask)
        return acc

    def background_mask(self) -> BinaryMask:
        return BinaryMask(~self.objects_mask().bits)


def rasterize_shape(shape: str, bbox: tuple[int, int, int, int], width: int, height: int) -> BinaryMask:
    """Rasterize one registry shape into a full-size mask."""
    x0, y0, x1, y1 = bbox
    bits = np.zeros((height, width), dtype=bool)
    if shape == "square":
        bits[y0:y1, x0:x1] = True
    elif shape == "circle":
        s = min(x1 - x0, y1 - y0)
        cy, cx = y0 + (s - 1) / 2, x0 + (s - 1) / 2
        r = s / 2
        yy, xx = np.mgrid[y0:y1, x0:x1]
        bits[y0:y1, x0:x1] = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif shape == "triangle":
        rows = y1 - y0
        cxf = x0 + (x1 - x0 - 1) / 2
        max_half = (x1 - x0 - 1) / 2
        for i in range(rows):
            half = max_half if rows == 1 else (i / (rows - 1)) * max_half
            xa = int(np.ceil(cxf - half))
            xb = int(np.floor(cxf + half))
            bits[y0 + i, xa : xb + 1] = True
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return BinaryMask(bits)


def _background(width: int, height: int, tex_seed: int, base: int) -> np.ndarray:
    # subtle deterministic texture; stays far from the object palette
    xx, yy = np.meshgrid(np.arange(width), np.arange(height))
    wiggle = ((xx * 7 + yy * 13 + tex_seed) % 17).astype(np.int16) - 8
    v = np.clip(base + wiggle, 0, 255).astype(np.uint8)
    px = np.stack([v, np.clip(v + 4, 0, 255), np.clip(v.astype(np.int16) - 4, 0, 255).astype(np.uint8)], axis=2)
    return px.astype(np.uint8)


def generate_scene(
    seed: int,
    spec: list[tuple[str, str]] | None = None,
    width: int = 128,
    height: int = 96,
) -> SyntheticScene:
    """Deterministically render a scene for (seed, spec).

    ``spec`` lists (color, shape) pairs; duplicates are rejected because
    object references must stay unambiguous. Without a spec, 2-4 objects
    are drawn from the palette.
    """
    if width < 48 or height < 48:
        raise ValueError("scene must be at least 48x48")
    rng = np.random.default_rng(np.random.PCG64(seed))

    if spec is None:
        combos = [(c, s) for c in PALETTE for s in SHAPES]
        order = rng.permutation(len(combos))
        count = int(rng.integers(2, 5))
        spec = [combos[i] for i in order[:count]]
    else:
        spec = [(c, s) for c, s in spec]
        if len(spec) > MAX_OBJECTS:
            raise ValueError(f"at most {MAX_OBJECTS} objects per scene, got {len(spec)}")
        if len(set(spec)) != len(spec):
            raise ValueError("duplicate (color, shape) pairs make references ambiguous")
        for color, shape in spec:
            if color not in PALETTE:
                raise ValueError(f"unknown color {color!r}")
            if shape not in SHAPES:
                raise ValueError(f"unknown shape {shape!r}")

    tex_seed = int(rng.integers(0, 2**16))
    base = int(rng.integers(100, 140))
    pixels = _background(width, height, tex_seed, base)

    cell_w, cell_h = width // _GRID_COLS, height // _GRID_ROWS
    cells = [
        (col * cell_w, row * cell_h)
        for row in range(_GRID_ROWS)
        for col in range(_GRID_COLS)
    ]
    order = rng.permutation(len(cells))

    registry: list[SceneObject] = []
    used_cells = set()
    for i, (color, shape) in enumerate(spec):
        cx0, cy0 = cells[order[i]]
        used_cells.add(int(order[i]))
        # headroom above the object >= its own height, so the anchor band
        # for "on the <object>" never leaves this cell
        max_size = min(cell_w - 4, (cell_h - 3) // 2)
        size = int(rng.integers(max(8, max_size - 6), max_size + 1))
        x0 = cx0 + int(rng.integers(2, cell_w - size - 1))
        y0 = cy0 + size + 1 + int(rng.integers(0, cell_h - 2 * size - 1))
        bbox = (x0, y0, x0 + size, y0 + size)
        mask = rasterize_shape(shape, bbox, width, height)
        pixels[mask.bits] = PALETTE[color]
        registry.append(SceneObject(f"obj{i}", color, shape, bbox, mask))

    free = tuple(
        (cx0, cy0, cx0 + cell_w, cy0 + cell_h)
        for idx, (cx0, cy0) in enumerate(cells)
        if idx not in used_cells
    )
    return SyntheticScene(
        image=RasterImage(pixels),
        registry=tuple(registry),
        background_seed=tex_seed,
        free_rects=free,
    )


_REFERENCE_RE = re.compile(
    r"^(?P<on>on\s+)?the\s+(?:(?P<color>\w+)\s+(?P<shape>\w+)|(?P<bg>background))$",
    re.IGNORECASE,
)


def anchor_band(scene: SyntheticScene, obj: SceneObject) -> BinaryMask:
    """Placement region for "on the <object>": the band of the object's
    bounding-box height sitting on its top edge, clipped to the image and
    minus every foreground object mask."""
    x0, y0, x1, y1 = obj.bbox
    h = y1 - y0
    top = max(0, y0 - h)
    bits = np.zeros((scene.image.height, scene.image.width), dtype=bool)
    bits[top:y0, x0:x1] = True
    bits &= ~scene.objects_mask().bits
    return BinaryMask(bits)


def oracle_localize(scene: SyntheticScene, reference: str) -> BinaryMask:
    """Resolve a controlled-grammar reference against the scene registry.

    Accepts "the <color> <shape>", "on the <color> <shape>" and
    "the background" (with or without "on").
    """
    ref = reference.strip().rstrip(".!?").strip()
    m = _REFERENCE_RE.match(ref)
    if not m:
        raise LocalizationError(reference, "not a resolvable region reference")
    if m.group("bg"):
        return scene.background_mask()
    color, shape = m.group("color").lower(), m.group("shape").lower()
    obj = scene.find(color, shape)
    if obj is None:
        raise LocalizationError(reference, "no such object in the scene")
    if m.group("on"):
        band = anchor_band(scene, obj)
        if band.is_empty():
            raise LocalizationError(reference, "anchor band clipped away")
        return band
    return obj.exact_mask
