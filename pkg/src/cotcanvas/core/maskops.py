"""Exact raster arithmetic on masks and images.

These operations back both the pipeline (mask handoff, dilation bands)
and the fidelity metric, so they are bit-exact by construction: no
floating point enters until a final ratio is formed.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .types import BinaryMask, RasterImage


def _require_same_shape(a, b, what: str) -> None:
    if a.size != b.size:
        raise ShapeError(f"{what}: {a.size} vs {b.size}")


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Per-element logical OR of two co-dimensional masks."""
    _require_same_shape(a, b, "mask_union dimension mismatch")
    return BinaryMask(a.bits | b.bits)


def mask_dilate(m: BinaryMask, radius: int) -> BinaryMask:
    """Chebyshev dilation: set every pixel within ``radius`` of a set pixel.

    Radius 0 is the identity. Implemented as ``radius`` rounds of 3x3
    max-pooling via shifted slices, which equals a single pass with a
    (2r+1)^2 window.
    """
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or m.is_empty():
        return m
    bits = m.bits
    for _ in range(radius):
        padded = np.pad(bits, 1, mode="constant", constant_values=False)
        out = np.zeros_like(bits)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                out |= padded[dy : dy + bits.shape[0], dx : dx + bits.shape[1]]
        bits = out
    return BinaryMask(bits)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union in [0, 1]; two empty masks agree at 1.0."""
    _require_same_shape(a, b, "mask_iou dimension mismatch")
    union = int((a.bits | b.bits).sum())
    if union == 0:
        return 1.0
    inter = int((a.bits & b.bits).sum())
    return inter / union


def outside_mask_identical_ratio(
    before: RasterImage, after: RasterImage, protected_complement: BinaryMask
) -> float:
    """Fraction of pixels outside the edited region left bit-identical.

    ``protected_complement`` marks the region that was allowed to change
    (the mask union, possibly dilated); every other pixel is compared
    RGB-triple for RGB-triple. Returns 1.0 when no outside pixel exists.
    """
    _require_same_shape(before, after, "image dimension mismatch")
    _require_same_shape(before, protected_complement, "mask dimension mismatch")
    outside = ~protected_complement.bits
    total = int(outside.sum())
    if total == 0:
        return 1.0
    identical = (before.pixels == after.pixels).all(axis=2)
    return int((identical & outside).sum()) / total
