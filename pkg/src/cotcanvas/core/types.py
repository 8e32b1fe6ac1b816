"""Domain value types shared by every module.

All types validate their invariants at construction and are immutable
afterwards (raster buffers are made read-only), so instances can be
shared freely between concurrent tasks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ShapeError

SEG_MARKER = "[SEG]"


def _frozen_array(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB raster, row-major, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected (h, w, 3) pixel buffer, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            raise ShapeError(f"expected uint8 pixels, got {arr.dtype}")
        object.__setattr__(self, "pixels", _frozen_array(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None  # mutable-buffer semantics: compare by value, never hash

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Single-channel boolean raster aligned to the image it annotates."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeError(f"expected (h, w) mask buffer, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError("mask must be at least 1x1")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ShapeError("mask elements must be exactly 0 or 1")
            arr = arr.astype(np.bool_)
        object.__setattr__(self, "bits", _frozen_array(arr))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not bool(self.bits.any())

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.bool_))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=np.bool_))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            np.array_equal(self.bits, other.bits)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area()})"


class EditOpKind(Enum):
    """Closed set of editing operations a sub-prompt may request."""

    ADD = "ADD"
    REMOVE = "REMOVE"
    CHANGE_OBJECT = "CHANGE_OBJECT"
    CHANGE_ATTRIBUTE = "CHANGE_ATTRIBUTE"
    CHANGE_BACKGROUND = "CHANGE_BACKGROUND"


@dataclass(frozen=True)
class SubPrompt:
    """One atomic editing operation extracted from a complex instruction.

    ``anchor_ref`` names the placement area and is only meaningful for
    ADD; ``warning`` is set when the kind was a fallback rather than a
    confident classification.
    """

    kind: EditOpKind
    target_ref: str
    raw_clause: str
    anchor_ref: str | None = None
    warning: str | None = None

    def __post_init__(self):
        if not isinstance(self.kind, EditOpKind):
            raise ValueError(f"kind must be an EditOpKind, got {self.kind!r}")
        if not self.target_ref.strip():
            raise ValueError("target_ref must be nonempty")
        if self.anchor_ref is not None and self.kind is not EditOpKind.ADD:
            raise ValueError("anchor_ref is only valid for ADD sub-prompts")


@dataclass(frozen=True)
class EditInstruction:
    """A user-supplied editing instruction, possibly compound."""

    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("instruction must be nonempty")


@dataclass(frozen=True)
class CoTStep:
    """One step of a chain-of-thought response.

    ``seg_index`` is the 0-based position of this step's segmentation
    marker within the response; ``inpaint_prompt`` describes the
    post-edit content of the masked region.
    """

    index: int
    reasoning: str
    seg_index: int
    inpaint_prompt: str
    area_description: str | None = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("step index is 1-based")
        if self.seg_index < 0:
            raise ValueError("seg_index is 0-based and nonnegative")
        if not self.inpaint_prompt.strip():
            raise ValueError("inpaint_prompt must be nonempty")
        if SEG_MARKER in self.inpaint_prompt:
            raise ValueError(f"inpaint_prompt must not contain the {SEG_MARKER} literal")


@dataclass(frozen=True)
class CoTResponse:
    """An ordered chain-of-thought response plus its wire text."""

    steps: tuple[CoTStep, ...]
    raw_text: str
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "warnings", tuple(self.warnings))
        seg_indices = [s.seg_index for s in steps]
        if seg_indices != list(range(len(steps))):
            raise ValueError(
                f"seg_index values must be 0..n-1 in step order, got {seg_indices}"
            )
        markers = self.raw_text.count(SEG_MARKER)
        if markers != len(steps):
            raise ValueError(
                f"raw_text has {markers} {SEG_MARKER} markers for {len(steps)} steps"
            )


@dataclass(frozen=True, eq=False)
class EditSample:
    """The five-tuple used for data preparation and SFT formatting."""

    source: RasterImage
    instruction: EditInstruction
    mask: BinaryMask
    target: RasterImage
    cot: CoTResponse
    sample_id: str

    def __post_init__(self):
        if not self.sample_id:
            raise ValueError("sample_id must be nonempty")
        dims = {self.source.size, self.target.size, self.mask.size}
        if len(dims) != 1:
            raise ShapeError(
                "source, target and mask must share dimensions: "
                f"source {self.source.size}, target {self.target.size}, mask {self.mask.size}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, EditSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.instruction == other.instruction
            and self.cot == other.cot
            and self.source == other.source
            and self.target == other.target
            and self.mask == other.mask
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StepResult:
    """Record of one applied pipeline step."""

    sub_prompt: SubPrompt
    mask: BinaryMask
    inpaint_prompt: str
    image_after: RasterImage
    cot_step: CoTStep | None = None
    duration_s: float = 0.0
    mask_overridden: bool = False
    prompt_overridden: bool = False

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepResult):
            return NotImplemented
        return (
            self.sub_prompt == other.sub_prompt
            and self.inpaint_prompt == other.inpaint_prompt
            and self.cot_step == other.cot_step
            and self.mask == other.mask
            and self.image_after == other.image_after
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EditTrace:
    """Ordered record of a full pipeline run."""

    initial: RasterImage
    sub_prompts: tuple[SubPrompt, ...]
    step_results: tuple[StepResult, ...]
    final: RasterImage

    def __post_init__(self):
        object.__setattr__(self, "sub_prompts", tuple(self.sub_prompts))
        object.__setattr__(self, "step_results", tuple(self.step_results))
        for r in self.step_results:
            if r.mask.size != self.initial.size:
                raise ShapeError(
                    f"step mask {r.mask.size} does not match initial image {self.initial.size}"
                )
        if self.step_results:
            if self.final != self.step_results[-1].image_after:
                raise ValueError("final image must equal the last step's image_after")
        elif self.final != self.initial:
            raise ValueError("zero-step trace must end on the initial image")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EditTrace):
            return NotImplemented
        return (
            self.sub_prompts == other.sub_prompts
            and self.step_results == other.step_results
            and self.initial == other.initial
            and self.final == other.final
        )

    __hash__ = None


def count_seg_markers(text: str) -> int:
    """Number of non-overlapping segmentation markers in ``text``."""
    return len(re.findall(re.escape(SEG_MARKER), text))
