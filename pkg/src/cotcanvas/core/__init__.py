"""Domain types, mask arithmetic and strict raster I/O."""

from .maskops import mask_dilate, mask_iou, mask_union, outside_mask_identical_ratio
from .pngio import (
    decode_image_png,
    decode_mask_png,
    encode_image_png,
    encode_mask_png,
    read_image_png,
    read_mask_png,
    write_image_png,
    write_mask_png,
)
from .types import (
    SEG_MARKER,
    BinaryMask,
    CoTResponse,
    CoTStep,
    EditInstruction,
    EditOpKind,
    EditSample,
    EditTrace,
    RasterImage,
    StepResult,
    SubPrompt,
    count_seg_markers,
)

__all__ = [
    "SEG_MARKER",
    "BinaryMask",
    "CoTResponse",
    "CoTStep",
    "EditInstruction",
    "EditOpKind",
    "EditSample",
    "EditTrace",
    "RasterImage",
    "StepResult",
    "SubPrompt",
    "count_seg_markers",
    "mask_dilate",
    "mask_iou",
    "mask_union",
    "outside_mask_identical_ratio",
    "decode_image_png",
    "decode_mask_png",
    "encode_image_png",
    "encode_mask_png",
    "read_image_png",
    "read_mask_png",
    "write_image_png",
    "write_mask_png",
]
