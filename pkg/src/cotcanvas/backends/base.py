"""Backend interfaces: the boundary to every model service.

Implementations must tolerate concurrent calls from multiple sessions;
the mocks in this package are pure functions of their inputs, remote
adapters hold per-endpoint connection pools.
"""

from __future__ import annotations

from enum import Enum
from typing import Protocol, runtime_checkable

from ..core.types import BinaryMask, RasterImage, count_seg_markers
from ..errors import ProtocolError


class JudgeCriterion(Enum):
    ALIGNMENT = "ALIGNMENT"
    COHERENCE = "COHERENCE"


@runtime_checkable
class MllmBackend(Protocol):
    """Multimodal chat: free-form text reply to a prompt plus optional image."""

    def chat(self, image: RasterImage | None, prompt: str) -> str: ...


@runtime_checkable
class SegmentationBackend(Protocol):
    """Referring segmentation: reply text whose i-th [SEG] marker binds the i-th mask."""

    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]: ...


@runtime_checkable
class InpaintBackend(Protocol):
    """Mask-confined regeneration; output dimensions equal input dimensions."""

    def inpaint(self, image: RasterImage, mask: BinaryMask, prompt: str) -> RasterImage: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    """Image and text embeddings of one fixed dimensionality per instance."""

    def embed_image(self, image: RasterImage) -> list[float]: ...

    def embed_text(self, text: str) -> list[float]: ...


@runtime_checkable
class JudgeBackend(Protocol):
    """Scores an edit in [0, 100] for a given criterion."""

    def score(
        self,
        source: RasterImage,
        edited: RasterImage,
        instruction: str,
        criterion: JudgeCriterion,
    ) -> int: ...


class SegmentationContract:
    """Validation wrapper enforcing the marker/mask count contract.

    Wraps any SegmentationBackend; a reply whose [SEG] count differs from
    its mask count, or whose masks do not match the image dimensions, is
    a protocol error regardless of which implementation produced it.
    """

    def __init__(self, inner: SegmentationBackend):
        self.inner = inner

    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]:
        reply, masks = self.inner.segment(image, dialogue)
        markers = count_seg_markers(reply)
        if markers != len(masks):
            raise ProtocolError(
                f"segmentation reply has {markers} [SEG] markers but {len(masks)} masks"
            )
        for i, mask in enumerate(masks):
            if mask.size != image.size:
                raise ProtocolError(
                    f"segmentation mask {i} is {mask.size}, image is {image.size}"
                )
        return reply, masks
