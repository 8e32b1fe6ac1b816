"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CotCanvasError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CotCanvasError, ValueError):
    """Raster dimensions do not line up."""


class DecodeError(CotCanvasError, ValueError):
    """Image or mask bytes could not be decoded strictly."""


class ClassificationError(CotCanvasError):
    """A clause could not be mapped to an editing operation."""

    def __init__(self, clause: str, detail: str = "no editing verb matched"):
        self.clause = clause
        super().__init__(f"cannot classify clause {clause!r}: {detail}")


class DecompositionParseError(CotCanvasError):
    """A backend reply did not contain a recognizable sub-prompt list."""


class CoTParseError(CotCanvasError):
    """Segmentation-in-CoT text violates the wire grammar."""


class BindingError(CotCanvasError):
    """Step count and mask count disagree."""


class LocalizationError(CotCanvasError):
    """A region reference could not be resolved to a mask."""

    def __init__(self, reference: str, detail: str = "unresolvable reference"):
        self.reference = reference
        super().__init__(f"cannot localize {reference!r}: {detail}")


class LocalizationEmptyError(CotCanvasError):
    """Localization produced an empty mask where one is required."""


class ReasoningParseError(CotCanvasError):
    """An MLLM reasoning reply is missing a required section."""


class TemplateError(CotCanvasError):
    """A prompt template substitution is missing."""


class GenerationError(CotCanvasError):
    """Data generation failed at a named phase."""

    def __init__(self, phase: str, detail: str):
        self.phase = phase
        super().__init__(f"generation failed at phase {phase}: {detail}")


class DatasetReadError(CotCanvasError):
    """A dataset file is corrupt or references missing images."""


class MetricError(CotCanvasError):
    """A metric could not be computed (e.g. zero-norm embedding)."""


class TransportError(CotCanvasError):
    """A remote call failed before a usable reply arrived; retryable."""


class BackendError(CotCanvasError):
    """A remote backend answered with a non-2xx status."""

    def __init__(self, status: int, body_excerpt: str):
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"backend returned {status}: {body_excerpt[:200]}")


class ProtocolError(CotCanvasError):
    """A reply violates the wire contract (malformed or inconsistent)."""


class TruncationError(CotCanvasError):
    """Decomposition produced more steps than the policy allows."""


class PipelineStepError(CotCanvasError):
    """A pipeline step failed; carries the partial trace up to the failure.

    ``trace`` holds everything applied before the failing step and
    ``step_index`` is the 1-based index of the step that failed.
    """

    def __init__(self, step_index: int, trace, cause: Exception):
        self.step_index = step_index
        self.trace = trace
        self.cause = cause
        super().__init__(f"step {step_index} failed: {cause}")


class SessionError(CotCanvasError):
    """An interactive session operation was invalid in the current state."""

    def __init__(self, message: str, conflict: bool = False):
        self.conflict = conflict
        super().__init__(message)
