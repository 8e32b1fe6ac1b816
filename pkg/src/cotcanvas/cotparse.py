"""Codec for the segmentation-in-CoT assistant text format.

The wire grammar, normative for SFT data and live segmentation replies:

    (<i>) - Reasoning and locating the regions:
    <reasoning>
    - Area description:            (optional block)
    <area description>
    [SEG] The inpainting prompt is <prompt>.

Step headers are recognized by the literal phrase "Reasoning and
locating the regions" rather than the numeral, because live model
output also produces unnumbered variants; numerals are recovered when
present and normalized to 1..n otherwise. Reasoning and description
spans may contain arbitrary text short of the grammar's own literals,
and are whitespace-trimmed on parse.
"""

from __future__ import annotations

import re

from .core.types import SEG_MARKER, BinaryMask, CoTResponse, CoTStep, count_seg_markers
from .errors import BindingError, CoTParseError

STEP_HEADER_PHRASE = "Reasoning and locating the regions"
AREA_LABEL_PHRASE = "Area description"
PROMPT_TRAILER = "The inpainting prompt is"

# User-turn format shared by live segmentation dialogues and SFT data,
# so the fine-tuning corpus matches what inference actually sends.
SEG_DIALOGUE_FMT = (
    "<img> \n You are an expert in locating the area in the image when given a prompt. "
    "Here is the prompt: {prompt}. please locate the indicated area in the image and "
    "generate the corresponding inpainting prompt."
)


def seg_dialogue(reference: str) -> str:
    return SEG_DIALOGUE_FMT.format(prompt=reference.strip().rstrip("."))

_HEADER_RE = re.compile(
    r"(?:\(\s*(?P<num>\d+)\s*\)\s*)?-?\s*" + re.escape(STEP_HEADER_PHRASE) + r"\s*:"
)
_AREA_RE = re.compile(r"-\s*" + re.escape(AREA_LABEL_PHRASE) + r"\s*:")
_TRAILER_RE = re.compile(re.escape(PROMPT_TRAILER))
_PREAMBLE_ITEM_RE = re.compile(r"\(\s*\d+\s*\)")


def format_cot(steps: list[CoTStep] | tuple[CoTStep, ...], preamble: str | None = None) -> str:
    """Render steps into the wire format; deterministic byte output."""
    steps = list(steps)
    if not steps:
        raise ValueError("cannot format an empty step list")
    indices = [s.index for s in steps]
    if indices != list(range(1, len(steps) + 1)):
        raise ValueError(f"step indices must be contiguous 1..n, got {indices}")
    parts = []
    if preamble is not None:
        parts.append(preamble)
    for step in steps:
        block = f"({step.index}) - {STEP_HEADER_PHRASE}:\n{step.reasoning}"
        if step.area_description is not None:
            block += f"\n- {AREA_LABEL_PHRASE}:\n{step.area_description}"
        block += f" {SEG_MARKER} {PROMPT_TRAILER} {step.inpaint_prompt}."
        parts.append(block)
    return "\n".join(parts)


def parse_cot(text: str) -> CoTResponse:
    """Parse wire-format text back into structured steps.

    Everything before the first step header is treated as opaque
    preamble; a numbered-item count found there that disagrees with the
    parsed step count is surfaced as a warning, not an error, because
    downstream mask binding re-validates counts.
    """
    if count_seg_markers(text) == 0:
        raise CoTParseError("no segmentation steps: text contains no [SEG] marker")

    headers = list(_HEADER_RE.finditer(text))
    if not headers:
        raise CoTParseError(f"no step headers: expected the phrase {STEP_HEADER_PHRASE!r}")

    preamble = text[: headers[0].start()]
    if _TRAILER_RE.search(preamble):
        raise CoTParseError("inpainting-prompt trailer appears before any [SEG] marker")

    warnings: list[str] = []
    steps: list[CoTStep] = []
    recovered: list[int | None] = []
    for i, header in enumerate(headers):
        step_no = i + 1
        span_end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        span = text[header.end() : span_end]

        marker_pos = span.find(SEG_MARKER)
        pre = span if marker_pos < 0 else span[:marker_pos]
        if _TRAILER_RE.search(pre):
            raise CoTParseError(f"step {step_no}: inpainting-prompt trailer precedes its [SEG] marker")
        if marker_pos < 0:
            raise CoTParseError(f"step {step_no}: no [SEG] marker before the next step")

        area_match = _AREA_RE.search(pre)
        if area_match:
            reasoning = pre[: area_match.start()].strip()
            area = pre[area_match.end() :].strip()
        else:
            reasoning = pre.strip()
            area = None

        post = span[marker_pos + len(SEG_MARKER) :]
        trailer = _TRAILER_RE.search(post)
        if trailer is None:
            raise CoTParseError(f"step {step_no}: no inpainting-prompt trailer before the next step")
        prompt_raw = post[trailer.end() :].rstrip()
        if not prompt_raw.endswith("."):
            raise CoTParseError(f"step {step_no}: inpainting prompt is not terminated by a period")
        prompt = prompt_raw[:-1].strip()

        num = header.group("num")
        recovered.append(int(num) if num is not None else None)
        try:
            steps.append(
                CoTStep(
                    index=step_no,
                    reasoning=reasoning,
                    area_description=area,
                    seg_index=i,
                    inpaint_prompt=prompt,
                )
            )
        except ValueError as exc:
            raise CoTParseError(f"step {step_no}: {exc}") from exc

    if any(n is not None for n in recovered):
        as_given = [n if n is not None else i + 1 for i, n in enumerate(recovered)]
        if as_given != list(range(1, len(steps) + 1)):
            warnings.append(f"step numbering normalized: headers carried {as_given}")

    declared = len(_PREAMBLE_ITEM_RE.findall(preamble))
    if declared and declared != len(steps):
        warnings.append(f"preamble declares {declared} items but {len(steps)} steps parsed")

    try:
        return CoTResponse(steps=tuple(steps), raw_text=text, warnings=tuple(warnings))
    except ValueError as exc:
        raise CoTParseError(str(exc)) from exc


def extract_preamble(text: str) -> str | None:
    """Text before the first step header, or None when headers are absent."""
    m = _HEADER_RE.search(text)
    if m is None or m.start() == 0:
        return None
    preamble = text[: m.start()].rstrip()
    return preamble or None


def bind_masks(
    response: CoTResponse, masks: list[BinaryMask] | tuple[BinaryMask, ...]
) -> list[tuple[CoTStep, BinaryMask]]:
    """Zip steps to masks by seg_index; refuses to truncate on mismatch."""
    masks = list(masks)
    if len(masks) != len(response.steps):
        raise BindingError(f"cannot bind masks: {len(response.steps)} steps vs {len(masks)} masks")
    return [(step, masks[step.seg_index]) for step in response.steps]
