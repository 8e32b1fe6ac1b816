"""Orchestration of a full chain-of-thought edit.

Each sub-prompt is reasoned, localized and inpainted against the
current canvas in order, so later steps see earlier results. Ablation
switches cover the no-CoT baseline (one mask straight from the raw
instruction) and raw-clause prompting (no re-prompt).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .backends.config import BackendSuite
from .core.maskops import mask_dilate, mask_union
from .core.pngio import read_image_png, read_mask_png, write_image_png, write_mask_png
from .core.types import (
    BinaryMask,
    CoTStep,
    EditInstruction,
    EditOpKind,
    EditTrace,
    RasterImage,
    StepResult,
    SubPrompt,
)
from .cotparse import (
    AREA_LABEL_PHRASE,
    PROMPT_TRAILER,
    STEP_HEADER_PHRASE,
    bind_masks,
    parse_cot,
    seg_dialogue,
)
from .decompose import ClauseLexicon, classify_clause, decompose_grammar, decompose_llm
from .errors import (
    ClassificationError,
    CotCanvasError,
    LocalizationEmptyError,
    PipelineStepError,
    ProtocolError,
    ReasoningParseError,
    SessionError,
    ShapeError,
)
from .templates import TemplateName, render_template

class DecomposerKind(Enum):
    GRAMMAR = "GRAMMAR"
    LLM = "LLM"


class SegmentationMode(Enum):
    PER_STEP = "PER_STEP"  # one dialogue per step, masks follow the canvas
    SINGLE_DIALOGUE = "SINGLE_DIALOGUE"  # one multi-[SEG] dialogue on the initial image


class ProposalStatus(Enum):
    PROPOSED = "PROPOSED"
    APPROVED = "APPROVED"
    REJECTED = "REJECTED"
    APPLIED = "APPLIED"


_LEGAL_TRANSITIONS = {
    (ProposalStatus.PROPOSED, ProposalStatus.APPROVED),
    (ProposalStatus.PROPOSED, ProposalStatus.REJECTED),
    (ProposalStatus.APPROVED, ProposalStatus.APPLIED),
}


@dataclass(frozen=True)
class PipelinePolicy:
    use_cot: bool = True
    use_reprompt: bool = True
    mask_dilation_px: int = 2
    max_steps: int = 8
    decomposer: DecomposerKind = DecomposerKind.GRAMMAR
    segmentation_mode: SegmentationMode = SegmentationMode.PER_STEP

    def __post_init__(self):
        if self.mask_dilation_px < 0:
            raise ValueError("mask_dilation_px must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class StepProposal:
    """One pipeline step awaiting human review."""

    sub_prompt: SubPrompt
    cot_step: CoTStep | None
    mask: BinaryMask
    status: ProposalStatus = ProposalStatus.PROPOSED

    def advance(self, new_status: ProposalStatus) -> None:
        if (self.status, new_status) not in _LEGAL_TRANSITIONS:
            raise SessionError(
                f"illegal proposal transition {self.status.value} -> {new_status.value}",
                conflict=True,
            )
        self.status = new_status


def reason_step(
    image: RasterImage,
    sub_prompt: SubPrompt,
    backends: BackendSuite,
    step_index: int = 1,
    user_feedback: str | None = None,
) -> CoTStep:
    """Ask the MLLM to locate and describe one step's region and re-prompt.

    Sends the localization and detail-description templates in one chat
    turn (the stateless chat interface carries no history, so the
    sub-prompt rides along). Review feedback, when given, is appended to
    the description substitution map.
    """
    description_subs = {"user feedback": user_feedback} if user_feedback else None
    prompt = (
        render_template(TemplateName.LOCALIZATION, {"simple prompts": sub_prompt.raw_clause})
        + "\n"
        + render_template(TemplateName.DESCRIPTION, description_subs)
    )
    reply = backends.mllm.chat(image, prompt)
    reasoning, area, inpaint = _extract_reason_reply(reply)
    return CoTStep(
        index=step_index,
        reasoning=reasoning,
        area_description=area,
        seg_index=step_index - 1,
        inpaint_prompt=inpaint,
    )


def _extract_reason_reply(reply: str) -> tuple[str, str | None, str]:
    head, sep, tail = reply.partition(PROMPT_TRAILER)
    if not sep:
        raise ReasoningParseError(f"reply is missing {PROMPT_TRAILER!r}: {reply[:120]!r}")
    inpaint = tail.strip().rstrip(".").strip()
    if not inpaint:
        raise ReasoningParseError("reply has an empty inpainting prompt")
    _, _, after_header = head.partition(f"{STEP_HEADER_PHRASE}:")
    body = after_header if after_header.strip() else head
    pre, label_sep, post = body.partition(f"{AREA_LABEL_PHRASE}:")
    if label_sep:
        reasoning = pre.strip().rstrip("-").strip()
        area = post.strip()
    else:
        reasoning = body.strip()
        area = None
    return reasoning, area, inpaint


def localize_step(
    image: RasterImage,
    cot_step: CoTStep | None,
    backends: BackendSuite,
    sub_prompt: SubPrompt | None = None,
) -> BinaryMask:
    """Resolve one step's region via the segmentation backend.

    The dialogue carries the step's area description when available,
    else the raw clause. A multi-marker reply localizes the union of its
    masks; an empty mask for REMOVE/CHANGE kinds is an error because
    those operations must target something that exists.
    """
    reference = None
    if cot_step is not None and cot_step.area_description:
        reference = cot_step.area_description
    elif sub_prompt is not None:
        reference = sub_prompt.raw_clause
    if not reference or not reference.strip():
        raise ValueError("localize_step needs an area description or sub-prompt text")

    reply, masks = backends.segmentation.segment(image, seg_dialogue(reference))
    pairs = bind_masks(parse_cot(reply), masks)
    mask = pairs[0][1]
    for _, extra in pairs[1:]:
        mask = mask_union(mask, extra)

    kind = sub_prompt.kind if sub_prompt is not None else None
    if kind in (
        EditOpKind.REMOVE,
        EditOpKind.CHANGE_OBJECT,
        EditOpKind.CHANGE_ATTRIBUTE,
        EditOpKind.CHANGE_BACKGROUND,
    ) and mask.is_empty():
        raise LocalizationEmptyError(
            f"empty mask for {kind.value} step targeting {reference!r}"
        )
    return mask


def apply_step(
    image: RasterImage,
    mask: BinaryMask,
    inpaint_prompt: str,
    policy: PipelinePolicy,
    backends: BackendSuite,
) -> RasterImage:
    """Dilate the mask per policy and run the inpainting backend."""
    if mask.size != image.size:
        raise ShapeError(f"mask {mask.size} does not match image {image.size}")
    dilated = mask_dilate(mask, policy.mask_dilation_px)
    out = backends.inpaint.inpaint(image, dilated, inpaint_prompt)
    if out.size != image.size:
        raise ProtocolError(f"inpaint backend returned {out.size} for input {image.size}")
    return out


def _fallback_subprompt(text: str, lexicon: ClauseLexicon) -> SubPrompt:
    try:
        return classify_clause(text, lexicon)
    except ClassificationError:
        return SubPrompt(
            kind=EditOpKind.CHANGE_OBJECT,
            target_ref=text,
            raw_clause=text,
            warning="whole instruction treated as one unclassified edit",
        )


def run_edit(
    image: RasterImage,
    instruction: EditInstruction | str,
    policy: PipelinePolicy,
    backends: BackendSuite,
    lexicon: ClauseLexicon | None = None,
) -> EditTrace:
    """Run the full edit and return its trace.

    A failing step aborts the run; the raised PipelineStepError carries
    the failing 1-based step index and the partial trace of everything
    applied before it.
    """
    if isinstance(instruction, str):
        instruction = EditInstruction(instruction)
    lexicon = lexicon or ClauseLexicon.default()

    if not policy.use_cot:
        sub = _fallback_subprompt(instruction.text, lexicon)
        return _run_steps(image, [sub], policy, backends, no_cot_prompt=instruction.text)

    if policy.decomposer is DecomposerKind.LLM:
        subs = decompose_llm(instruction, backends.mllm, image=image, lexicon=lexicon, max_subprompts=policy.max_steps)
    else:
        subs = decompose_grammar(instruction, lexicon, max_subprompts=policy.max_steps)
    return _run_steps(image, subs, policy, backends)


def _run_steps(
    image: RasterImage,
    subs: list[SubPrompt],
    policy: PipelinePolicy,
    backends: BackendSuite,
    no_cot_prompt: str | None = None,
) -> EditTrace:
    canvas = image
    results: list[StepResult] = []

    def partial() -> EditTrace:
        return EditTrace(
            initial=image,
            sub_prompts=tuple(subs),
            step_results=tuple(results),
            final=results[-1].image_after if results else image,
        )

    prebound: list[tuple[CoTStep, BinaryMask]] | None = None
    if no_cot_prompt is None and policy.segmentation_mode is SegmentationMode.SINGLE_DIALOGUE:
        try:
            prebound = _reason_and_localize_all(image, subs, backends)
        except CotCanvasError as exc:
            raise PipelineStepError(1, partial(), exc) from exc

    for k, sub in enumerate(subs, start=1):
        started = time.monotonic()
        try:
            if no_cot_prompt is not None:
                cot_step = None
                mask = localize_step(canvas, None, backends, sub_prompt=sub)
                prompt = no_cot_prompt
            elif prebound is not None:
                cot_step, mask = prebound[k - 1]
                prompt = cot_step.inpaint_prompt if policy.use_reprompt else sub.raw_clause
            else:
                cot_step = reason_step(canvas, sub, backends, step_index=k)
                mask = localize_step(canvas, cot_step, backends, sub_prompt=sub)
                prompt = cot_step.inpaint_prompt if policy.use_reprompt else sub.raw_clause
            canvas = apply_step(canvas, mask, prompt, policy, backends)
        except CotCanvasError as exc:
            raise PipelineStepError(k, partial(), exc) from exc
        results.append(
            StepResult(
                sub_prompt=sub,
                cot_step=cot_step,
                mask=mask,
                inpaint_prompt=prompt,
                image_after=canvas,
                duration_s=time.monotonic() - started,
            )
        )
    return partial()


def _reason_and_localize_all(
    image: RasterImage, subs: list[SubPrompt], backends: BackendSuite
) -> list[tuple[CoTStep, BinaryMask]]:
    """SINGLE_DIALOGUE mode: all steps reasoned and segmented on the initial image."""
    steps = [reason_step(image, sub, backends, step_index=k) for k, sub in enumerate(subs, start=1)]
    listing = " ".join(
        f"({k}) {s.area_description or sub.raw_clause}."
        for k, (s, sub) in enumerate(zip(steps, subs), start=1)
    )
    reply, masks = backends.segmentation.segment(image, seg_dialogue(listing))
    pairs = bind_masks(parse_cot(reply), masks)
    if len(pairs) != len(steps):
        raise ProtocolError(f"expected {len(steps)} masks, segmentation returned {len(pairs)}")
    return [(step, pair[1]) for step, pair in zip(steps, pairs)]


def applied_mask_union(trace: EditTrace) -> BinaryMask:
    """Union of every applied step mask (undilated)."""
    acc = BinaryMask.zeros(trace.initial.width, trace.initial.height)
    for r in trace.step_results:
        acc = mask_union(acc, r.mask)
    return acc


# -- trace directory serialization -------------------------------------------

TRACE_META = "trace.json"


def write_trace(trace: EditTrace, out_dir: str | Path, policy: PipelinePolicy | None = None) -> Path:
    """Persist a run: initial/stepNN_mask/stepNN_after/final PNGs plus metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image_png(trace.initial, out / "initial.png")
    meta: dict = {
        "schema_version": 1,
        "sub_prompts": [_subprompt_to_json(sp) for sp in trace.sub_prompts],
        "steps": [],
    }
    if policy is not None:
        meta["policy"] = policy_to_json(policy)
    for i, r in enumerate(trace.step_results, start=1):
        mask_name, after_name = f"step{i:02d}_mask.png", f"step{i:02d}_after.png"
        write_mask_png(r.mask, out / mask_name)
        write_image_png(r.image_after, out / after_name)
        meta["steps"].append(
            {
                "sub_prompt": _subprompt_to_json(r.sub_prompt),
                "cot_step": _cot_step_to_json(r.cot_step),
                "inpaint_prompt": r.inpaint_prompt,
                "mask": mask_name,
                "after": after_name,
                "duration_s": round(r.duration_s, 6),
                "mask_overridden": r.mask_overridden,
                "prompt_overridden": r.prompt_overridden,
            }
        )
    write_image_png(trace.final, out / "final.png")
    (out / TRACE_META).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return out


def read_trace(trace_dir: str | Path) -> EditTrace:
    root = Path(trace_dir)
    meta = json.loads((root / TRACE_META).read_text(encoding="utf-8"))
    initial = read_image_png(root / "initial.png")
    results = []
    for entry in meta["steps"]:
        results.append(
            StepResult(
                sub_prompt=_subprompt_from_json(entry["sub_prompt"]),
                cot_step=_cot_step_from_json(entry["cot_step"]),
                mask=read_mask_png(root / entry["mask"]),
                inpaint_prompt=entry["inpaint_prompt"],
                image_after=read_image_png(root / entry["after"]),
                duration_s=entry.get("duration_s", 0.0),
                mask_overridden=entry.get("mask_overridden", False),
                prompt_overridden=entry.get("prompt_overridden", False),
            )
        )
    return EditTrace(
        initial=initial,
        sub_prompts=tuple(_subprompt_from_json(sp) for sp in meta["sub_prompts"]),
        step_results=tuple(results),
        final=read_image_png(root / "final.png"),
    )


def policy_to_json(policy: PipelinePolicy) -> dict:
    return {
        "use_cot": policy.use_cot,
        "use_reprompt": policy.use_reprompt,
        "mask_dilation_px": policy.mask_dilation_px,
        "max_steps": policy.max_steps,
        "decomposer": policy.decomposer.value,
        "segmentation_mode": policy.segmentation_mode.value,
    }


def policy_from_json(data: dict) -> PipelinePolicy:
    policy = PipelinePolicy()
    return replace(
        policy,
        use_cot=data.get("use_cot", policy.use_cot),
        use_reprompt=data.get("use_reprompt", policy.use_reprompt),
        mask_dilation_px=data.get("mask_dilation_px", policy.mask_dilation_px),
        max_steps=data.get("max_steps", policy.max_steps),
        decomposer=DecomposerKind(data.get("decomposer", policy.decomposer.value)),
        segmentation_mode=SegmentationMode(data.get("segmentation_mode", policy.segmentation_mode.value)),
    )


def _subprompt_to_json(sp: SubPrompt) -> dict:
    return {
        "kind": sp.kind.value,
        "target_ref": sp.target_ref,
        "anchor_ref": sp.anchor_ref,
        "raw_clause": sp.raw_clause,
        "warning": sp.warning,
    }


def _subprompt_from_json(data: dict) -> SubPrompt:
    return SubPrompt(
        kind=EditOpKind(data["kind"]),
        target_ref=data["target_ref"],
        anchor_ref=data.get("anchor_ref"),
        raw_clause=data["raw_clause"],
        warning=data.get("warning"),
    )


def _cot_step_to_json(step: CoTStep | None) -> dict | None:
    if step is None:
        return None
    return {
        "index": step.index,
        "reasoning": step.reasoning,
        "area_description": step.area_description,
        "seg_index": step.seg_index,
        "inpaint_prompt": step.inpaint_prompt,
    }


def _cot_step_from_json(data: dict | None) -> CoTStep | None:
    if data is None:
        return None
    return CoTStep(
        index=data["index"],
        reasoning=data["reasoning"],
        area_description=data.get("area_description"),
        seg_index=data["seg_index"],
        inpaint_prompt=data["inpaint_prompt"],
    )
