"""Orchestrator: per-step reasoning, localization, application, full runs."""

from __future__ import annotations

import numpy as np
import pytest

from cotcanvas.backends import (
    BackendSuite,
    ColorFillInpaint,
    ColorMatchSegmentation,
    CompositorInpaint,
    FixedJudge,
    MeanPoolEmbedding,
    MockMllm,
    OracleSegmentation,
    generate_scene,
    mock_suite,
    oracle_localize,
)
from cotcanvas.core import (
    BinaryMask,
    EditInstruction,
    EditOpKind,
    RasterImage,
    SubPrompt,
    mask_dilate,
    mask_iou,
    outside_mask_identical_ratio,
)
from cotcanvas.errors import (
    LocalizationEmptyError,
    PipelineStepError,
    ProtocolError,
    ReasoningParseError,
    SessionError,
    TruncationError,
)
from cotcanvas.pipeline import (
    PipelinePolicy,
    ProposalStatus,
    SegmentationMode,
    StepProposal,
    applied_mask_union,
    apply_step,
    localize_step,
    read_trace,
    reason_step,
    run_edit,
    write_trace,
)

POLICY0 = PipelinePolicy(mask_dilation_px=0)


@pytest.fixture
def scene():
    return generate_scene(17, [("red", "square"), ("blue", "circle")])


@pytest.fixture
def suite(scene):
    return mock_suite(scene)


class RecordingSegmentation:
    def __init__(self, inner):
        self.inner = inner
        self.images = []

    def segment(self, image, dialogue):
        self.images.append(image)
        return self.inner.segment(image, dialogue)


class TestReasonStep:
    def test_remove_reprompt_names_background_fill(self, scene, suite):
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        step = reason_step(scene.image, sp, suite)
        assert "background" in step.inpaint_prompt
        assert "square" not in step.inpaint_prompt
        assert step.area_description is not None

    def test_add_area_references_anchor(self, scene, suite):
        sp = SubPrompt(EditOpKind.ADD, "a black hat", "add a black hat on the blue circle", anchor_ref="the blue circle")
        step = reason_step(scene.image, sp, suite)
        assert "the blue circle" in step.area_description

    def test_missing_trailer_is_reasoning_parse_error(self, scene, suite):
        class NoTrailer:
            def chat(self, image, prompt):
                return "- Reasoning and locating the regions:\nhm, tricky."

        broken = BackendSuite(
            mllm=NoTrailer(),
            segmentation=OracleSegmentation(scene),
            inpaint=CompositorInpaint(),
            embedding=MeanPoolEmbedding(),
            judge=FixedJudge(57),
        )
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        with pytest.raises(ReasoningParseError):
            reason_step(scene.image, sp, broken)

    def test_feedback_changes_prompt_sent(self, scene):
        seen = []

        class Spy(MockMllm):
            def chat(self, image, prompt):
                seen.append(prompt)
                return super().chat(image, prompt)

        suite = mock_suite(scene)
        suite.mllm = Spy(scene=scene)
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        reason_step(scene.image, sp, suite, user_feedback="mask was too small")
        assert "user feedback: mask was too small" in seen[-1]


class TestLocalizeStep:
    def test_oracle_exact_mask(self, scene, suite):
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        step = reason_step(scene.image, sp, suite)
        mask = localize_step(scene.image, step, suite, sub_prompt=sp)
        assert mask_iou(mask, scene.registry[0].exact_mask) == 1.0

    def test_absent_object_is_localization_error(self, scene, suite):
        from cotcanvas.errors import LocalizationError

        sp = SubPrompt(EditOpKind.REMOVE, "the green triangle", "remove the green triangle")
        step = reason_step(scene.image, sp, suite)
        with pytest.raises(LocalizationError):
            localize_step(scene.image, step, suite, sub_prompt=sp)

    def test_add_mask_disjoint_from_objects(self, scene, suite):
        sp = SubPrompt(EditOpKind.ADD, "a dog", "add a dog on the blue circle", anchor_ref="the blue circle")
        step = reason_step(scene.image, sp, suite)
        mask = localize_step(scene.image, step, suite, sub_prompt=sp)
        assert not mask.is_empty()
        assert not (mask.bits & scene.objects_mask().bits).any()

    def test_empty_mask_for_remove_is_error(self, scene):
        class EmptyMaskSeg:
            def segment(self, image, dialogue):
                reply = "(1) - Reasoning and locating the regions:\nnothing. [SEG] The inpainting prompt is x."
                return reply, [BinaryMask.zeros(image.width, image.height)]

        suite = mock_suite(scene)
        suite.segmentation = EmptyMaskSeg()
        suite.__post_init__()
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        step = reason_step(scene.image, sp, suite)
        with pytest.raises(LocalizationEmptyError):
            localize_step(scene.image, step, suite, sub_prompt=sp)


class TestApplyStep:
    def test_compositor_confined_to_dilated_mask(self, scene, suite):
        mask = scene.registry[0].exact_mask
        policy = PipelinePolicy(mask_dilation_px=2)
        out = apply_step(scene.image, mask, "fresh paint", policy, suite)
        assert outside_mask_identical_ratio(scene.image, out, mask_dilate(mask, 2)) == 1.0

    def test_dilation_grows_edited_region(self, scene, suite):
        mask = scene.registry[0].exact_mask
        areas = []
        for d in (0, 2):
            out = apply_step(scene.image, mask, "fill", PipelinePolicy(mask_dilation_px=d), suite)
            changed = (out.pixels != scene.image.pixels).any(axis=2)
            areas.append(int(changed.sum()))
        assert areas[0] <= areas[1]

    def test_wrong_size_reply_is_protocol_error(self, scene, suite):
        class Shrinker:
            def inpaint(self, image, mask, prompt):
                return RasterImage(image.pixels[:-2].copy())

        suite.inpaint = Shrinker()
        with pytest.raises(ProtocolError):
            apply_step(scene.image, scene.registry[0].exact_mask, "x", POLICY0, suite)


class TestRunEdit:
    INSTR = "remove the red square and change the blue circle to green"

    def test_two_step_fidelity(self, scene, suite):
        trace = run_edit(scene.image, self.INSTR, POLICY0, suite)
        assert len(trace.step_results) == 2
        union = applied_mask_union(trace)
        assert outside_mask_identical_ratio(trace.initial, trace.final, union) == 1.0
        # and the edited regions are exactly the two registry masks
        expect = scene.registry[0].exact_mask.bits | scene.registry[1].exact_mask.bits
        assert np.array_equal(union.bits, expect)

    def test_no_cot_is_single_step(self, scene, suite):
        policy = PipelinePolicy(use_cot=False, mask_dilation_px=0)
        trace = run_edit(scene.image, self.INSTR, policy, suite)
        assert len(trace.step_results) == 1
        assert trace.step_results[0].inpaint_prompt == self.INSTR
        assert trace.step_results[0].cot_step is None

    def test_reprompt_ablation_changes_fill(self, scene, suite):
        on = run_edit(scene.image, "remove the red square", POLICY0, suite)
        off = run_edit(
            scene.image, "remove the red square", PipelinePolicy(use_reprompt=False, mask_dilation_px=0), suite
        )
        ys, xs = np.nonzero(on.step_results[0].mask.bits)
        px_on = tuple(on.final.pixels[ys[0], xs[0]])
        px_off = tuple(off.final.pixels[ys[0], xs[0]])
        assert px_on != px_off
        assert off.step_results[0].inpaint_prompt == "remove the red square"

    def test_step_cap_aborts(self, scene, suite):
        instr = " and ".join(["remove the red square"] * 9)
        with pytest.raises(TruncationError):
            run_edit(scene.image, instr, POLICY0, suite)

    def test_mid_run_failure_carries_partial_trace(self, scene, suite):
        instr = "remove the red square and remove the green triangle"
        with pytest.raises(PipelineStepError) as err:
            run_edit(scene.image, instr, POLICY0, suite)
        assert err.value.step_index == 2
        partial = err.value.trace
        assert len(partial.step_results) == 1
        assert partial.final == partial.step_results[0].image_after

    def test_deterministic_with_mocks(self, scene, suite):
        a = run_edit(scene.image, self.INSTR, POLICY0, suite)
        b = run_edit(scene.image, self.INSTR, POLICY0, mock_suite(scene))
        assert a == b

    def test_sequential_visibility(self):
        # step 1 paints a red region; step 2 can only find red on the
        # post-step-1 canvas, so success proves masks follow the canvas
        scene = generate_scene(23, [("blue", "circle")])
        recorder = RecordingSegmentation(ColorMatchSegmentation())
        suite = BackendSuite(
            mllm=MockMllm(scene=scene),
            segmentation=recorder,
            inpaint=ColorFillInpaint(),
            embedding=MeanPoolEmbedding(),
            judge=FixedJudge(57),
        )
        instr = "add a red square on the blue circle and remove the red square"
        trace = run_edit(scene.image, instr, POLICY0, suite)
        assert len(trace.step_results) == 2
        assert recorder.images[0] == scene.image
        assert recorder.images[1] == trace.step_results[0].image_after
        assert not trace.step_results[1].mask.is_empty()

    def test_single_dialogue_mode(self, scene, suite):
        policy = PipelinePolicy(mask_dilation_px=0, segmentation_mode=SegmentationMode.SINGLE_DIALOGUE)
        trace = run_edit(scene.image, self.INSTR, policy, suite)
        assert len(trace.step_results) == 2
        union = applied_mask_union(trace)
        assert outside_mask_identical_ratio(trace.initial, trace.final, union) == 1.0


class TestTraceIO:
    def test_round_trip(self, scene, suite, tmp_path):
        trace = run_edit(scene.image, TestRunEdit.INSTR, POLICY0, suite)
        out = write_trace(trace, tmp_path / "run1", policy=POLICY0)
        assert (out / "initial.png").exists()
        assert (out / "step01_mask.png").exists()
        assert (out / "step02_after.png").exists()
        assert (out / "final.png").exists()
        again = read_trace(out)
        assert again == trace


class TestProposalStateMachine:
    def _proposal(self, scene):
        sp = SubPrompt(EditOpKind.REMOVE, "the red square", "remove the red square")
        return StepProposal(sub_prompt=sp, cot_step=None, mask=scene.registry[0].exact_mask)

    def test_legal_path(self, scene):
        p = self._proposal(scene)
        p.advance(ProposalStatus.APPROVED)
        p.advance(ProposalStatus.APPLIED)
        assert p.status is ProposalStatus.APPLIED

    def test_reject_path(self, scene):
        p = self._proposal(scene)
        p.advance(ProposalStatus.REJECTED)
        assert p.status is ProposalStatus.REJECTED

    def test_illegal_transitions_raise(self, scene):
        p = self._proposal(scene)
        with pytest.raises(SessionError):
            p.advance(ProposalStatus.APPLIED)
        p.advance(ProposalStatus.APPROVED)
        for bad in (ProposalStatus.PROPOSED, ProposalStatus.REJECTED, ProposalStatus.APPROVED):
            with pytest.raises(SessionError):
                p.advance(bad)
