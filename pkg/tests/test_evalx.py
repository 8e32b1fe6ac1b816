"""Metrics: embedding similarities, judge handling, fidelity, report emission."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from cotcanvas.backends import (
    ColorHistogramEmbedding,
    FixedJudge,
    JudgeCriterion,
    MeanPoolEmbedding,
    generate_scene,
    mock_suite,
)
from cotcanvas.core import BinaryMask, RasterImage
from cotcanvas.errors import MetricError, ProtocolError, ShapeError
from cotcanvas.evalx import (
    EvalRecord,
    MetricReport,
    MetricRow,
    ReportFormat,
    clip_i,
    clip_t,
    emit_report,
    evaluate_record,
    fidelity_ratio,
    judge_score,
    record_from_trace,
    run_eval,
)

GOLDEN = Path(__file__).parent / "golden"


def rand_image(seed: int, w: int = 16, h: int = 16) -> RasterImage:
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def solid(rgb, w: int = 16, h: int = 16) -> RasterImage:
    return RasterImage(np.full((h, w, 3), rgb, dtype=np.uint8))


class TestClipMetrics:
    @pytest.mark.parametrize("backend", [MeanPoolEmbedding(), ColorHistogramEmbedding()])
    def test_self_similarity_is_one(self, backend):
        for seed in range(5):
            img = rand_image(seed)
            assert clip_i(img, img, backend) == pytest.approx(1.0, abs=1e-6)

    def test_disjoint_support_images_orthogonal(self):
        # top-half-only vs bottom-half-only pooled vectors share no nonzero
        # entry, so the hand-computed dot product is exactly 0
        top = np.zeros((16, 16, 3), dtype=np.uint8)
        top[:8] = (200, 10, 10)
        bottom = np.zeros((16, 16, 3), dtype=np.uint8)
        bottom[8:] = (10, 200, 10)
        backend = MeanPoolEmbedding()
        va, vb = np.array(backend.embed_image(RasterImage(top))), np.array(backend.embed_image(RasterImage(bottom)))
        assert float(va @ vb) == 0.0
        assert clip_i(RasterImage(top), RasterImage(bottom), backend) == pytest.approx(0.0, abs=1e-9)

    def test_color_text_alignment(self):
        backend = ColorHistogramEmbedding()
        red_img = solid((220, 50, 47))
        assert clip_t(red_img, "make it red", backend) > clip_t(red_img, "make it blue", backend)

    def test_determinism(self):
        backend = MeanPoolEmbedding()
        img = rand_image(3)
        assert clip_t(img, "a prompt", backend) == clip_t(img, "a prompt", backend)

    def test_zero_norm_is_metric_error(self):
        class ZeroEmbed:
            def embed_image(self, image):
                return [0.0, 0.0]

            def embed_text(self, text):
                return [0.0, 0.0]

        with pytest.raises(MetricError):
            clip_i(rand_image(1), rand_image(2), ZeroEmbed())

    def test_range(self):
        backend = MeanPoolEmbedding()
        for seed in range(4):
            v = clip_t(rand_image(seed), f"text {seed}", backend)
            assert -1.0 <= v <= 1.0


class TestJudgeScore:
    def test_fixed_mock_passthrough(self):
        img = rand_image(0)
        assert judge_score(img, img, "x", JudgeCriterion.ALIGNMENT, FixedJudge(57)) == 57

    def test_out_of_range_clamped_with_warning(self):
        img = rand_image(0)
        with pytest.warns(UserWarning, match="clamped"):
            assert judge_score(img, img, "x", JudgeCriterion.ALIGNMENT, FixedJudge(110)) == 100
        with pytest.warns(UserWarning):
            assert judge_score(img, img, "x", JudgeCriterion.COHERENCE, FixedJudge(-5)) == 0

    def test_non_integer_reply_is_protocol_error(self):
        img = rand_image(0)
        with pytest.raises(ProtocolError):
            judge_score(img, img, "x", JudgeCriterion.ALIGNMENT, FixedJudge("high"))

    def test_criterion_threaded_verbatim(self):
        seen = []

        class SpyJudge:
            def score(self, source, edited, instruction, criterion):
                seen.append(criterion)
                return 50

        img = rand_image(0)
        judge_score(img, img, "x", JudgeCriterion.COHERENCE, SpyJudge())
        assert seen == [JudgeCriterion.COHERENCE]


class TestFidelityRatio:
    def test_pipeline_output_scores_one(self):
        from cotcanvas.pipeline import PipelinePolicy, run_edit

        scene = generate_scene(19, [("red", "square"), ("blue", "circle")])
        suite = mock_suite(scene)
        trace = run_edit(scene.image, "remove the red square", PipelinePolicy(mask_dilation_px=0), suite)
        record = record_from_trace(trace, "remove the red square", "t1")
        assert fidelity_ratio(record, dilation=0) == 1.0

    def test_single_outside_pixel_change(self):
        # 10x10 image, 20 in-mask pixels, one out-of-mask pixel flipped:
        # 79 of 80 outside pixels identical
        rng = np.random.default_rng(7)
        src = rng.integers(0, 255, (10, 10, 3), dtype=np.uint8)
        bits = np.zeros((10, 10), dtype=bool)
        bits[:2] = True  # 20 px
        edited = src.copy()
        edited[5, 5] = (edited[5, 5].astype(np.int16) + 1) % 256
        record = EvalRecord(
            sample_id="x",
            source=RasterImage(src),
            edited=RasterImage(edited),
            instruction="i",
            mask_union=BinaryMask(bits),
        )
        assert fidelity_ratio(record, dilation=0) == 79 / 80

    def test_missing_mask_excluded(self):
        record = EvalRecord(sample_id="x", source=rand_image(1), edited=rand_image(1), instruction="i")
        assert fidelity_ratio(record, dilation=0) is None

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            EvalRecord(
                sample_id="x",
                source=rand_image(1),
                edited=rand_image(1),
                instruction="i",
                mask_union=BinaryMask.zeros(4, 4),
            )


def _row(sid, ct, ci, ali, coh, fid):
    return MetricRow(sample_id=sid, clip_t=ct, clip_i=ci, alignment=ali, coherence=coh, fidelity_ratio=fid)


class TestReport:
    def test_pinned_reference_rows_match_golden(self):
        ours = MetricReport(model="Ours", rows=(_row("a", 0.233, 0.664, 57, 80, 1.0),))
        sd = MetricReport(model="StableDiffusion", rows=(_row("a", 0.278, 0.368, 27, 23, None),))
        text = emit_report([sd, ours], ReportFormat.MARKDOWN)
        assert text == (GOLDEN / "report_fixture.md").read_text(encoding="utf-8")

    def test_csv_and_markdown_numeric_content_identical(self):
        report = MetricReport(model="Ours", rows=(_row("a", 0.2334, 0.6641, 57, 80, 0.987),))
        md = emit_report([report], ReportFormat.MARKDOWN)
        csv = emit_report([report], ReportFormat.CSV)
        md_cells = [c.strip() for c in md.splitlines()[2].strip("|").split("|")]
        csv_cells = csv.splitlines()[1].split(",")
        assert md_cells == csv_cells

    def test_aggregates_match_independent_summation(self):
        rng = np.random.default_rng(11)
        rows = tuple(
            _row(f"s{i}", float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)), int(rng.integers(0, 101)), int(rng.integers(0, 101)), float(rng.uniform(0, 1)))
            for i in range(37)
        )
        report = MetricReport(model="m", rows=rows)
        assert abs(report.aggregates["clip_t"] - math.fsum(r.clip_t for r in rows) / 37) < 1e-9
        assert abs(report.aggregates["clip_i"] - math.fsum(r.clip_i for r in rows) / 37) < 1e-9
        assert abs(report.aggregates["alignment"] - math.fsum(r.alignment for r in rows) / 37) < 1e-9
        assert abs(report.aggregates["fidelity"] - math.fsum(r.fidelity_ratio for r in rows) / 37) < 1e-9

    def test_embedding_id_recorded_in_markdown(self):
        report = MetricReport(model="Ours", rows=(_row("a", 0.1, 0.2, 3, 4, None),), embedding_id="meanpool-8x8")
        assert "Embedding: meanpool-8x8" in emit_report([report], ReportFormat.MARKDOWN)


class TestRunEval:
    def _records(self, n=6):
        scene = generate_scene(29, [("red", "square")])
        out = []
        for i in range(n):
            edited = rand_image(i, scene.image.width, scene.image.height)
            out.append(
                EvalRecord(
                    sample_id=f"s{i}",
                    source=scene.image,
                    edited=edited,
                    instruction=f"edit {i}",
                    mask_union=scene.registry[0].exact_mask,
                )
            )
        return out

    def test_worker_count_does_not_change_result(self):
        records = self._records()
        suite = mock_suite()
        one, _ = run_eval(records, suite, workers=1)
        four, _ = run_eval(records, suite, workers=4)
        assert one.rows == four.rows
        assert one.aggregates == four.aggregates

    def test_errors_collected_not_raised(self):
        records = self._records(3)

        class FlakyJudge:
            def score(self, source, edited, instruction, criterion):
                if instruction == "edit 1":
                    return "boom"
                return 50

        suite = mock_suite()
        suite.judge = FlakyJudge()
        report, errors = run_eval(records, suite)
        assert len(errors) == 1 and errors[0][0] == "s1"
        assert len(report.rows) == 2
