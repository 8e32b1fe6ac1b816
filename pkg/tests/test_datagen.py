"""Templates, reasoning generation, sample assembly, SFT and dataset round trips."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from cotcanvas.backends import CompositorInpaint, MockMllm, generate_scene
from cotcanvas.core import (
    BinaryMask,
    EditInstruction,
    RasterImage,
    count_seg_markers,
)
from cotcanvas.cotparse import SEG_DIALOGUE_FMT, parse_cot
from cotcanvas.datagen import (
    SourceRecord,
    TemplateName,
    assemble_sample,
    format_sft,
    generate_cot_for_record,
    load_edit_records,
    prepare_samples,
    read_dataset,
    read_sft_file,
    render_template,
    write_dataset,
    write_sft_file,
)
from cotcanvas.errors import DatasetReadError, GenerationError, ShapeError, TemplateError
from cotcanvas.templates import TEMPLATES

from .sample_factory import direct_sample, generated_sample, scene_record

GOLDEN = Path(__file__).parent / "golden"


class TestTemplates:
    @pytest.mark.parametrize(
        "name,golden_file",
        [
            (TemplateName.DECOMPOSITION, "decomposition_opening.txt"),
            (TemplateName.LOCALIZATION, "localization_opening.txt"),
            (TemplateName.DESCRIPTION, "description_opening.txt"),
            (TemplateName.ICL, "icl_opening.txt"),
        ],
    )
    def test_bodies_match_golden_openings(self, name, golden_file):
        opening = (GOLDEN / golden_file).read_text(encoding="utf-8")
        assert TEMPLATES[name].body.startswith(opening)

    def test_decomposition_substitution(self):
        text = render_template(TemplateName.DECOMPOSITION, {"prompt": "X"})
        assert "denoted as X" in text
        assert text.startswith("Your task involves deconstructing complex instructions")

    def test_missing_placeholder_named(self):
        with pytest.raises(TemplateError, match="simple prompts"):
            render_template(TemplateName.LOCALIZATION, {})

    def test_render_deterministic(self):
        a = render_template(TemplateName.LOCALIZATION, {"simple prompts": "remove the cat"})
        b = render_template(TemplateName.LOCALIZATION, {"simple prompts": "remove the cat"})
        assert a == b

    def test_img_sentinel_left_intact(self):
        text = render_template(TemplateName.LOCALIZATION, {"simple prompts": "p"})
        assert "<img>" in text

    def test_extra_keys_appended(self):
        text = render_template(TemplateName.DESCRIPTION, {"user feedback": "mask too small"})
        assert text.endswith("user feedback: mask too small")


class _PhaseFailBackend(MockMllm):
    """Mock that returns empty text for localization prompts."""

    def chat(self, image, prompt):
        if "identify the area in the image that corresponds" in prompt:
            return ""
        return super().chat(image, prompt)


class TestGenerateCot:
    def test_mock_backed_record(self):
        record = scene_record(seed=1, n_objects=2)
        cot = generate_cot_for_record(record, MockMllm())
        assert len(cot.steps) >= 1
        assert all(s.inpaint_prompt for s in cot.steps)
        assert count_seg_markers(cot.raw_text) == len(cot.steps)

    def test_single_op_instruction_single_step(self):
        record = scene_record(seed=2, n_objects=1)
        cot = generate_cot_for_record(record, MockMllm())
        assert len(cot.steps) == 1

    def test_empty_localization_reply_names_phase(self):
        record = scene_record(seed=3, n_objects=1)
        with pytest.raises(GenerationError, match="LOCALIZATION"):
            generate_cot_for_record(record, _PhaseFailBackend())

    def test_prepare_samples_counts_attempts(self):
        records = [scene_record(seed=s, n_objects=2) for s in (4, 5)]
        samples, attempted = prepare_samples(records, MockMllm())
        assert attempted == 2 and len(samples) == 2


class TestAssembleSample:
    def test_five_fields_populated(self):
        sample = generated_sample(seed=6)
        for field in ("source", "instruction", "mask", "target", "cot"):
            assert getattr(sample, field) is not None
        assert sample.sample_id

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        a = RasterImage(rng.integers(0, 255, (10, 10, 3), dtype=np.uint8))
        b = RasterImage(rng.integers(0, 255, (12, 12, 3), dtype=np.uint8))
        sample = generated_sample(seed=7)
        with pytest.raises(ShapeError):
            assemble_sample(a, "edit it", BinaryMask.zeros(10, 10), b, sample.cot)

    def test_empty_instruction_rejected(self):
        sample = generated_sample(seed=8)
        with pytest.raises(ValueError):
            assemble_sample(sample.source, "  ", sample.mask, sample.target, sample.cot)


class TestFormatSft:
    def test_user_turn_matches_wire_bullet(self):
        sample = generated_sample(seed=9)
        dialogue = format_sft(sample)
        assert dialogue.user_turn == SEG_DIALOGUE_FMT.format(prompt=sample.instruction.text)
        assert dialogue.user_turn.count("<img>") == 1

    def test_assistant_turn_round_trips_steps(self):
        sample = generated_sample(seed=10, n_objects=2)
        dialogue = format_sft(sample)
        assert parse_cot(dialogue.assistant_turn).steps == sample.cot.steps

    def test_marker_count_matches_steps(self):
        sample = generated_sample(seed=11, n_objects=2)
        assert len(sample.cot.steps) == 2
        assert count_seg_markers(format_sft(sample).assistant_turn) == 2

    def test_sft_file_round_trip(self, tmp_path):
        dialogues = [format_sft(generated_sample(seed=s)) for s in (12, 13)]
        path = tmp_path / "sft.jsonl"
        write_sft_file(dialogues, path)
        assert read_sft_file(path) == dialogues


class TestDatasetIO:
    def test_fifty_sample_round_trip(self, tmp_path):
        rng = np.random.default_rng(99)
        samples = [direct_sample(rng, i) for i in range(50)]
        manifest = write_dataset(samples, tmp_path / "ds")
        assert manifest.sample_count == 50
        again = read_dataset(tmp_path / "ds")
        assert again == samples

    def test_truncated_line_reports_lineno(self, tmp_path):
        rng = np.random.default_rng(1)
        samples = [direct_sample(rng, i) for i in range(3)]
        write_dataset(samples, tmp_path / "ds")
        records = tmp_path / "ds" / "records.jsonl"
        text = records.read_text(encoding="utf-8")
        records.write_text(text[:-40], encoding="utf-8")  # chop the tail
        with pytest.raises(DatasetReadError, match="line 3"):
            read_dataset(tmp_path / "ds")

    def test_dangling_image_reference(self, tmp_path):
        rng = np.random.default_rng(2)
        write_dataset([direct_sample(rng, 0)], tmp_path / "ds")
        victim = next((tmp_path / "ds" / "images").glob("*.mask.png"))
        victim.unlink()
        with pytest.raises(DatasetReadError, match="dangling"):
            read_dataset(tmp_path / "ds")

    def test_empty_dataset_valid(self, tmp_path):
        manifest = write_dataset([], tmp_path / "ds")
        assert manifest.sample_count == 0
        assert read_dataset(tmp_path / "ds") == []
        data = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert data["sample_count"] == 0

    def test_manifest_mismatch_detected(self, tmp_path):
        rng = np.random.default_rng(3)
        write_dataset([direct_sample(rng, i) for i in range(2)], tmp_path / "ds")
        manifest = tmp_path / "ds" / "manifest.json"
        data = json.loads(manifest.read_text())
        data["sample_count"] = 5
        manifest.write_text(json.dumps(data))
        with pytest.raises(DatasetReadError, match="manifest"):
            read_dataset(tmp_path / "ds")


class TestIngest:
    def test_directory_layout_with_turn_joining(self, tmp_path):
        from cotcanvas.core import write_image_png, write_mask_png

        scene = generate_scene(40, [("red", "square")], width=64, height=48)
        target = CompositorInpaint().inpaint(scene.image, scene.registry[0].exact_mask, "x")
        for name, turns in (("s1", ["remove the red square"]), ("s2", ["remove the hat", "add a cat on the mat"])):
            d = tmp_path / name
            d.mkdir()
            write_image_png(scene.image, d / "source.png")
            write_mask_png(scene.registry[0].exact_mask, d / "mask.png")
            write_image_png(target, d / "target.png")
            (d / "instruction.txt").write_text("\n".join(turns), encoding="utf-8")
        (tmp_path / "index.txt").write_text("s1\ns2\n", encoding="utf-8")

        records = load_edit_records(tmp_path)
        assert [r.record_id for r in records] == ["s1", "s2"]
        assert records[1].instruction.text == "remove the hat, and add a cat on the mat"
        assert records[1].turns == ("remove the hat", "add a cat on the mat")

    def test_missing_indexed_folder(self, tmp_path):
        (tmp_path / "index.txt").write_text("ghost\n", encoding="utf-8")
        with pytest.raises(DatasetReadError, match="ghost"):
            load_edit_records(tmp_path)
