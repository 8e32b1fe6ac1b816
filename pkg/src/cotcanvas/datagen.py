"""Data preparation: reasoning generation, sample assembly, SFT formatting.

Takes editing records (source/mask/target/instruction), drives the
reasoning backend through the three prompt templates, encapsulates
everything into five-field samples, and emits the fine-tuning dialogues
whose assistant turns are exactly the wire format the live pipeline
parses back.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass
from pathlib import Path

from .core.pngio import read_image_png, read_mask_png, write_image_png, write_mask_png
from .core.types import (
    BinaryMask,
    CoTResponse,
    CoTStep,
    EditInstruction,
    EditSample,
    RasterImage,
)
from .cotparse import (
    PROMPT_TRAILER,
    STEP_HEADER_PHRASE,
    extract_preamble,
    format_cot,
    parse_cot,
    seg_dialogue,
)
from .decompose import ClauseLexicon, decompose_grammar, parse_listing
from .errors import (
    CoTParseError,
    CotCanvasError,
    DatasetReadError,
    DecompositionParseError,
    GenerationError,
    ReasoningParseError,
    ShapeError,
)
from .templates import IMG_SENTINEL, PromptTemplate, TemplateName, render_template

__all__ = [
    "PromptTemplate",
    "TemplateName",
    "render_template",
    "SourceRecord",
    "SftDialogue",
    "DatasetManifest",
    "generate_cot_for_record",
    "assemble_sample",
    "prepare_samples",
    "format_sft",
    "write_sft_file",
    "write_dataset",
    "read_dataset",
    "load_edit_records",
]

RECORDS_FILE = "records.jsonl"
MANIFEST_FILE = "manifest.json"
IMAGES_DIR = "images"
SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class SourceRecord:
    """One editing record awaiting reasoning generation."""

    source: RasterImage
    mask: BinaryMask
    target: RasterImage
    instruction: EditInstruction
    turns: tuple[str, ...] = ()
    record_id: str = ""

    def __post_init__(self):
        dims = {self.source.size, self.target.size, self.mask.size}
        if len(dims) != 1:
            raise ShapeError(f"record images must share dimensions, got {sorted(dims)}")


@dataclass(frozen=True)
class SftDialogue:
    """One fine-tuning conversation: user request plus wire-format reply."""

    user_turn: str
    assistant_turn: str

    def __post_init__(self):
        if self.user_turn.count(IMG_SENTINEL) != 1:
            raise ValueError(f"user turn must contain {IMG_SENTINEL} exactly once")
        parse_cot(self.assistant_turn)  # must be valid wire format


@dataclass(frozen=True)
class DatasetManifest:
    sample_count: int
    op_kind_counts: dict[str, int]
    source_dataset: str
    schema_version: int = SCHEMA_VERSION
    attempted_count: int | None = None

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "source_dataset": self.source_dataset,
            "sample_count": self.sample_count,
            "attempted_count": self.attempted_count if self.attempted_count is not None else self.sample_count,
            "op_kind_counts": dict(sorted(self.op_kind_counts.items())),
        }


def generate_cot_for_record(record: SourceRecord, backend) -> CoTResponse:
    """Drive the three templates in order and assemble the wire-format response.

    Decomposition and localization see the source image; the description
    phase sees the target, since it must imagine post-edit content. Any
    unusable reply raises a GenerationError naming the failing phase.
    """
    rendered = render_template(TemplateName.DECOMPOSITION, {"prompt": record.instruction.text})
    reply = backend.chat(record.source, rendered)
    try:
        clauses = parse_listing(reply)
    except DecompositionParseError as exc:
        raise GenerationError("DECOMPOSITION", str(exc)) from exc

    steps: list[CoTStep] = []
    for k, clause in enumerate(clauses, start=1):
        loc_prompt = render_template(TemplateName.LOCALIZATION, {"simple prompts": clause})
        loc_reply = backend.chat(record.source, loc_prompt)
        reasoning = _extract_reasoning(loc_reply)
        if not reasoning:
            raise GenerationError("LOCALIZATION", f"empty reasoning for clause {k}: {clause!r}")

        desc_prompt = render_template(TemplateName.DESCRIPTION, {"simple prompts": clause})
        desc_reply = backend.chat(record.target, desc_prompt)
        try:
            area, inpaint = _extract_description(desc_reply)
        except CotCanvasError as exc:
            raise GenerationError("DESCRIPTION", f"clause {k}: {exc}") from exc
        steps.append(
            CoTStep(index=k, reasoning=reasoning, area_description=area, seg_index=k - 1, inpaint_prompt=inpaint)
        )

    preamble = (
        "We first disassemble this prompt as: "
        + " ".join(f"({k}) {c}." for k, c in enumerate(clauses, start=1))
        + " \n With these prompts and the image, here is what we think the indicated area should be:"
    )
    text = format_cot(steps, preamble=preamble)
    try:
        parsed = parse_cot(text)
    except CoTParseError as exc:
        raise GenerationError("DESCRIPTION", f"assembled response does not parse: {exc}") from exc
    return parsed


def _extract_reasoning(reply: str) -> str:
    _, sep, after = reply.partition(f"{STEP_HEADER_PHRASE}:")
    return (after if sep else reply).strip()


def _extract_description(reply: str) -> tuple[str | None, str]:
    head, sep, tail = reply.partition(PROMPT_TRAILER)
    if not sep:
        raise ReasoningParseError(f"reply is missing {PROMPT_TRAILER!r}")
    inpaint = tail.strip().rstrip(".").strip()
    if not inpaint:
        raise ReasoningParseError("empty inpainting prompt")
    _, label_sep, area_part = head.partition("Area description:")
    area = area_part.strip() if label_sep else None
    return area, inpaint


def assemble_sample(
    source: RasterImage,
    instruction: EditInstruction | str,
    mask: BinaryMask,
    target: RasterImage,
    cot: CoTResponse,
    sample_id: str | None = None,
) -> EditSample:
    """Encapsulate the five fields into a validated sample with a fresh id."""
    if isinstance(instruction, str):
        instruction = EditInstruction(instruction)
    return EditSample(
        source=source,
        instruction=instruction,
        mask=mask,
        target=target,
        cot=cot,
        sample_id=sample_id or uuid.uuid4().hex,
    )


def prepare_samples(records: list[SourceRecord], backend) -> tuple[list[EditSample], int]:
    """Generate reasoning for every record; skip the ones that fail.

    Returns (retained samples, attempted count) so the manifest can
    record both.
    """
    samples: list[EditSample] = []
    for record in records:
        try:
            cot = generate_cot_for_record(record, backend)
            samples.append(
                assemble_sample(record.source, record.instruction, record.mask, record.target, cot)
            )
        except CotCanvasError:
            continue
    return samples, len(records)


def format_sft(sample: EditSample) -> SftDialogue:
    """Render one sample as a user/assistant fine-tuning dialogue."""
    preamble = extract_preamble(sample.cot.raw_text)
    if preamble is None:
        items = " ".join(f"({s.index}) {s.inpaint_prompt}." for s in sample.cot.steps)
        preamble = (
            f"We first disassemble this prompt as: {items} \n "
            "With these prompts and the image, here is what we think the indicated area should be:"
        )
    return SftDialogue(
        user_turn=seg_dialogue(sample.instruction.text),
        assistant_turn=format_cot(list(sample.cot.steps), preamble=preamble),
    )


def write_sft_file(dialogues: list[SftDialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps({"user": d.user_turn, "assistant": d.assistant_turn}) + "\n")


def read_sft_file(path: str | Path) -> list[SftDialogue]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                data = json.loads(line)
                out.append(SftDialogue(user_turn=data["user"], assistant_turn=data["assistant"]))
    return out


def _op_kind_counts(samples: list[EditSample], lexicon: ClauseLexicon) -> dict[str, int]:
    counts: dict[str, int] = {}
    for sample in samples:
        try:
            for sp in decompose_grammar(sample.instruction, lexicon):
                counts[sp.kind.value] = counts.get(sp.kind.value, 0) + 1
        except CotCanvasError:
            counts["UNCLASSIFIED"] = counts.get("UNCLASSIFIED", 0) + 1
    return counts


def write_dataset(
    samples: list[EditSample],
    path: str | Path,
    source_dataset: str = "synthetic",
    attempted_count: int | None = None,
) -> DatasetManifest:
    """One JSONL record per sample; images as sibling PNGs; manifest alongside."""
    root = Path(path)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    with open(root / RECORDS_FILE, "w", encoding="utf-8") as fh:
        for sample in samples:
            refs = {}
            for field, img_writer in (
                ("source", write_image_png),
                ("target", write_image_png),
                ("mask", write_mask_png),
            ):
                rel = f"{IMAGES_DIR}/{sample.sample_id}.{field}.png"
                img_writer(getattr(sample, field), root / rel)
                refs[field] = rel
            record = {
                "schema_version": SCHEMA_VERSION,
                "sample_id": sample.sample_id,
                "instruction": sample.instruction.text,
                "cot_text": sample.cot.raw_text,
                "cot_warnings": list(sample.cot.warnings),
                "steps": [
                    {
                        "index": s.index,
                        "reasoning": s.reasoning,
                        "area_description": s.area_description,
                        "seg_index": s.seg_index,
                        "inpaint_prompt": s.inpaint_prompt,
                    }
                    for s in sample.cot.steps
                ],
                **refs,
            }
            fh.write(json.dumps(record) + "\n")
    manifest = DatasetManifest(
        sample_count=len(samples),
        op_kind_counts=_op_kind_counts(samples, ClauseLexicon.default()),
        source_dataset=source_dataset,
        attempted_count=attempted_count,
    )
    (root / MANIFEST_FILE).write_text(json.dumps(manifest.to_json(), indent=2), encoding="utf-8")
    return manifest


def read_dataset(path: str | Path) -> list[EditSample]:
    """Exact inverse of write_dataset; corrupt lines and dangling refs are errors."""
    root = Path(path)
    records_path = root / RECORDS_FILE
    if not records_path.exists():
        raise DatasetReadError(f"no {RECORDS_FILE} under {root}")
    samples: list[EditSample] = []
    with open(records_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetReadError(f"line {lineno}: corrupt record ({exc})") from exc
            try:
                images = {}
                for field in ("source", "target", "mask"):
                    rel = data[field]
                    full = root / rel
                    if not full.exists():
                        raise DatasetReadError(f"line {lineno}: dangling image reference {rel}")
                    images[field] = read_mask_png(full) if field == "mask" else read_image_png(full)
                steps = tuple(
                    CoTStep(
                        index=s["index"],
                        reasoning=s["reasoning"],
                        area_description=s.get("area_description"),
                        seg_index=s["seg_index"],
                        inpaint_prompt=s["inpaint_prompt"],
                    )
                    for s in data["steps"]
                )
                cot = CoTResponse(
                    steps=steps, raw_text=data["cot_text"], warnings=tuple(data.get("cot_warnings", ()))
                )
                samples.append(
                    EditSample(
                        source=images["source"],
                        instruction=EditInstruction(data["instruction"]),
                        mask=images["mask"],
                        target=images["target"],
                        cot=cot,
                        sample_id=data["sample_id"],
                    )
                )
            except DatasetReadError:
                raise
            except (KeyError, ValueError, CotCanvasError) as exc:
                raise DatasetReadError(f"line {lineno}: invalid record ({exc})") from exc

    manifest_path = root / MANIFEST_FILE
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("sample_count") != len(samples):
            raise DatasetReadError(
                f"manifest says {manifest.get('sample_count')} samples, file has {len(samples)}"
            )
    return samples


def load_edit_records(root: str | Path) -> list[SourceRecord]:
    """Ingest a directory of per-sample folders listed by an index file.

    Each folder holds source.png, mask.png, target.png and
    instruction.txt; multi-line instructions are treated as editing
    turns and joined with ", and " into one complex instruction, with
    the raw turns retained on the record.
    """
    root = Path(root)
    index = root / "index.txt"
    if index.exists():
        names = [n.strip() for n in index.read_text(encoding="utf-8").splitlines() if n.strip()]
    else:
        names = sorted(p.name for p in root.iterdir() if p.is_dir())
    records = []
    for name in names:
        folder = root / name
        if not folder.is_dir():
            raise DatasetReadError(f"indexed sample folder missing: {folder}")
        turns = [
            t.strip()
            for t in (folder / "instruction.txt").read_text(encoding="utf-8").splitlines()
            if t.strip()
        ]
        if not turns:
            raise DatasetReadError(f"{folder}: empty instruction.txt")
        records.append(
            SourceRecord(
                source=read_image_png(folder / "source.png"),
                mask=read_mask_png(folder / "mask.png"),
                target=read_image_png(folder / "target.png"),
                instruction=EditInstruction(", and ".join(turns)),
                turns=tuple(turns),
                record_id=name,
            )
        )
    return records
