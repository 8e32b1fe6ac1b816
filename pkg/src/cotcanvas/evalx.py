"""Evaluation harness: embedding similarities, judge scores, exact fidelity.

Per-sample metric computation is independent and may fan out across a
worker pool; aggregation is a single deterministic reduce ordered by
sample_id, so reports are byte-stable regardless of worker count.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends.base import EmbeddingBackend, JudgeBackend, JudgeCriterion
from .backends.config import BackendSuite
from .core.maskops import mask_dilate, outside_mask_identical_ratio
from .core.pngio import read_image_png
from .core.types import BinaryMask, EditTrace, RasterImage
from .errors import CotCanvasError, DatasetReadError, MetricError, ProtocolError, ShapeError
from .pipeline import applied_mask_union

# Documented default paraphrases; judge services may load their own text
# from a prompts file instead (see load_judge_prompts).
DEFAULT_JUDGE_PROMPTS: dict[JudgeCriterion, str] = {
    JudgeCriterion.ALIGNMENT: (
        "Rate from 0 to 100 how faithfully the edited image carries out the editing "
        "instruction, considering every requested operation."
    ),
    JudgeCriterion.COHERENCE: (
        "Rate from 0 to 100 the overall aesthetic consistency of the edited image: "
        "lighting, shadows, style and seams."
    ),
}


def load_judge_prompts(path: str | Path) -> dict[JudgeCriterion, str]:
    """Judge prompt text as configuration: a JSON object keyed by criterion."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    out = dict(DEFAULT_JUDGE_PROMPTS)
    for key, value in data.items():
        out[JudgeCriterion(key)] = str(value)
    return out


@dataclass(frozen=True, eq=False)
class EvalRecord:
    sample_id: str
    source: RasterImage
    edited: RasterImage
    instruction: str
    mask_union: BinaryMask | None = None

    def __post_init__(self):
        if self.source.size != self.edited.size:
            raise ShapeError(f"source {self.source.size} vs edited {self.edited.size}")
        if self.mask_union is not None and self.mask_union.size != self.source.size:
            raise ShapeError(f"mask {self.mask_union.size} vs image {self.source.size}")


@dataclass(frozen=True)
class MetricRow:
    sample_id: str
    clip_t: float
    clip_i: float
    alignment: int
    coherence: int
    fidelity_ratio: float | None


@dataclass(frozen=True)
class MetricReport:
    model: str
    rows: tuple[MetricRow, ...]
    embedding_id: str | None = None
    aggregates: dict[str, float | None] = field(init=False)

    def __post_init__(self):
        rows = tuple(sorted(self.rows, key=lambda r: r.sample_id))
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise ValueError("a report needs at least one row")
        fid = [r.fidelity_ratio for r in rows if r.fidelity_ratio is not None]
        object.__setattr__(
            self,
            "aggregates",
            {
                "clip_t": sum(r.clip_t for r in rows) / len(rows),
                "clip_i": sum(r.clip_i for r in rows) / len(rows),
                "alignment": sum(r.alignment for r in rows) / len(rows),
                "coherence": sum(r.coherence for r in rows) / len(rows),
                "fidelity": sum(fid) / len(fid) if fid else None,
            },
        )


def _cosine(a: list[float], b: list[float]) -> float:
    va, vb = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise MetricError("zero-norm embedding")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def clip_i(source: RasterImage, edited: RasterImage, backend: EmbeddingBackend) -> float:
    """Image fidelity: cosine similarity of the two image embeddings."""
    return _cosine(backend.embed_image(source), backend.embed_image(edited))


def clip_t(edited: RasterImage, instruction: str, backend: EmbeddingBackend) -> float:
    """Text alignment: cosine similarity of edited-image and instruction embeddings."""
    return _cosine(backend.embed_image(edited), backend.embed_text(instruction))


def judge_score(
    source: RasterImage,
    edited: RasterImage,
    instruction: str,
    criterion: JudgeCriterion,
    backend: JudgeBackend,
) -> int:
    """Judge score clamped to [0, 100]; criterion threaded verbatim."""
    raw = backend.score(source, edited, instruction, criterion)
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ProtocolError(f"judge returned a non-integer: {raw!r}")
    if raw < 0 or raw > 100:
        clamped = min(100, max(0, raw))
        warnings.warn(f"judge score {raw} clamped to {clamped}", stacklevel=2)
        return clamped
    return raw


def fidelity_ratio(record: EvalRecord, dilation: int) -> float | None:
    """Exact outside-mask fidelity; None (excluded sentinel) without a mask."""
    if record.mask_union is None:
        return None
    protected = mask_dilate(record.mask_union, dilation)
    return outside_mask_identical_ratio(record.source, record.edited, protected)


def evaluate_record(record: EvalRecord, suite: BackendSuite, dilation: int = 0) -> MetricRow:
    return MetricRow(
        sample_id=record.sample_id,
        clip_t=clip_t(record.edited, record.instruction, suite.embedding),
        clip_i=clip_i(record.source, record.edited, suite.embedding),
        alignment=judge_score(record.source, record.edited, record.instruction, JudgeCriterion.ALIGNMENT, suite.judge),
        coherence=judge_score(record.source, record.edited, record.instruction, JudgeCriterion.COHERENCE, suite.judge),
        fidelity_ratio=fidelity_ratio(record, dilation),
    )


def run_eval(
    records: list[EvalRecord],
    suite: BackendSuite,
    model: str = "Ours",
    dilation: int = 0,
    workers: int = 1,
    embedding_id: str | None = None,
) -> tuple[MetricReport | None, list[tuple[str, Exception]]]:
    """Evaluate every record; returns the report plus per-sample failures."""
    rows: list[MetricRow] = []
    errors: list[tuple[str, Exception]] = []

    def one(record: EvalRecord):
        try:
            return record.sample_id, evaluate_record(record, suite, dilation), None
        except (CotCanvasError, ValueError) as exc:
            return record.sample_id, None, exc

    if workers <= 1:
        outcomes = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, records))
    for sample_id, row, exc in outcomes:
        if exc is not None:
            errors.append((sample_id, exc))
        else:
            rows.append(row)
    report = MetricReport(model=model, rows=tuple(rows), embedding_id=embedding_id) if rows else None
    return report, errors


class ReportFormat:
    MARKDOWN = "MARKDOWN"
    CSV = "CSV"


def _fmt_cells(report: MetricReport) -> list[str]:
    agg = report.aggregates
    fid = f"{agg['fidelity']:.3f}" if agg["fidelity"] is not None else "-"
    return [
        report.model,
        f"{agg['clip_t']:.3f}",
        f"{agg['clip_i']:.3f}",
        str(round(agg["alignment"])),
        str(round(agg["coherence"])),
        fid,
    ]


def emit_report(reports: list[MetricReport], fmt: str = ReportFormat.MARKDOWN) -> str:
    """One aggregate row per model, columns CLIP-T, CLIP-I, Ali., Coh. + Fidelity."""
    if not reports:
        raise ValueError("nothing to report")
    header = ["Model", "CLIP-T", "CLIP-I", "Ali.", "Coh.", "Fidelity"]
    if fmt == ReportFormat.CSV:
        lines = [",".join(header)]
        lines += [",".join(_fmt_cells(r)) for r in reports]
        return "\n".join(lines) + "\n"
    if fmt == ReportFormat.MARKDOWN:
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(_fmt_cells(r)) + " |" for r in reports]
        embeds = sorted({r.embedding_id for r in reports if r.embedding_id})
        if embeds:
            lines.append("")
            lines.append(f"Embedding: {', '.join(embeds)}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def record_from_trace(trace: EditTrace, instruction: str, sample_id: str) -> EvalRecord:
    """Build an EvalRecord from a pipeline run, mask union included."""
    return EvalRecord(
        sample_id=sample_id,
        source=trace.initial,
        edited=trace.final,
        instruction=instruction,
        mask_union=applied_mask_union(trace),
    )


def load_eval_corpus(path: str | Path) -> list[EvalRecord]:
    """Datagen record format plus an 'edited' image column per record."""
    from .datagen import RECORDS_FILE

    root = Path(path)
    records_path = root / RECORDS_FILE
    if not records_path.exists():
        raise DatasetReadError(f"no {RECORDS_FILE} under {root}")
    from .core.pngio import read_mask_png

    out: list[EvalRecord] = []
    with open(records_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetReadError(f"line {lineno}: corrupt record ({exc})") from exc
            try:
                edited_ref = data["edited"]
            except KeyError:
                raise DatasetReadError(f"line {lineno}: record has no 'edited' image column") from None
            for ref in (data.get("source"), data.get("mask"), edited_ref):
                if ref is not None and not (root / ref).exists():
                    raise DatasetReadError(f"line {lineno}: dangling image reference {ref}")
            out.append(
                EvalRecord(
                    sample_id=data["sample_id"],
                    source=read_image_png(root / data["source"]),
                    edited=read_image_png(root / edited_ref),
                    instruction=data["instruction"],
                    mask_union=read_mask_png(root / data["mask"]) if data.get("mask") else None,
                )
            )
    return out
