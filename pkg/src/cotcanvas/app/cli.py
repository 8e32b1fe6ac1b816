"""Command-line surface: one-shot edits, data prep, evaluation, serving."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..backends import generate_scene, mock_suite, remote_suite
from ..core.pngio import read_image_png, write_image_png, write_mask_png
from ..core.types import EditInstruction
from ..decompose import ClauseLexicon, decompose_grammar
from ..errors import CotCanvasError
from ..evalx import ReportFormat, emit_report, load_eval_corpus, run_eval
from ..pipeline import (
    DecomposerKind,
    PipelinePolicy,
    SegmentationMode,
    policy_to_json,
    run_edit,
    write_trace,
)


def _parse_spec(text: str | None):
    if not text:
        return None
    pairs = []
    for item in text.split(","):
        words = item.split()
        if len(words) != 2:
            raise ValueError(f"scene spec items are '<color> <shape>', got {item!r}")
        pairs.append((words[0].strip(), words[1].strip()))
    return pairs


def _suite(args):
    if args.backend == "remote":
        return remote_suite(getattr(args, "config", None))
    scene = None
    if getattr(args, "scene_seed", None) is not None:
        scene = generate_scene(args.scene_seed, _parse_spec(getattr(args, "scene_spec", None)))
    return mock_suite(scene)


def _policy(args) -> PipelinePolicy:
    return PipelinePolicy(
        use_cot=not getattr(args, "no_cot", False),
        use_reprompt=not getattr(args, "no_reprompt", False),
        mask_dilation_px=getattr(args, "dilation", 2),
        max_steps=getattr(args, "max_steps", 8),
        decomposer=DecomposerKind[getattr(args, "decomposer", "grammar").upper()],
        segmentation_mode=(
            SegmentationMode.SINGLE_DIALOGUE
            if getattr(args, "seg_mode", "per-step") == "single"
            else SegmentationMode.PER_STEP
        ),
    )


def _add_backend_flags(p: argparse.ArgumentParser):
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--config", help="backend endpoint config file (remote)")
    p.add_argument("--scene-seed", type=int, help="bind mock backends to this synthetic scene")
    p.add_argument("--scene-spec", help="scene objects, e.g. 'red square,blue circle'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotcanvas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edit", help="run a full edit and write a trace directory")
    p.add_argument("--image", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-cot", action="store_true")
    p.add_argument("--no-reprompt", action="store_true")
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--max-steps", type=int, default=8)
    p.add_argument("--decomposer", choices=("grammar", "llm"), default="grammar")
    p.add_argument("--seg-mode", choices=("per-step", "single"), default="per-step")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("decompose", help="print the sub-prompts of an instruction")
    p.add_argument("--instruction", required=True)
    p.add_argument("--lexicon", help="path to a lexicon file")
    p.add_argument("--max-steps", type=int, default=8)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("scene", help="synthetic scene fixtures")
    scene_sub = p.add_subparsers(dest="scene_command", required=True)
    g = scene_sub.add_parser("gen", help="emit scene.png, masks and registry.json")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--spec", help="e.g. 'red square,blue circle'")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_scene_gen)

    p = sub.add_parser("dataprep", help="data preparation pipeline")
    dp = p.add_subparsers(dest="dataprep_command", required=True)
    g = dp.add_parser("generate", help="generate reasoning for a record directory")
    g.add_argument("--records", required=True, help="directory of per-sample folders + index.txt")
    g.add_argument("--out", required=True)
    g.add_argument("--source-tag", default="magicbrush-style")
    _add_backend_flags(g)
    g.set_defaults(func=cmd_dataprep_generate)
    g = dp.add_parser("format-sft", help="emit fine-tuning dialogues for a dataset")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_dataprep_format_sft)

    p = sub.add_parser("eval", help="evaluation harness")
    ev = p.add_subparsers(dest="eval_command", required=True)
    g = ev.add_parser("run", help="compute metrics over an eval corpus")
    g.add_argument("--corpus", required=True)
    g.add_argument("--report", choices=("md", "csv"), default="md")
    g.add_argument("--out", help="write the report here instead of stdout")
    g.add_argument("--model", default="Ours")
    g.add_argument("--dilation", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)
    _add_backend_flags(g)
    g.set_defaults(func=cmd_eval_run)

    p = sub.add_parser("serve", help="start the interactive session service")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--token", help="require this shared token on every request")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def cmd_edit(args) -> int:
    image = read_image_png(args.image)
    policy = _policy(args)
    trace = run_edit(image, EditInstruction(args.instruction), policy, _suite(args))
    out = write_trace(trace, args.out, policy=policy)
    print(f"wrote trace with {len(trace.step_results)} steps to {out}")
    return 0


def cmd_decompose(args) -> int:
    lexicon = ClauseLexicon.load(args.lexicon) if args.lexicon else ClauseLexicon.default()
    subs = decompose_grammar(EditInstruction(args.instruction), lexicon, max_subprompts=args.max_steps)
    for i, sp in enumerate(subs, start=1):
        anchor = f" | anchor: {sp.anchor_ref}" if sp.anchor_ref else ""
        print(f"({i}) [{sp.kind.value}] {sp.target_ref}{anchor} <- {sp.raw_clause}")
    return 0


def cmd_scene_gen(args) -> int:
    scene = generate_scene(args.seed, _parse_spec(args.spec))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_image_png(scene.image, out / "scene.png")
    registry = []
    for obj in scene.registry:
        write_mask_png(obj.exact_mask, out / f"{obj.object_id}.mask.png")
        registry.append(
            {
                "object_id": obj.object_id,
                "color": obj.color_name,
                "shape": obj.shape_name,
                "bbox": list(obj.bbox),
                "mask": f"{obj.object_id}.mask.png",
            }
        )
    (out / "registry.json").write_text(
        json.dumps({"seed": args.seed, "objects": registry, "free_rects": [list(r) for r in scene.free_rects]}, indent=2),
        encoding="utf-8",
    )
    print(f"wrote scene with {len(scene.registry)} objects to {out}")
    return 0


def cmd_dataprep_generate(args) -> int:
    from ..datagen import load_edit_records, prepare_samples, write_dataset

    records = load_edit_records(args.records)
    samples, attempted = prepare_samples(records, _suite(args).mllm)
    manifest = write_dataset(samples, args.out, source_dataset=args.source_tag, attempted_count=attempted)
    print(f"retained {manifest.sample_count} of {attempted} records -> {args.out}")
    return 0


def cmd_dataprep_format_sft(args) -> int:
    from ..datagen import format_sft, read_dataset, write_sft_file

    samples = read_dataset(args.dataset)
    write_sft_file([format_sft(s) for s in samples], args.out)
    print(f"wrote {len(samples)} dialogues to {args.out}")
    return 0


def cmd_eval_run(args) -> int:
    suite = _suite(args)
    records = load_eval_corpus(args.corpus)
    embedding_id = type(suite.embedding).__name__
    report, errors = run_eval(
        records, suite, model=args.model, dilation=args.dilation, workers=args.workers, embedding_id=embedding_id
    )
    if report is not None:
        text = emit_report([report], ReportFormat.CSV if args.report == "csv" else ReportFormat.MARKDOWN)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            print(text, end="")
    for sample_id, exc in errors:
        print(f"error: sample {sample_id}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1 if errors else 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    from .store import SessionStore

    policy = PipelinePolicy(mask_dilation_px=args.dilation)
    app = create_app(SessionStore(args.store), _suite(args), policy=policy, token=args.token)
    print(f"serving on http://{args.host}:{args.port} with policy {policy_to_json(policy)}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CotCanvasError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
