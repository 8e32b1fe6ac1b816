"""Shared builders for editing records and samples used across test modules."""

from __future__ import annotations

import numpy as np

from cotcanvas.backends import CompositorInpaint, MockMllm, generate_scene
from cotcanvas.core import (
    BinaryMask,
    CoTStep,
    EditInstruction,
    EditSample,
    RasterImage,
)
from cotcanvas.cotparse import format_cot, parse_cot
from cotcanvas.datagen import SourceRecord, assemble_sample, generate_cot_for_record

SCENE_INSTRUCTIONS = {
    1: "remove the {c0} {s0}",
    2: "remove the {c0} {s0} and change the {c1} {s1} to green",
    3: "add a lamp on the {c1} {s1} and remove the {c0} {s0}",
}


def scene_record(seed: int, n_objects: int = 2, width: int = 96, height: int = 72) -> SourceRecord:
    """Record whose target is a deterministic compositor edit of a synthetic scene."""
    combos = [("red", "square"), ("blue", "circle"), ("green", "triangle")]
    scene = generate_scene(seed, combos[:n_objects], width=width, height=height)
    c0, s0 = combos[0]
    fmt = SCENE_INSTRUCTIONS[min(n_objects, 3) if n_objects > 1 else 1]
    c1, s1 = combos[1] if n_objects > 1 else combos[0]
    instruction = fmt.format(c0=c0, s0=s0, c1=c1, s1=s1)
    mask = scene.registry[0].exact_mask
    target = CompositorInpaint().inpaint(scene.image, mask, instruction)
    return SourceRecord(
        source=scene.image,
        mask=mask,
        target=target,
        instruction=EditInstruction(instruction),
        record_id=f"scene{seed}",
    )


def generated_sample(seed: int, **kw) -> EditSample:
    record = scene_record(seed, **kw)
    scene_backend = MockMllm()
    cot = generate_cot_for_record(record, scene_backend)
    return assemble_sample(record.source, record.instruction, record.mask, record.target, cot)


_TARGETS = ["the red square", "the blue circle", "the green triangle", "the yellow circle"]
_FILLS = ["a glass of soda on the table", "one vase of flowers on the table", "a bottle of beer"]


def direct_sample(rng: np.random.Generator, idx: int, size: int = 16) -> EditSample:
    """Cheap sample with random rasters and a synthesized response; no backend calls."""
    px = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    tgt = px.copy()
    tgt[: size // 2] = rng.integers(0, 256, size=(size // 2, size, 3), dtype=np.uint8)
    bits = rng.integers(0, 2, size=(size, size)).astype(bool)
    n_steps = int(rng.integers(1, 4))
    steps = [
        CoTStep(
            index=k,
            reasoning=f"locate {_TARGETS[(idx + k) % len(_TARGETS)]}",
            area_description=(f"the area near {_TARGETS[(idx + k) % len(_TARGETS)]}" if k % 2 == 0 else None),
            seg_index=k - 1,
            inpaint_prompt=_FILLS[(idx + k) % len(_FILLS)],
        )
        for k in range(1, n_steps + 1)
    ]
    items = " ".join(f"({s.index}) edit {s.index}." for s in steps)
    text = format_cot(steps, preamble=f"We first disassemble this prompt as: {items}")
    verbs = ["remove", "recolor", "erase"]
    instruction = " and ".join(
        f"{verbs[(idx + k) % 3]} {_TARGETS[(idx + k) % len(_TARGETS)]}" for k in range(n_steps)
    )
    return EditSample(
        source=RasterImage(px),
        instruction=EditInstruction(instruction),
        mask=BinaryMask(bits),
        target=RasterImage(tgt),
        cot=parse_cot(text),
        sample_id=f"sample{idx:05d}",
    )
