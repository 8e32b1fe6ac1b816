"""Deterministic offline backends.

Every class here is a pure function of its inputs (plus construction
parameters), so full pipeline runs are byte-reproducible and the exact
oracles in the test suite can check them.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from ..core.types import BinaryMask, EditInstruction, EditOpKind, RasterImage
from ..decompose import ClauseLexicon, classify_clause, extract_new_value, split_clauses
from ..errors import ClassificationError, LocalizationError, ShapeError
from .base import JudgeCriterion
from .synthetic import PALETTE, SHAPES, SyntheticScene, oracle_localize

_DECOMPOSITION_MARKER = "deconstructing complex instructions"
_LOCALIZATION_MARKER = "identify the area in the image that corresponds to a given prompt"
_DESCRIPTION_MARKER = "provide a detailed area description and a re-prompt"

_INSTRUCTION_RE = re.compile(r"denoted as (.*?)\. Please parse these instructions", re.DOTALL)
_SUBPROMPT_RE = re.compile(r"as follows:\s*(.*?)\.\s*\n\s*<img>", re.DOTALL)
_TRAILING_KEY_RE = re.compile(r"^(?:simple prompts|prompt):\s*(.*\S)\s*$", re.MULTILINE)


def _digest_color(text: str) -> tuple[int, int, int]:
    d = hashlib.sha256(text.encode("utf-8")).digest()
    return (d[0], d[1], d[2])


class MockMllm:
    """Template-driven chat stand-in.

    Replies to decomposition prompts with the clause grammar's numbered
    list, and to localization/description prompts with the answer
    skeleton, filled from the scene registry when one is bound.
    """

    def __init__(self, scene: SyntheticScene | None = None, lexicon: ClauseLexicon | None = None):
        self.scene = scene
        self.lexicon = lexicon or ClauseLexicon.default()

    def chat(self, image: RasterImage | None, prompt: str) -> str:
        if _DECOMPOSITION_MARKER in prompt:
            return self._decompose_reply(prompt)
        wants_localization = _LOCALIZATION_MARKER in prompt
        wants_description = _DESCRIPTION_MARKER in prompt
        if wants_localization or wants_description:
            return self._reason_reply(prompt, wants_localization, wants_description)
        return "Understood."

    def _decompose_reply(self, prompt: str) -> str:
        m = _INSTRUCTION_RE.search(prompt)
        if not m:
            return "There is no instruction to parse."
        instruction = m.group(1).strip()
        clauses = split_clauses(EditInstruction(instruction), self.lexicon)
        return "\n".join(f"({i}) {c}." for i, c in enumerate(clauses, start=1))

    def _extract_subprompt(self, prompt: str) -> str | None:
        m = _SUBPROMPT_RE.search(prompt)
        if m:
            return m.group(1).strip()
        tail = _TRAILING_KEY_RE.findall(prompt)
        return tail[-1].strip() if tail else None

    def _reason_reply(self, prompt: str, wants_localization: bool, wants_description: bool) -> str:
        clause = self._extract_subprompt(prompt) or "the indicated edit"
        try:
            sp = classify_clause(clause, self.lexicon)
        except ClassificationError:
            sp = None

        reasoning = self._reasoning_text(clause, sp)
        parts = []
        if wants_localization or wants_description:
            parts.append(f"- Reasoning and locating the regions:\n{reasoning}")
        if wants_description:
            area = self._area_text(clause, sp)
            reprompt = self._reprompt_text(clause, sp)
            parts.append(f"- Area description:\n{area}")
            parts.append(f"The inpainting prompt is {reprompt}.")
        return "\n".join(parts)

    def _reasoning_text(self, clause: str, sp) -> str:
        if sp is None:
            return f"To {clause}, we need to locate the affected area in the image."
        where = self._located_phrase(sp)
        if sp.kind is EditOpKind.ADD and sp.anchor_ref:
            return (
                f"To {clause}, we need to locate {sp.anchor_ref} in the image{where} "
                f"and use the open space directly above it."
            )
        if sp.kind is EditOpKind.CHANGE_BACKGROUND:
            return f"To {clause}, we need everything that is not a foreground object."
        return f"To {clause}, we need to locate {sp.target_ref} in the image{where}."

    def _located_phrase(self, sp) -> str:
        if self.scene is None:
            return ""
        ref = sp.anchor_ref if (sp.kind is EditOpKind.ADD and sp.anchor_ref) else sp.target_ref
        m = re.search(r"\bthe\s+(\w+)\s+(\w+)\b", ref or "", re.IGNORECASE)
        if not m:
            return ""
        obj = self.scene.find(m.group(1).lower(), m.group(2).lower())
        if obj is None:
            return ""
        x0, y0, x1, y1 = obj.bbox
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        horiz = "left" if cx < self.scene.image.width / 2 else "right"
        vert = "upper" if cy < self.scene.image.height / 2 else "lower"
        return f", in the {vert} {horiz} part"

    def _area_text(self, clause: str, sp) -> str:
        if sp is None:
            return f"The area indicated by: {clause}."
        if sp.kind is EditOpKind.ADD:
            if sp.anchor_ref:
                return f"The target area is on {sp.anchor_ref}."
            return f"The target area is an open background region for {sp.target_ref}."
        if sp.kind is EditOpKind.CHANGE_BACKGROUND:
            return "The target area is the background."
        return f"The target area is {sp.target_ref}."

    def _reprompt_text(self, clause: str, sp) -> str:
        if sp is None:
            return clause
        if sp.kind is EditOpKind.ADD:
            return f"{sp.target_ref} on {sp.anchor_ref}" if sp.anchor_ref else sp.target_ref
        if sp.kind is EditOpKind.REMOVE:
            return "the background, seamlessly continuing the surrounding area"
        if sp.kind is EditOpKind.CHANGE_OBJECT:
            new = extract_new_value(sp.raw_clause)
            return f"{new} in place of {sp.target_ref}" if new else f"a replacement for {sp.target_ref}"
        if sp.kind is EditOpKind.CHANGE_BACKGROUND:
            new = extract_new_value(sp.raw_clause)
            return f"a new background: {new}" if new else "a new background behind the foreground"
        new = extract_new_value(sp.raw_clause)
        if new is None:
            words = sp.raw_clause.rstrip(".").split()
            new = words[-1] if words else "changed"
        return f"{sp.target_ref}, now {new}"


_colors_alt = "|".join(PALETTE)
_shapes_alt = "|".join(SHAPES)
_SCENE_REF_RE = re.compile(
    rf"\b(?:on\s+)?the\s+(?:(?:{_colors_alt})\s+(?:{_shapes_alt})|background)\b",
    re.IGNORECASE,
)


class OracleSegmentation:
    """Registry-exact localization for synthetic scenes.

    Scans the dialogue for controlled-grammar references ("the red
    square", "on the blue circle", "the background") and answers each
    with the scene's exact mask, one [SEG] per reference in text order.
    """

    def __init__(self, scene: SyntheticScene):
        self.scene = scene

    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]:
        refs = [m.group(0) for m in _SCENE_REF_RE.finditer(dialogue)]
        if not refs:
            raise LocalizationError(dialogue[:80], "no region reference found in dialogue")
        masks = [oracle_localize(self.scene, ref) for ref in refs]
        blocks = [
            f"({i}) - Reasoning and locating the regions:\nLocated {ref}. [SEG] "
            f"The inpainting prompt is content for {ref}."
            for i, ref in enumerate(refs, start=1)
        ]
        return "\n".join(blocks), masks


class HashRectSegmentation:
    """Sceneless fallback: a deterministic rectangle derived from the dialogue.

    Exists so the service and CLI can run mock-backed on arbitrary
    uploaded images, where no registry is available.
    """

    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]:
        d = hashlib.sha256(dialogue.encode("utf-8")).digest()
        w, h = image.width, image.height
        rw = max(1, (d[0] % max(1, w // 2)) + w // 8)
        rh = max(1, (d[1] % max(1, h // 2)) + h // 8)
        x0 = d[2] % max(1, w - rw)
        y0 = d[3] % max(1, h - rh)
        bits = np.zeros((h, w), dtype=bool)
        bits[y0 : y0 + rh, x0 : x0 + rw] = True
        reply = (
            "(1) - Reasoning and locating the regions:\nSelected a candidate region. "
            "[SEG] The inpainting prompt is content for the selected region."
        )
        return reply, [BinaryMask(bits)]


class ColorMatchSegmentation:
    """Masks the pixels that exactly match a palette color named in the dialogue.

    Image-sensitive by design: a region only exists if the current
    canvas actually contains that color, which makes step ordering
    observable in tests.
    """

    def segment(self, image: RasterImage, dialogue: str) -> tuple[str, list[BinaryMask]]:
        m = re.search(rf"\b({_colors_alt})\b", dialogue, re.IGNORECASE)
        if not m:
            raise LocalizationError(dialogue[:80], "no palette color named")
        color = PALETTE[m.group(1).lower()]
        bits = (image.pixels == np.array(color, dtype=np.uint8)).all(axis=2)
        reply = (
            "(1) - Reasoning and locating the regions:\nMatched the named color. "
            f"[SEG] The inpainting prompt is content for the {m.group(1)} region."
        )
        return reply, [BinaryMask(bits)]


class CompositorInpaint:
    """Fills the masked region with a stable 24-bit digest of the prompt.

    Pixels outside the mask are bit-identical to the input, which turns
    the fidelity invariant into an exactly checkable property.
    """

    def inpaint(self, image: RasterImage, mask: BinaryMask, prompt: str) -> RasterImage:
        if mask.size != image.size:
            raise ShapeError(f"mask {mask.size} does not match image {image.size}")
        out = image.pixels.copy()
        out[mask.bits] = _digest_color(prompt)
        return RasterImage(out)


class ColorFillInpaint:
    """Fills the masked region with the first palette color named in the prompt."""

    def inpaint(self, image: RasterImage, mask: BinaryMask, prompt: str) -> RasterImage:
        if mask.size != image.size:
            raise ShapeError(f"mask {mask.size} does not match image {image.size}")
        m = re.search(rf"\b({_colors_alt})\b", prompt, re.IGNORECASE)
        fill = PALETTE[m.group(1).lower()] if m else _digest_color(prompt)
        out = image.pixels.copy()
        out[mask.bits] = fill
        return RasterImage(out)


class MeanPoolEmbedding:
    """Images embed as a normalized grid of mean-pooled RGB blocks; text
    embeds as a digest-seeded unit vector of the same dimensionality."""

    def __init__(self, grid: int = 8):
        self.grid = grid

    @property
    def dim(self) -> int:
        return self.grid * self.grid * 3

    def embed_image(self, image: RasterImage) -> list[float]:
        px = image.pixels.astype(np.float64)
        rows = np.array_split(px, self.grid, axis=0)
        pooled = np.array([[cell.mean(axis=(0, 1)) for cell in np.array_split(r, self.grid, axis=1)] for r in rows])
        vec = pooled.reshape(-1)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # blank-black image: fall back to a fixed unit direction
            vec = np.zeros(self.dim)
            vec[0] = 1.0
            return vec.tolist()
        return (vec / norm).tolist()

    def embed_text(self, text: str) -> list[float]:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).tolist()


class ColorHistogramEmbedding:
    """Palette-color histograms for images and color-word counts for text.

    The shared dimensionality is len(palette) + 1; the extra bin absorbs
    non-color words so any nonempty text embeds with nonzero norm.
    """

    def __init__(self):
        self.names = list(PALETTE)
        self.rgb = np.array([PALETTE[n] for n in self.names], dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.names) + 1

    def embed_image(self, image: RasterImage) -> list[float]:
        px = image.pixels.reshape(-1, 3).astype(np.float64)
        dists = ((px[:, None, :] - self.rgb[None, :, :]) ** 2).sum(axis=2)
        nearest = dists.argmin(axis=1)
        hist = np.bincount(nearest, minlength=len(self.names)).astype(np.float64)
        vec = np.concatenate([hist, [0.0]])
        return (vec / np.linalg.norm(vec)).tolist()

    def embed_text(self, text: str) -> list[float]:
        words = re.findall(r"[a-z]+", text.lower())
        hist = np.zeros(len(self.names))
        other = 0.0
        for w in words:
            if w in PALETTE:
                hist[self.names.index(w)] += 1.0
            else:
                other += 1.0
        vec = np.concatenate([hist, [other if (hist.sum() or other) else 1.0]])
        return (vec / np.linalg.norm(vec)).tolist()


class FixedJudge:
    """Returns a constant per criterion, verbatim and unclamped.

    Deliberately does no range checking: callers own clamping, and tests
    use out-of-range constants to exercise it.
    """

    def __init__(self, scores: int | dict[JudgeCriterion, int]):
        self.scores = scores

    def score(self, source, edited, instruction, criterion: JudgeCriterion) -> int:
        if isinstance(self.scores, dict):
            return self.scores[criterion]
        return self.scores
