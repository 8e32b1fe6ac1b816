"""Instruction decomposition: complex instruction -> single-operation sub-prompts.

Two decomposers share one clause classifier: a deterministic coordinator
grammar (offline default, and the oracle the LLM path is checked
against) and an MLLM-backed decomposer that parses the model's numbered
list and classifies each item with the same grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core.types import EditInstruction, EditOpKind, SubPrompt
from .errors import ClassificationError, DecompositionParseError, TruncationError
from .templates import TemplateName, render_template

# Shipped lexicon; same line format as external lexicon files.
DEFAULT_LEXICON_TEXT = """\
# editing verbs: verb<TAB>KIND
add\tADD
put\tADD
place\tADD
insert\tADD
draw\tADD
remove\tREMOVE
erase\tREMOVE
delete\tREMOVE
replace\tCHANGE_OBJECT
swap\tCHANGE_OBJECT
substitute\tCHANGE_OBJECT
turn\tCHANGE_ATTRIBUTE
make\tCHANGE_ATTRIBUTE
recolor\tCHANGE_ATTRIBUTE
transform\tCHANGE_ATTRIBUTE
change\tCHANGE_ATTRIBUTE
paint\tCHANGE_ATTRIBUTE

[coordinators]
and
also
then
plus
"""

_LOCATIVE_PREPS = ("next to", "on top of", "onto", "on", "in", "at", "near", "above", "beside", "to")
_NEW_VALUE_SPLITS = (" into ", " to ", " with ", " for ", " by ")
_WEAK_TAIL_WORDS = {"a", "an", "the", "of", "on", "in", "at", "to", "with", "and", "is", "this", "that"}
# words that may open a noun-phrase conjunct eligible for verb distribution
_NP_LEADS = {
    "a", "an", "the", "one", "two", "three", "some", "another", "more",
    "his", "her", "their", "its", "this", "that", "these", "those",
}


@dataclass(frozen=True)
class ClauseLexicon:
    """Verb-to-operation map plus the coordinator tokens that split clauses."""

    verbs: dict[str, EditOpKind]
    coordinators: tuple[str, ...]
    _verb_re: re.Pattern = field(init=False, repr=False, compare=False)
    _split_re: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.verbs:
            raise ValueError("lexicon has no verbs")
        verb_alt = "|".join(re.escape(v) for v in sorted(self.verbs, key=len, reverse=True))
        object.__setattr__(self, "_verb_re", re.compile(rf"\b({verb_alt})\b", re.IGNORECASE))
        coords = [c.lower() for c in self.coordinators]
        compounds = [f"and\\s+{re.escape(c)}" for c in coords if c != "and"] if "and" in coords else []
        singles = sorted((re.escape(c) for c in coords), key=len, reverse=True)
        alt = "|".join(compounds + singles)
        object.__setattr__(self, "_split_re", re.compile(rf"\s*,?\s+(?:{alt})\s+", re.IGNORECASE))

    @classmethod
    def parse(cls, text: str) -> "ClauseLexicon":
        verbs: dict[str, EditOpKind] = {}
        coordinators: list[str] = []
        section = "verbs"
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                continue
            if section == "coordinators":
                coordinators.append(line.lower())
                continue
            if "\t" not in line:
                raise ValueError(f"lexicon line {lineno}: expected verb<TAB>KIND, got {line!r}")
            verb, kind_name = line.split("\t", 1)
            verb, kind_name = verb.strip().lower(), kind_name.strip()
            try:
                kind = EditOpKind[kind_name]
            except KeyError:
                raise ValueError(f"lexicon line {lineno}: unknown kind {kind_name!r}") from None
            if verbs.get(verb, kind) is not kind:
                raise ValueError(f"lexicon line {lineno}: verb {verb!r} mapped to two kinds")
            verbs[verb] = kind
        if not coordinators:
            raise ValueError("lexicon has no coordinators section")
        return cls(verbs=verbs, coordinators=tuple(coordinators))

    @classmethod
    def default(cls) -> "ClauseLexicon":
        return cls.parse(DEFAULT_LEXICON_TEXT)

    @classmethod
    def load(cls, path) -> "ClauseLexicon":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def first_verb(self, clause: str) -> tuple[str, EditOpKind] | None:
        m = self._verb_re.search(clause)
        if m is None:
            return None
        verb = m.group(1).lower()
        return verb, self.verbs[verb]


def split_clauses(instruction: EditInstruction, lexicon: ClauseLexicon | None = None) -> list[str]:
    """Split an instruction on coordinators, distributing shared verbs.

    "add A and B" yields ["add A", "add B"]: a conjunct with no editing
    verb of its own borrows the verb of the nearest conjunct to its left.
    """
    lexicon = lexicon or ClauseLexicon.default()
    text = instruction.text.strip().rstrip(".;")
    parts = [p.strip().rstrip(".;").strip() for p in lexicon._split_re.split(text)]
    parts = [p for p in parts if p]
    clauses: list[str] = []
    carried_verb: str | None = None
    for part in parts:
        hit = lexicon.first_verb(part)
        if hit is not None:
            carried_verb = hit[0]
        elif carried_verb is not None and part.split()[0].lower() in _NP_LEADS:
            part = f"{carried_verb} {part}"
        clauses.append(part)
    return clauses


def classify_clause(clause: str, lexicon: ClauseLexicon | None = None) -> SubPrompt:
    """Map one clause to a single-operation SubPrompt.

    The kind comes from the leftmost lexicon verb. Target extraction is
    positional: the phrase after the verb, minus an ADD placement phrase
    ("on/in/at ..."), a CHANGE replacement ("into/to/with ..."), or a
    trailing attribute word for turn/make-style clauses. A change-family
    clause whose target is the background becomes CHANGE_BACKGROUND.
    """
    lexicon = lexicon or ClauseLexicon.default()
    clause = clause.strip()
    if not clause:
        raise ClassificationError(clause, "empty clause")
    hit = lexicon.first_verb(clause)
    if hit is None:
        raise ClassificationError(clause)
    verb, kind = hit
    m = re.search(rf"\b{re.escape(verb)}\b", clause, re.IGNORECASE)
    rest = clause[m.end() :].strip().rstrip(".").strip()
    if not rest:
        raise ClassificationError(clause, f"nothing follows the verb {verb!r}")

    anchor: str | None = None
    target = rest
    if kind is EditOpKind.ADD:
        target, anchor = _split_placement(rest)
    elif kind in (EditOpKind.CHANGE_OBJECT, EditOpKind.CHANGE_ATTRIBUTE):
        target = _strip_new_value(rest, kind)
        if re.search(r"\bbackground\b", target, re.IGNORECASE):
            kind = EditOpKind.CHANGE_BACKGROUND

    if not target.strip():
        raise ClassificationError(clause, "no target phrase")
    return SubPrompt(kind=kind, target_ref=target, anchor_ref=anchor, raw_clause=clause)


def extract_new_value(clause: str) -> str | None:
    """Phrase after into/to/with/for/by: the post-edit content of a CHANGE clause."""
    low = clause.lower()
    for splitter in _NEW_VALUE_SPLITS:
        pos = low.find(splitter)
        if pos > 0:
            value = clause[pos + len(splitter) :].strip().rstrip(".").strip()
            if value:
                return value
    return None


def _split_placement(rest: str) -> tuple[str, str | None]:
    # earliest locative wins; longer prepositions beat their prefixes
    best: tuple[int, int, re.Match] | None = None
    for prep in _LOCATIVE_PREPS:
        m = re.search(rf"\s\b{re.escape(prep)}\b\s", rest, re.IGNORECASE)
        if m and rest[: m.start()].strip():
            key = (m.start(), -len(prep), m)
            if best is None or key[:2] < best[:2]:
                best = key
    if best is None:
        return rest, None
    m = best[2]
    return rest[: m.start()].strip(), rest[m.end() :].strip() or None


def _strip_new_value(rest: str, kind: EditOpKind) -> str:
    low = rest.lower()
    for splitter in _NEW_VALUE_SPLITS:
        pos = low.find(splitter)
        if pos > 0:
            return rest[:pos].strip()
    if kind is EditOpKind.CHANGE_ATTRIBUTE:
        # "turn X red" style: the final word is the attribute value
        words = rest.split()
        if len(words) >= 3 and words[-2].lower() not in _WEAK_TAIL_WORDS:
            return " ".join(words[:-1])
    return rest


def decompose_grammar(
    instruction: EditInstruction,
    lexicon: ClauseLexicon | None = None,
    max_subprompts: int | None = None,
) -> list[SubPrompt]:
    """Deterministic decomposition: split then classify, order preserved."""
    lexicon = lexicon or ClauseLexicon.default()
    clauses = split_clauses(instruction, lexicon)
    if max_subprompts is not None and len(clauses) > max_subprompts:
        raise TruncationError(f"instruction decomposes to {len(clauses)} sub-prompts, cap is {max_subprompts}")
    out: list[SubPrompt] = []
    for i, clause in enumerate(clauses):
        try:
            out.append(classify_clause(clause, lexicon))
        except ClassificationError as exc:
            raise ClassificationError(clause, f"clause {i + 1}: {exc}") from exc
    return out


_ITEM_LINE_RE = re.compile(r"^\s*(?:\(\d+\)|\d+[.)]|[-*•])\s+(.*\S)\s*$")
_ITEM_INLINE_RE = re.compile(r"\(\d+\)\s*")


def parse_listing(reply: str) -> list[str]:
    """Extract items from a numbered or bulleted model reply.

    Handles both one-item-per-line lists and inline "(1) ... (2) ..."
    enumerations on a single line.
    """
    if len(_ITEM_INLINE_RE.findall(reply)) >= 2:
        chunks = _ITEM_INLINE_RE.split(reply)
        items = [c.strip() for c in chunks[1:] if c.strip()]
    else:
        items = [m.group(1) for line in reply.splitlines() if (m := _ITEM_LINE_RE.match(line))]
    items = [it.strip().rstrip(".").strip() for it in items]
    items = [it for it in items if it]
    if not items:
        raise DecompositionParseError(f"reply contains no recognizable list: {reply[:120]!r}")
    return items


def decompose_llm(
    instruction: EditInstruction,
    backend,
    image=None,
    lexicon: ClauseLexicon | None = None,
    max_subprompts: int | None = None,
) -> list[SubPrompt]:
    """MLLM-backed decomposition; clause kinds come from the grammar classifier.

    A clause the grammar cannot classify keeps its text but falls back to
    CHANGE_OBJECT with a warning, since CHANGE has the most permissive
    localization semantics.
    """
    lexicon = lexicon or ClauseLexicon.default()
    rendered = render_template(TemplateName.DECOMPOSITION, {"prompt": instruction.text})
    reply = backend.chat(image, rendered)
    clauses = parse_listing(reply)
    if max_subprompts is not None and len(clauses) > max_subprompts:
        raise TruncationError(f"backend produced {len(clauses)} sub-prompts, cap is {max_subprompts}")
    out: list[SubPrompt] = []
    for clause in clauses:
        try:
            out.append(classify_clause(clause, lexicon))
        except ClassificationError:
            out.append(
                SubPrompt(
                    kind=EditOpKind.CHANGE_OBJECT,
                    target_ref=clause,
                    raw_clause=clause,
                    warning="unclassifiable clause; kind fell back to CHANGE_OBJECT",
                )
            )
    return out
