"""Template rendering and reply parsing for every agent call.

Templates live in ``assets/templates`` as plain text with ``{slot}`` markers;
rendering is a single left-to-right substitution so a slot value that happens
to contain ``{slot}`` text is never expanded again.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import cache
from importlib import resources
from typing import Any, Mapping, Sequence

from ideadialog.core import SECTION_ORDER, SECTION_TITLES, Persona, Section


class PromptKind(str, enum.Enum):
    IDEATION = "ideation"
    CRITIQUE = "critique"
    REVISE = "revise"
    EXPANSION = "expansion"
    JUDGE = "judge"


class PromptError(Exception):
    pass


class MissingSlot(PromptError):
    def __init__(self, slot: str, kind: PromptKind):
        super().__init__(f"{kind.value} template needs slot {slot!r}")
        self.slot = slot


class ParseError(PromptError):
    pass


class UnparseableReply(ParseError):
    pass


class WrongCardinality(ParseError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"expected {expected} ideas, found {found}")
        self.found = found
        self.expected = expected


class DuplicateIdeaName(ParseError):
    def __init__(self, name: str):
        super().__init__(f"idea name {name!r} appears more than once")
        self.name = name


SLOT_RE = re.compile(r"\{([a-z_]+)\}")

# Slots that may be omitted; the value used when they are.
_OPTIONAL_SLOTS = {"existing_ideas": ""}


@cache
def template_text(kind: PromptKind) -> str:
    path = resources.files("ideadialog.assets").joinpath("templates", f"{kind.value}.txt")
    return path.read_text(encoding="utf-8")


@cache
def default_examples() -> str:
    return resources.files("ideadialog.assets").joinpath("templates", "examples.txt").read_text(encoding="utf-8")


def template_slots(kind: PromptKind) -> list[str]:
    seen: list[str] = []
    for m in SLOT_RE.finditer(template_text(kind)):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def render(kind: PromptKind, slots: Mapping[str, Any]) -> str:
    """Fill ``kind``'s template with ``slots``.

    ``persona_prompts`` falls back to the generalist persona text when absent
    or empty; ``existing_ideas`` falls back to the empty string. Any other
    missing slot raises :class:`MissingSlot`.
    """
    values: dict[str, str] = {}
    for name in template_slots(kind):
        if name == "persona_prompts" and not slots.get(name):
            values[name] = Persona.AI_RESEARCHER.prompt_text
        elif name in slots and slots[name] is not None:
            values[name] = str(slots[name])
        elif name in _OPTIONAL_SLOTS:
            values[name] = _OPTIONAL_SLOTS[name]
        else:
            raise MissingSlot(name, kind)
    return SLOT_RE.sub(lambda m: values[m.group(1)], template_text(kind))


# --- ideas -----------------------------------------------------------------


@dataclass(frozen=True)
class IdeaBody:
    sections: Mapping[Section, str]
    structured: bool = True

    def text(self) -> str:
        """One-paragraph rendering that :func:`split_sections` maps back to ``sections``."""
        if not self.structured:
            return self.sections[Section.PROPOSED_METHOD]
        return " ".join(f"({i}) {SECTION_TITLES[s]}: {self.sections[s]}" for i, s in enumerate(SECTION_ORDER, 1))

    def to_payload(self) -> dict[str, Any]:
        return {"structured": self.structured, **{s.value: self.sections[s] for s in SECTION_ORDER}}

    @classmethod
    def from_payload(cls, d: Mapping[str, Any]) -> IdeaBody:
        return cls({s: d[s.value] for s in SECTION_ORDER}, bool(d.get("structured", True)))


_SECTION_NAMES = {
    "problem": Section.PROBLEM,
    "problem statement": Section.PROBLEM,
    "existing methods": Section.EXISTING_METHODS,
    "existing method": Section.EXISTING_METHODS,
    "motivation": Section.MOTIVATION,
    "proposed method": Section.PROPOSED_METHOD,
    "experiment plan": Section.EXPERIMENT_PLAN,
    "step-by-step experiment plan": Section.EXPERIMENT_PLAN,
}

_HEADER_RE = re.compile(
    r"(?:(?<![^\s(])\(?[1-5][.)]|^\s*#+)\s*\**\s*"
    r"(problem statement|problem|existing methods?|motivation|proposed method|(?:step-by-step )?experiment plan)"
    r"\s*\**\s*(?::|\n|$)",
    re.IGNORECASE | re.MULTILINE,
)


def split_sections(text: str) -> IdeaBody:
    """Split an idea paragraph on its numbered section headers.

    Falls back to an unstructured body (everything under ProposedMethod) when
    any section other than Existing Methods is missing or empty.
    """
    found: list[tuple[Section, int, int]] = []
    seen: set[Section] = set()
    for m in _HEADER_RE.finditer(text):
        section = _SECTION_NAMES[m.group(1).lower()]
        if section in seen:
            continue
        seen.add(section)
        found.append((section, m.start(), m.end()))
    sections = {s: "" for s in SECTION_ORDER}
    for i, (section, _, end) in enumerate(found):
        stop = found[i + 1][1] if i + 1 < len(found) else len(text)
        sections[section] = text[end:stop].strip()
    required = [s for s in SECTION_ORDER if s is not Section.EXISTING_METHODS]
    if all(sections[s] for s in required):
        return IdeaBody(sections, True)
    return IdeaBody({**{s: "" for s in SECTION_ORDER}, Section.PROPOSED_METHOD: text.strip()}, False)


def _body_from_mapping(value: Mapping[str, Any]) -> IdeaBody:
    sections = {s: "" for s in SECTION_ORDER}
    for key, v in value.items():
        norm = re.sub(r"^[\s(]*\d*[.)]?\s*", "", str(key)).strip().replace("_", " ")
        norm = re.sub(r"(?<=[a-z])(?=[A-Z])", " ", norm)
        section = _SECTION_NAMES.get(" ".join(norm.lower().split()))
        if section is None:
            continue
        sections[section] = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False)
        sections[section] = sections[section].strip()
    required = [s for s in SECTION_ORDER if s is not Section.EXISTING_METHODS]
    if all(sections[s] for s in required):
        return IdeaBody(sections, True)
    flat = json.dumps(value, ensure_ascii=False)
    return split_sections(flat)


class _Obj(dict):
    duplicates: list[str]


def _pairs_hook(pairs: list[tuple[str, Any]]) -> _Obj:
    obj = _Obj()
    obj.duplicates = []
    for k, v in pairs:
        if k in obj:
            obj.duplicates.append(k)
        obj[k] = v
    return obj


_FENCE_RE = re.compile(r"^\s*```[\w-]*\s*$", re.MULTILINE)


def strip_fences(raw: str) -> str:
    return _FENCE_RE.sub("", raw)


def extract_json_object(raw: str) -> _Obj:
    """First JSON object in ``raw`` after removing markdown code fences."""
    text = strip_fences(raw)
    decoder = json.JSONDecoder(object_pairs_hook=_pairs_hook)
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise UnparseableReply("no JSON object found in reply")


def parse_ideas(raw: str, expected_k: int) -> dict[str, IdeaBody]:
    obj = extract_json_object(raw)
    if obj.duplicates:
        raise DuplicateIdeaName(obj.duplicates[0])
    ideas: dict[str, IdeaBody] = {}
    for key, value in obj.items():
        name = key.strip()
        if not name:
            raise UnparseableReply("idea with an empty name")
        if name in ideas:
            raise DuplicateIdeaName(name)
        if isinstance(value, Mapping):
            ideas[name] = _body_from_mapping(value)
        else:
            text = value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)
            ideas[name] = split_sections(text)
    if len(ideas) != expected_k:
        raise WrongCardinality(len(ideas), expected_k)
    return ideas


def ideas_to_json(ideas: Mapping[str, IdeaBody]) -> str:
    """Serialization used for the ``current_ideas_json_str`` slot."""
    return json.dumps({name: body.text() for name, body in ideas.items()}, indent=2, ensure_ascii=False)


def reask_suffix(error: ParseError, expected_k: int) -> str:
    return (
        f"\n\nYour previous reply could not be used ({error}). Reply again with exactly {expected_k} ideas, "
        "output as a single JSON dictionary that maps each short idea name to its description."
    )


# --- critiques -------------------------------------------------------------


class CritiqueCategory(str, enum.Enum):
    MISSING_DATASET_DETAIL = "MissingDatasetDetail"
    INVOLVING_HUMANS = "InvolvingHumans"
    MISSING_METRIC_DETAIL = "MissingMetricDetail"
    MISSING_PROMPT_DETAIL = "MissingPromptDetail"
    TEST_CASES = "TestCases"
    OTHER = "Other"


CATEGORY_LABELS = {
    CritiqueCategory.MISSING_DATASET_DETAIL: "missing dataset detail",
    CritiqueCategory.INVOLVING_HUMANS: "involving humans",
    CritiqueCategory.MISSING_METRIC_DETAIL: "missing metric detail",
    CritiqueCategory.MISSING_PROMPT_DETAIL: "missing prompt detail",
    CritiqueCategory.TEST_CASES: "test cases",
}

# Labels the critique template itself uses in its worked examples.
_LABEL_ALIASES = {
    "missing data preparation detail": CritiqueCategory.MISSING_DATASET_DETAIL,
    "involving human experiments": CritiqueCategory.INVOLVING_HUMANS,
    "metric is vague": CritiqueCategory.MISSING_METRIC_DETAIL,
    "prompt not specified": CritiqueCategory.MISSING_PROMPT_DETAIL,
    "missing test cases": CritiqueCategory.TEST_CASES,
}

_KEYWORDS = (
    ("test case", CritiqueCategory.TEST_CASES),
    ("human", CritiqueCategory.INVOLVING_HUMANS),
    ("metric", CritiqueCategory.MISSING_METRIC_DETAIL),
    ("prompt", CritiqueCategory.MISSING_PROMPT_DETAIL),
    ("data", CritiqueCategory.MISSING_DATASET_DETAIL),
)


def categorize(label: str) -> CritiqueCategory:
    norm = " ".join(label.lower().split())
    for cat, name in CATEGORY_LABELS.items():
        if norm == name:
            return cat
    if norm in _LABEL_ALIASES:
        return _LABEL_ALIASES[norm]
    for word, cat in _KEYWORDS:
        if word in norm:
            return cat
    return CritiqueCategory.OTHER


@dataclass(frozen=True)
class CritiqueItem:
    category: CritiqueCategory
    label: str
    quoted_sentence: str
    comment: str

    def text(self) -> str:
        parts = []
        if self.quoted_sentence:
            parts.append(f'"{self.quoted_sentence}"')
        if self.comment:
            parts.append(self.comment)
        body = " - ".join(parts)
        return f"{self.label}: {body}" if self.label else body

    def to_dict(self) -> dict[str, str]:
        return {
            "category": self.category.value,
            "label": self.label,
            "quoted_sentence": self.quoted_sentence,
            "comment": self.comment,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> CritiqueItem:
        return cls(CritiqueCategory(d["category"]), d["label"], d["quoted_sentence"], d["comment"])


@dataclass(frozen=True)
class CritiquePayload:
    items: tuple[CritiqueItem, ...]
    truncated: bool = False

    def text(self) -> str:
        return "\n".join(f"- {item.text()}" for item in self.items)

    def to_payload(self) -> dict[str, Any]:
        return {"items": [i.to_dict() for i in self.items], "truncated": self.truncated}

    @classmethod
    def from_payload(cls, d: Mapping[str, Any]) -> CritiquePayload:
        return cls(tuple(CritiqueItem.from_dict(i) for i in d["items"]), bool(d.get("truncated", False)))


MAX_CRITIQUES = 5

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_LABEL_RE = re.compile(r"^\**([A-Za-z][A-Za-z /&'-]{0,60}?)\**\s*:\**\s*(.*)$", re.DOTALL)
_QUOTE_RE = re.compile(r'"([^"]+)"|“([^”]+)”')


def _opens_with_category(line: str) -> bool:
    m = _LABEL_RE.match(line.strip())
    if not m:
        return False
    norm = " ".join(m.group(1).lower().split())
    return norm in CATEGORY_LABELS.values() or norm in _LABEL_ALIASES


def _segments(text: str) -> list[str]:
    segments: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            if current:
                segments.append(current)
                current = []
            continue
        # an item starts at a bullet or at a line opening with a category name
        if _BULLET_RE.match(line) or _opens_with_category(line):
            if current:
                segments.append(current)
            current = [_BULLET_RE.sub("", line, count=1)]
        else:
            current.append(line.strip())
    if current:
        segments.append(current)
    return [" ".join(" ".join(s).split()) for s in segments]


def _is_preamble(segment: str) -> bool:
    return segment.endswith(":") and not _QUOTE_RE.search(segment) and len(segment) < 200


def _parse_item(segment: str) -> CritiqueItem:
    label, rest = "", segment
    m = _LABEL_RE.match(segment)
    if m:
        label, rest = m.group(1).strip(), m.group(2).strip()
    quote, comment = "", rest
    q = _QUOTE_RE.search(rest)
    if q and q.start() == 0:
        quote = (q.group(1) or q.group(2)).strip()
        comment = rest[q.end() :].lstrip(" -–—:").strip()
    category = categorize(label) if label else CritiqueCategory.OTHER
    return CritiqueItem(category, label, quote, comment)


def parse_critique(raw: str) -> CritiquePayload:
    if not raw or not raw.strip():
        raise UnparseableReply("empty critique reply")
    segments = [s for s in _segments(strip_fences(raw)) if s]
    kept = [s for s in segments if not _is_preamble(s)]
    if not kept:
        kept = [" ".join(segments)] if segments else [" ".join(raw.split())]
    items = [_parse_item(s) for s in kept]
    truncated = len(items) > MAX_CRITIQUES
    return CritiquePayload(tuple(items[:MAX_CRITIQUES]), truncated)


def aggregate_critiques(payloads: Sequence[CritiquePayload], personas: Sequence[Persona]) -> str:
    """Join critiques under ``Reviewer i (<persona>):`` headers, in input order."""
    if len(payloads) != len(personas) or not payloads:
        raise ValueError(f"need one persona per critique and at least one critique ({len(payloads)} vs {len(personas)})")
    blocks = []
    for i, (payload, persona) in enumerate(zip(payloads, personas), 1):
        if not payload.items:
            raise ValueError(f"critique {i} has no items")
        blocks.append(f"Reviewer {i} ({persona.value}):\n{payload.text()}")
    return "\n\n".join(blocks)
