"""Instruction templates and structured-output parsing.

The four instruction templates ship as plain-text files under
``idealoop/prompts/``. Those files are the contract: rendering only
substitutes slot markers, so the surrounding prose reaches the multimodal
model byte-for-byte. Slots holding images split the rendered output into
interleaved text/image parts.

Model replies wrap each payload span in ``<START>``/``<END>`` markers;
the parsers here extract spans and never raise anything outside the
:class:`ParseError` family for malformed input.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

from .core import (
    DraftImage,
    FeedbackNote,
    Idea,
    ImageAsset,
    MemoryRecord,
    PromptCandidate,
    SegmentKind,
)

logger = logging.getLogger(__name__)

MARKER_START = "<START>"
MARKER_END = "<END>"

# Only these names are treated as slots; any other {braced} text in a
# template is literal.
_SLOT_RE = re.compile(r"\{(IDEA|N-1|N|t|history|prompt|image|images|reflection)\}")

DEFAULT_MAX_OUTPUT_TOKENS = 1024


class TemplateError(Exception):
    """Rendering failed: unknown template, missing slot value, bad inputs."""


class ParseError(Exception):
    """Base class for structured-output parse failures."""


class TooFewSpans(ParseError):
    """Fewer complete marker-wrapped spans than expected."""


class EmptySpan(ParseError):
    """A required span trimmed to the empty string."""


class NotAnInteger(ParseError):
    """A selection span did not hold a base-10 integer."""


class IndexOutOfRange(ParseError):
    """A selection index fell outside the draft list."""


class PartKind(str, Enum):
    TEXT = "text"
    IMAGE = "image"


@dataclass(frozen=True)
class LmmMessagePart:
    text: str | None = None
    image: ImageAsset | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.image is None):
            raise TemplateError("message part must hold exactly one of text or image")

    @property
    def kind(self) -> PartKind:
        return PartKind.TEXT if self.text is not None else PartKind.IMAGE


def text_part(text: str) -> LmmMessagePart:
    return LmmMessagePart(text=text)


def image_part(image: ImageAsset) -> LmmMessagePart:
    return LmmMessagePart(image=image)


class RequestPurpose(str, Enum):
    GENERATE = "generate"
    SELECT = "select"
    FEEDBACK = "feedback"
    REVISE = "revise"


# Candidate-producing requests sample; judging requests are greedy.
_TEMPERATURES = {
    RequestPurpose.GENERATE: 1.0,
    RequestPurpose.REVISE: 1.0,
    RequestPurpose.SELECT: 0.0,
    RequestPurpose.FEEDBACK: 0.0,
}


@dataclass(frozen=True)
class LmmRequest:
    """A fully rendered multimodal request, ready for any LMM client."""

    parts: tuple[LmmMessagePart, ...]
    purpose: RequestPurpose
    temperature: float
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if not self.parts:
            raise TemplateError("request must have at least one part")

    @property
    def text(self) -> str:
        """All text parts concatenated; used by assertions and logging."""
        return "".join(p.text for p in self.parts if p.text is not None)

    @property
    def images(self) -> tuple[ImageAsset, ...]:
        return tuple(p.image for p in self.parts if p.image is not None)


@dataclass(frozen=True)
class TemplateSet:
    """The four instruction templates, loaded once and reused."""

    generate: str
    select: str
    feedback: str
    revise: str

    @classmethod
    def load(cls, directory: Path | str | None = None) -> "TemplateSet":
        """Load templates from ``directory``, or the packaged defaults."""
        names = ("generate", "select", "feedback", "revise")
        texts = {}
        for name in names:
            if directory is not None:
                path = Path(directory) / f"{name}.txt"
                if not path.is_file():
                    raise TemplateError(f"template file not found: {path}")
                texts[name] = path.read_text(encoding="utf-8")
            else:
                ref = resources.files("idealoop").joinpath(f"prompts/{name}.txt")
                texts[name] = ref.read_text(encoding="utf-8")
        return cls(**texts)


SlotValue = Union[str, Sequence[LmmMessagePart]]


def render_template(template: str, slots: Mapping[str, SlotValue]) -> tuple[LmmMessagePart, ...]:
    """Substitute slot markers, splitting parts at image boundaries.

    String values are spliced into the surrounding text; part-sequence
    values contribute their text inline and break out image parts.
    Adjacent text is always merged, so a template with no image content
    renders to exactly one text part.
    """
    parts: list[LmmMessagePart] = []
    buffer: list[str] = []

    def flush() -> None:
        if buffer:
            parts.append(text_part("".join(buffer)))
            buffer.clear()

    pos = 0
    for match in _SLOT_RE.finditer(template):
        buffer.append(template[pos : match.start()])
        name = match.group(1)
        if name not in slots:
            raise TemplateError(f"no value provided for slot {{{name}}}")
        value = slots[name]
        if isinstance(value, str):
            buffer.append(value)
        else:
            for part in value:
                if part.kind is PartKind.TEXT:
                    buffer.append(part.text or "")
                else:
                    flush()
                    parts.append(part)
        pos = match.end()
    buffer.append(template[pos:])
    flush()
    return tuple(parts)


def idea_slot(idea: Idea) -> list[LmmMessagePart]:
    """Expand an idea into parts, joining adjacent text segments with a space."""
    parts: list[LmmMessagePart] = []
    previous_text = False
    for segment in idea.segments:
        if segment.kind is SegmentKind.TEXT:
            assert segment.text is not None
            joined = (" " if previous_text else "") + segment.text
            parts.append(text_part(joined))
            previous_text = True
        else:
            assert segment.image is not None
            parts.append(image_part(segment.image))
            previous_text = False
    return parts


def _round_block(round_no: int, prompt: PromptCandidate, draft: DraftImage) -> list[LmmMessagePart]:
    return [
        text_part(f"Round {round_no} prompt: {prompt.text}\nRound {round_no} image:\n"),
        image_part(draft.image),
    ]


def history_slot(
    memory: Sequence[MemoryRecord],
    current: tuple[PromptCandidate, DraftImage] | None = None,
) -> list[LmmMessagePart]:
    """Expand loop memory (optionally plus the in-review pair) into parts.

    Rounds display 1-based. An empty memory renders the explicit
    ``(none)`` marker so the model sees that history was consulted.
    """
    parts: list[LmmMessagePart] = []
    if not memory:
        parts.append(text_part("(none)"))
    for i, record in enumerate(memory):
        round_no = record.iteration + 1
        if i > 0:
            parts.append(text_part("\n"))
        parts.extend(_round_block(round_no, record.selected_prompt, record.selected_image))
        parts.append(text_part(f"\nRound {round_no} feedback: {record.feedback.text}"))
    if current is not None:
        prompt, draft = current
        parts.append(text_part("\n"))
        parts.extend(_round_block(draft.iteration + 1, prompt, draft))
    return parts


def render_generate(idea: Idea, n: int, templates: TemplateSet) -> LmmRequest:
    """Initial prompt-candidate request: the idea plus the candidate count."""
    if n < 1:
        raise TemplateError("candidate count must be >= 1")
    parts = render_template(templates.generate, {"IDEA": idea_slot(idea), "N": str(n)})
    return LmmRequest(
        parts=parts,
        purpose=RequestPurpose.GENERATE,
        temperature=_TEMPERATURES[RequestPurpose.GENERATE],
    )


def render_select(idea: Idea, drafts: Sequence[DraftImage], templates: TemplateSet) -> LmmRequest:
    """Draft-ranking request over all drafts of one iteration, in index order."""
    if not drafts:
        raise TemplateError("selection requires at least one draft")
    iterations = {d.iteration for d in drafts}
    if len(iterations) != 1:
        raise TemplateError(f"selection drafts span iterations {sorted(iterations)}")
    n = len(drafts)
    parts = render_template(
        templates.select,
        {
            "IDEA": idea_slot(idea),
            "N": str(n),
            "N-1": str(n - 1),
            "images": [image_part(d.image) for d in drafts],
        },
    )
    return LmmRequest(
        parts=parts,
        purpose=RequestPurpose.SELECT,
        temperature=_TEMPERATURES[RequestPurpose.SELECT],
    )


def render_feedback(
    idea: Idea,
    selected_prompt: PromptCandidate,
    selected_draft: DraftImage,
    memory: Sequence[MemoryRecord],
    t: int,
    templates: TemplateSet,
) -> LmmRequest:
    """Feedback request on iteration ``t``'s selected prompt/image pair."""
    if t < 0:
        raise TemplateError("iteration must be >= 0")
    if any(record.iteration >= t for record in memory):
        raise TemplateError("memory must only hold iterations before the current one")
    if selected_draft.iteration != t or selected_prompt.iteration != t:
        raise TemplateError("selected pair must belong to the current iteration")
    parts = render_template(
        templates.feedback,
        {
            "IDEA": idea_slot(idea),
            "t": str(t + 1),
            "history": history_slot(memory, current=(selected_prompt, selected_draft)),
        },
    )
    return LmmRequest(
        parts=parts,
        purpose=RequestPurpose.FEEDBACK,
        temperature=_TEMPERATURES[RequestPurpose.FEEDBACK],
    )


def render_revise(
    idea: Idea,
    memory: Sequence[MemoryRecord],
    t: int,
    selected_prompt: PromptCandidate,
    selected_draft: DraftImage,
    reflection: FeedbackNote,
    n: int,
    templates: TemplateSet,
) -> LmmRequest:
    """Revised-candidate request after feedback on iteration ``t``.

    ``memory`` holds iterations before ``t``; the pair under revision and
    its feedback ride in dedicated slots.
    """
    if n < 1:
        raise TemplateError("candidate count must be >= 1")
    if reflection.iteration != t:
        raise TemplateError(
            f"reflection is for iteration {reflection.iteration}, expected {t}"
        )
    if any(record.iteration >= t for record in memory):
        raise TemplateError("memory must only hold iterations before the current one")
    parts = render_template(
        templates.revise,
        {
            "IDEA": idea_slot(idea),
            "t": str(t + 1),
            "history": history_slot(memory),
            "prompt": selected_prompt.text,
            "image": [image_part(selected_draft.image)],
            "reflection": reflection.text,
            "N": str(n),
        },
    )
    return LmmRequest(
        parts=parts,
        purpose=RequestPurpose.REVISE,
        temperature=_TEMPERATURES[RequestPurpose.REVISE],
    )


def _iter_spans(raw: str) -> list[str]:
    spans = []
    pos = 0
    while True:
        start = raw.find(MARKER_START, pos)
        if start < 0:
            return spans
        end = raw.find(MARKER_END, start + len(MARKER_START))
        if end < 0:
            return spans
        spans.append(raw[start + len(MARKER_START) : end])
        pos = end + len(MARKER_END)


def parse_wrapped(raw: str, expected: int) -> list[str]:
    """Extract the first ``expected`` marker-wrapped spans, trimmed.

    Surplus spans are dropped (and logged); a shortfall or an empty
    required span raises the matching ParseError subclass.
    """
    if expected < 1:
        raise ValueError("expected span count must be >= 1")
    if not isinstance(raw, str):
        raise TooFewSpans(f"expected text, got {type(raw).__name__}")
    spans = _iter_spans(raw)
    if len(spans) < expected:
        raise TooFewSpans(f"found {len(spans)} complete spans, expected {expected}")
    if len(spans) > expected:
        logger.info("dropping %d surplus spans beyond the %d expected", len(spans) - expected, expected)
    trimmed = [s.strip() for s in spans[:expected]]
    for i, span in enumerate(trimmed):
        if not span:
            raise EmptySpan(f"span {i} is empty after trimming")
    return trimmed


_INT_RE = re.compile(r"[+-]?[0-9]+")


def parse_selection(raw: str, n: int) -> int:
    """Extract a single wrapped index and range-check it against ``n`` drafts."""
    if n < 1:
        raise ValueError("draft count must be >= 1")
    span = parse_wrapped(raw, 1)[0]
    if not _INT_RE.fullmatch(span):
        raise NotAnInteger(f"selection span {span!r} is not a base-10 integer")
    index = int(span)
    if not 0 <= index < n:
        raise IndexOutOfRange(f"selection index {index} outside 0..{n - 1}")
    return index
