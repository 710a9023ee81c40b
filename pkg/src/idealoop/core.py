"""Domain types and the run state machine for the refinement loop.

Everything here is an immutable value object. A run advances by feeding
events to :func:`advance`, which returns a new :class:`RunState`; nothing
in this module talks to a backend or touches disk.
"""

from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

HASH_ALGORITHM = "sha256"

# Prompts longer than this are passed through, but logged by the engine.
PROMPT_WORD_LIMIT = 50


class CoreError(Exception):
    """Base class for domain validation errors."""


class InvalidIdeaError(CoreError):
    """The idea brief violates a structural invariant."""


class InvalidConfigError(CoreError):
    """The run configuration violates a structural invariant."""


class IllegalTransition(CoreError):
    """An event was applied in a status that does not accept it."""


def compute_digest(data: bytes) -> str:
    """Hex digest used for content addressing throughout the package."""
    return hashlib.sha256(data).hexdigest()


class MediaType(str, Enum):
    PNG = "png"
    JPEG = "jpeg"


@dataclass(frozen=True)
class ImageAsset:
    """Raw image bytes plus the digest they are addressed by.

    The digest (and the id, which defaults to it) is derived from the
    bytes, so two assets with equal content are interchangeable.
    """

    data: bytes
    media_type: MediaType = MediaType.PNG
    digest: str = ""
    id: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.data, bytes) or not self.data:
            raise InvalidIdeaError("image asset requires non-empty bytes")
        expected = compute_digest(self.data)
        if self.digest and self.digest != expected:
            raise InvalidIdeaError(
                f"asset digest mismatch: claimed {self.digest}, bytes hash to {expected}"
            )
        object.__setattr__(self, "digest", expected)
        if not self.id:
            object.__setattr__(self, "id", expected)

    def verify(self) -> bool:
        return compute_digest(self.data) == self.digest


class SegmentKind(str, Enum):
    TEXT = "text"
    IMAGE = "image"


@dataclass(frozen=True)
class IdeaSegment:
    """One ordered piece of an idea brief: either text or an image."""

    text: str | None = None
    image: ImageAsset | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.image is None):
            raise InvalidIdeaError("segment must hold exactly one of text or image")
        if self.text is not None and not self.text.strip():
            raise InvalidIdeaError("text segment must be non-empty")

    @property
    def kind(self) -> SegmentKind:
        return SegmentKind.TEXT if self.text is not None else SegmentKind.IMAGE


def text_segment(text: str) -> IdeaSegment:
    return IdeaSegment(text=text)


def image_segment(image: ImageAsset) -> IdeaSegment:
    return IdeaSegment(image=image)


@dataclass(frozen=True)
class Idea:
    """The user's multimodal brief: interleaved text and reference images."""

    segments: tuple[IdeaSegment, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise InvalidIdeaError("idea requires at least one segment")
        if not any(s.kind is SegmentKind.TEXT for s in self.segments):
            raise InvalidIdeaError("idea requires at least one text segment")

    @property
    def images(self) -> tuple[ImageAsset, ...]:
        return tuple(s.image for s in self.segments if s.image is not None)

    @property
    def first_image(self) -> ImageAsset | None:
        imgs = self.images
        return imgs[0] if imgs else None


@dataclass(frozen=True)
class PromptCandidate:
    """One generated sentence prompt, positioned within its iteration."""

    text: str
    iteration: int
    index: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidIdeaError("prompt candidate text must be non-empty")
        if self.iteration < 0 or self.index < 0:
            raise InvalidIdeaError("prompt candidate position must be non-negative")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class DraftImage:
    """An image produced for one prompt candidate.

    ``placeholder`` marks a substitute emitted when the backend failed for
    this prompt; selection still runs over the full draft list.
    """

    image: ImageAsset
    prompt_index: int
    iteration: int
    backend_id: str
    seed: int | None = None
    placeholder: bool = False

    def __post_init__(self) -> None:
        if self.prompt_index < 0 or self.iteration < 0:
            raise InvalidIdeaError("draft position must be non-negative")

    @property
    def digest(self) -> str:
        return self.image.digest


@dataclass(frozen=True)
class FeedbackNote:
    """The improvement direction extracted after one iteration."""

    text: str
    iteration: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidIdeaError("feedback text must be non-empty")
        if self.iteration < 0:
            raise InvalidIdeaError("feedback iteration must be non-negative")


@dataclass(frozen=True)
class MemoryRecord:
    """What one completed iteration contributes to later requests:

    the selected prompt, the image it produced, and the feedback on it.
    """

    selected_prompt: PromptCandidate
    selected_image: DraftImage
    feedback: FeedbackNote

    def __post_init__(self) -> None:
        its = {
            self.selected_prompt.iteration,
            self.selected_image.iteration,
            self.feedback.iteration,
        }
        if len(its) != 1:
            raise InvalidIdeaError(f"memory record mixes iterations: {sorted(its)}")

    @property
    def iteration(self) -> int:
        return self.feedback.iteration


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one run. Backends are referenced by id; wiring them to

    live clients is the caller's (or the CLI's) job.
    """

    lmm_backend: str
    generator_backend: str
    n_candidates: int = 3
    max_iterations: int = 3
    img2img_strength: float = 1.0
    seed: int | None = None
    retry_limit: int = 2
    image_width: int | None = None
    image_height: int | None = None

    def __post_init__(self) -> None:
        if self.n_candidates < 1:
            raise InvalidConfigError("n_candidates must be >= 1")
        if self.max_iterations < 1:
            raise InvalidConfigError("max_iterations must be >= 1")
        if not (0.0 < self.img2img_strength <= 1.0):
            raise InvalidConfigError("img2img_strength must be in (0, 1]")
        if self.retry_limit < 0:
            raise InvalidConfigError("retry_limit must be >= 0")
        for dim in (self.image_width, self.image_height):
            if dim is not None and dim < 1:
                raise InvalidConfigError("image dimensions must be >= 1")


class RunStatus(str, Enum):
    INITIALIZED = "initialized"
    PROMPTING = "prompting"
    GENERATING = "generating"
    SELECTING = "selecting"
    REFLECTING = "reflecting"
    FINISHED = "finished"
    FAILED = "failed"


TERMINAL_STATUSES = frozenset({RunStatus.FINISHED, RunStatus.FAILED})


@dataclass(frozen=True)
class IterationRecord:
    """Everything produced within one iteration of the loop.

    Populated progressively: prompts first, then drafts, then the
    selection, then (except on the final iteration) feedback.
    """

    t: int
    prompts: tuple[PromptCandidate, ...]
    drafts: tuple[DraftImage, ...] = ()
    selection_index: int | None = None
    degraded_selection: bool = False
    feedback: FeedbackNote | None = None

    @property
    def selected_prompt(self) -> PromptCandidate | None:
        if self.selection_index is None:
            return None
        return self.prompts[self.selection_index]

    @property
    def selected_draft(self) -> DraftImage | None:
        if self.selection_index is None:
            return None
        return self.drafts[self.selection_index]


# ---------------------------------------------------------------------------
# Events accepted by advance()
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BeginPrompting:
    pass


@dataclass(frozen=True)
class PromptsReady:
    prompts: tuple[PromptCandidate, ...]


@dataclass(frozen=True)
class DraftsReady:
    drafts: tuple[DraftImage, ...]


@dataclass(frozen=True)
class Selected:
    index: int
    degraded: bool = False
    # Set by an early-stop hook; the iteration budget is enforced regardless.
    early_stop: bool = False


@dataclass(frozen=True)
class FeedbackReady:
    note: FeedbackNote


@dataclass(frozen=True)
class Failed:
    reason: str


Event = Union[BeginPrompting, PromptsReady, DraftsReady, Selected, FeedbackReady, Failed]


@dataclass(frozen=True)
class RunState:
    """Immutable snapshot of one run.

    ``iterations`` is the source of truth; memory and the current-step
    views are derived from it so they can never disagree.
    """

    run_id: str
    idea: Idea
    config: RunConfig
    t: int
    iterations: tuple[IterationRecord, ...]
    status: RunStatus
    failure_reason: str | None = None

    @property
    def current_record(self) -> IterationRecord | None:
        """The record for the in-flight iteration, if one has started."""
        if self.iterations and self.iterations[-1].t == self.t:
            return self.iterations[-1]
        return None

    @property
    def current_prompts(self) -> tuple[PromptCandidate, ...]:
        rec = self.current_record
        return rec.prompts if rec else ()

    @property
    def current_drafts(self) -> tuple[DraftImage, ...]:
        rec = self.current_record
        return rec.drafts if rec else ()

    @property
    def current_selection(self) -> int | None:
        rec = self.current_record
        return rec.selection_index if rec else None

    @property
    def memory(self) -> tuple[MemoryRecord, ...]:
        """One record per fully completed (feedback-produced) iteration."""
        out = []
        for rec in self.iterations:
            if rec.feedback is None:
                continue
            assert rec.selection_index is not None
            out.append(
                MemoryRecord(
                    selected_prompt=rec.prompts[rec.selection_index],
                    selected_image=rec.drafts[rec.selection_index],
                    feedback=rec.feedback,
                )
            )
        return tuple(out)

    @property
    def final_image(self) -> DraftImage | None:
        if self.status is not RunStatus.FINISHED:
            return None
        return self.iterations[-1].selected_draft

    @property
    def is_terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES


def new_run(idea: Idea, config: RunConfig, run_id: str | None = None) -> RunState:
    """Validate inputs and open a run in the initialized status."""
    if not isinstance(idea, Idea):
        raise InvalidIdeaError(f"expected Idea, got {type(idea).__name__}")
    if not isinstance(config, RunConfig):
        raise InvalidConfigError(f"expected RunConfig, got {type(config).__name__}")
    return RunState(
        run_id=run_id or uuid.uuid4().hex,
        idea=idea,
        config=config,
        t=0,
        iterations=(),
        status=RunStatus.INITIALIZED,
    )


def _check_prompts(state: RunState, prompts: tuple[PromptCandidate, ...]) -> None:
    if len(prompts) != state.config.n_candidates:
        raise IllegalTransition(
            f"expected {state.config.n_candidates} prompts, got {len(prompts)}"
        )
    for i, p in enumerate(prompts):
        if p.iteration != state.t:
            raise IllegalTransition(
                f"prompt {i} tagged iteration {p.iteration}, state is at {state.t}"
            )
        if p.index != i:
            raise IllegalTransition(f"prompt at position {i} carries index {p.index}")


def _check_drafts(state: RunState, drafts: tuple[DraftImage, ...]) -> None:
    if len(drafts) != len(state.current_prompts):
        raise IllegalTransition(
            f"expected {len(state.current_prompts)} drafts, got {len(drafts)}"
        )
    for i, d in enumerate(drafts):
        if d.iteration != state.t:
            raise IllegalTransition(
                f"draft {i} tagged iteration {d.iteration}, state is at {state.t}"
            )
        if d.prompt_index != i:
            raise IllegalTransition(f"draft at position {i} maps to prompt {d.prompt_index}")


def advance(state: RunState, event: Event) -> RunState:
    """Apply one event, returning the next state.

    Raises IllegalTransition when the event is not legal in the current
    status; failures are themselves events so they land in the trajectory.
    """
    if state.is_terminal:
        raise IllegalTransition(f"run is {state.status.value}; no further events accepted")

    if isinstance(event, Failed):
        return replace(state, status=RunStatus.FAILED, failure_reason=event.reason)

    status = state.status
    if status is RunStatus.INITIALIZED and isinstance(event, BeginPrompting):
        return replace(state, status=RunStatus.PROMPTING)

    if status is RunStatus.PROMPTING and isinstance(event, PromptsReady):
        prompts = tuple(event.prompts)
        _check_prompts(state, prompts)
        record = IterationRecord(t=state.t, prompts=prompts)
        return replace(
            state,
            iterations=state.iterations + (record,),
            status=RunStatus.GENERATING,
        )

    if status is RunStatus.GENERATING and isinstance(event, DraftsReady):
        drafts = tuple(event.drafts)
        _check_drafts(state, drafts)
        record = replace(state.iterations[-1], drafts=drafts)
        return replace(
            state,
            iterations=state.iterations[:-1] + (record,),
            status=RunStatus.SELECTING,
        )

    if status is RunStatus.SELECTING and isinstance(event, Selected):
        drafts = state.current_drafts
        if not 0 <= event.index < len(drafts):
            raise IllegalTransition(
                f"selection index {event.index} outside 0..{len(drafts) - 1}"
            )
        record = replace(
            state.iterations[-1],
            selection_index=event.index,
            degraded_selection=event.degraded,
        )
        done = event.early_stop or state.t + 1 >= state.config.max_iterations
        return replace(
            state,
            iterations=state.iterations[:-1] + (record,),
            status=RunStatus.FINISHED if done else RunStatus.REFLECTING,
        )

    if status is RunStatus.REFLECTING and isinstance(event, FeedbackReady):
        if event.note.iteration != state.t:
            raise IllegalTransition(
                f"feedback tagged iteration {event.note.iteration}, state is at {state.t}"
            )
        record = replace(state.iterations[-1], feedback=event.note)
        return replace(
            state,
            iterations=state.iterations[:-1] + (record,),
            t=state.t + 1,
            status=RunStatus.PROMPTING,
        )

    raise IllegalTransition(
        f"event {type(event).__name__} not accepted in status {status.value}"
    )
