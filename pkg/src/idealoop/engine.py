"""The refinement loop driver.

Each iteration: draft N candidate prompts, render one image per
candidate, have the model pick the best draft, and (unless the iteration
budget is spent) reflect feedback that steers the next round's
candidates. State is persisted after every step boundary so an
interrupted run resumes at the step it was in.

Robustness policy:

* model output that fails to parse gets exactly one fresh re-ask;
* a second selection failure degrades to draft 0 and flags the state;
* a second failure on prompts or feedback fails the run;
* per-prompt generation failures become flagged placeholder drafts, and
  the run fails only if every draft of an iteration failed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from .core import (
    PROMPT_WORD_LIMIT,
    BeginPrompting,
    DraftImage,
    DraftsReady,
    Failed,
    FeedbackNote,
    FeedbackReady,
    Idea,
    MemoryRecord,
    PromptCandidate,
    PromptsReady,
    RunConfig,
    RunState,
    RunStatus,
    Selected,
    advance,
    new_run,
)
from .imagegen import (
    GenerateOptions,
    GenerationError,
    GenerationTransportError,
    Generator,
    placeholder_image,
)
from .lmm import LmmClient, LmmError, complete_with_retry
from .store import RunStore
from .templates import (
    LmmRequest,
    ParseError,
    TemplateSet,
    parse_selection,
    parse_wrapped,
    render_feedback,
    render_generate,
    render_revise,
    render_select,
)

logger = logging.getLogger(__name__)

StopHook = Callable[[RunState], bool]


class EngineError(Exception):
    """Base class for loop failures."""


class AllDraftsFailed(EngineError):
    """Every generation in one iteration failed; nothing to select from."""


class RunFailed(EngineError):
    """The run reached the failed status; carries the persisted state."""

    def __init__(self, state: RunState, reason: str) -> None:
        super().__init__(reason)
        self.state = state


def _ask(
    lmm: LmmClient,
    request: LmmRequest,
    parse: Callable[[str], object],
    retry_limit: int,
) -> object:
    """Complete a request and parse the reply, re-asking once on parse failure."""
    raw = complete_with_retry(lmm, request, retry_limit)
    try:
        return parse(raw)
    except ParseError as exc:
        logger.warning("unparseable %s reply (%s); re-asking once", request.purpose.value, exc)
    raw = complete_with_retry(lmm, request, retry_limit)
    return parse(raw)


def _warn_long_prompts(prompts: Sequence[PromptCandidate]) -> None:
    for prompt in prompts:
        if prompt.word_count > PROMPT_WORD_LIMIT:
            logger.warning(
                "prompt %d of iteration %d runs %d words (limit %d); passing through",
                prompt.index,
                prompt.iteration,
                prompt.word_count,
                PROMPT_WORD_LIMIT,
            )


def initial_prompts(
    idea: Idea, config: RunConfig, lmm: LmmClient, templates: TemplateSet
) -> tuple[PromptCandidate, ...]:
    """First-round candidate prompts straight from the idea brief."""
    request = render_generate(idea, config.n_candidates, templates)
    texts = _ask(
        lmm, request, lambda raw: parse_wrapped(raw, config.n_candidates), config.retry_limit
    )
    prompts = tuple(
        PromptCandidate(text=text, iteration=0, index=i) for i, text in enumerate(texts)
    )
    _warn_long_prompts(prompts)
    return prompts


def revise_prompts(
    idea: Idea,
    memory: Sequence[MemoryRecord],
    t: int,
    selected_prompt: PromptCandidate,
    selected_draft: DraftImage,
    feedback: FeedbackNote,
    config: RunConfig,
    lmm: LmmClient,
    templates: TemplateSet,
) -> tuple[PromptCandidate, ...]:
    """Candidate prompts for iteration ``t + 1``, steered by feedback on ``t``."""
    request = render_revise(
        idea, memory, t, selected_prompt, selected_draft, feedback, config.n_candidates, templates
    )
    texts = _ask(
        lmm, request, lambda raw: parse_wrapped(raw, config.n_candidates), config.retry_limit
    )
    prompts = tuple(
        PromptCandidate(text=text, iteration=t + 1, index=i) for i, text in enumerate(texts)
    )
    _warn_long_prompts(prompts)
    return prompts


def _generate_one(
    generator: Generator,
    prompt: PromptCandidate,
    opts: GenerateOptions,
    retry_limit: int,
) -> list:
    attempts = retry_limit + 1
    for attempt in range(attempts):
        try:
            return generator.generate(prompt, opts)
        except GenerationTransportError as exc:
            if attempt == attempts - 1:
                raise
            logger.warning("generation transport error (%s); retrying", exc)
    raise AssertionError("unreachable")


def generate_drafts(
    prompts: Sequence[PromptCandidate],
    idea: Idea,
    config: RunConfig,
    generator: Generator,
) -> tuple[DraftImage, ...]:
    """One draft per candidate, in candidate order.

    Image-guided generation conditions on the first idea image when the
    backend supports it. Failed generations degrade to flagged
    placeholders; only a full wipeout raises.
    """
    if not prompts:
        raise EngineError("no prompts to generate from")
    t = prompts[0].iteration
    width = config.image_width or generator.default_size
    height = config.image_height or generator.default_size
    init = idea.first_image if generator.descriptor.supports_img2img else None
    base = GenerateOptions(
        width=width,
        height=height,
        init_image=init,
        strength=config.img2img_strength if init is not None else None,
    )

    def seed_for(index: int) -> int | None:
        if config.seed is None:
            return None
        return config.seed + t * config.n_candidates + index

    def render(prompt: PromptCandidate) -> DraftImage:
        seed = seed_for(prompt.index)
        opts = GenerateOptions(
            width=base.width,
            height=base.height,
            seed=seed,
            init_image=base.init_image,
            strength=base.strength,
        )
        try:
            assets = _generate_one(generator, prompt, opts, config.retry_limit)
        except GenerationError as exc:
            logger.warning(
                "draft %d of iteration %d failed (%s); substituting placeholder",
                prompt.index,
                t,
                exc,
            )
            return DraftImage(
                image=placeholder_image(width, height),
                prompt_index=prompt.index,
                iteration=t,
                backend_id=generator.descriptor.id,
                seed=seed,
                placeholder=True,
            )
        return DraftImage(
            image=assets[0],
            prompt_index=prompt.index,
            iteration=t,
            backend_id=generator.descriptor.id,
            seed=seed,
            placeholder=False,
        )

    with ThreadPoolExecutor(max_workers=len(prompts)) as pool:
        drafts = tuple(pool.map(render, prompts))
    if all(d.placeholder for d in drafts):
        raise AllDraftsFailed(f"all {len(drafts)} generations of iteration {t} failed")
    return drafts


def select_draft(
    idea: Idea,
    drafts: Sequence[DraftImage],
    lmm: LmmClient,
    retry_limit: int,
    templates: TemplateSet,
) -> tuple[int, bool]:
    """Pick the best draft index; returns (index, degraded).

    After the single re-ask also fails to parse, falls back to draft 0
    with the degraded flag set rather than killing the run.
    """
    request = render_select(idea, drafts, templates)
    try:
        index = _ask(lmm, request, lambda raw: parse_selection(raw, len(drafts)), retry_limit)
    except ParseError as exc:
        logger.warning("selection unparseable twice (%s); falling back to draft 0", exc)
        return 0, True
    return int(index), False  # type: ignore[arg-type]


def reflect_feedback(
    idea: Idea,
    selected_prompt: PromptCandidate,
    selected_draft: DraftImage,
    memory: Sequence[MemoryRecord],
    t: int,
    lmm: LmmClient,
    retry_limit: int,
    templates: TemplateSet,
) -> FeedbackNote:
    """One improvement direction for the pair selected at iteration ``t``."""
    request = render_feedback(idea, selected_prompt, selected_draft, memory, t, templates)
    text = _ask(lmm, request, lambda raw: parse_wrapped(raw, 1)[0], retry_limit)
    return FeedbackNote(text=str(text), iteration=t)


def _step(
    state: RunState,
    lmm: LmmClient,
    generator: Generator,
    templates: TemplateSet,
    stop_hook: StopHook | None,
) -> RunState:
    """Perform the work for the current status and advance past it."""
    config = state.config
    idea = state.idea

    if state.status in (RunStatus.INITIALIZED, RunStatus.PROMPTING):
        if state.status is RunStatus.INITIALIZED:
            state = advance(state, BeginPrompting())
        if state.t == 0:
            prompts = initial_prompts(idea, config, lmm, templates)
        else:
            last = state.memory[-1]
            prompts = revise_prompts(
                idea,
                state.memory[:-1],
                state.t - 1,
                last.selected_prompt,
                last.selected_image,
                last.feedback,
                config,
                lmm,
                templates,
            )
        return advance(state, PromptsReady(prompts))

    if state.status is RunStatus.GENERATING:
        drafts = generate_drafts(state.current_prompts, idea, config, generator)
        return advance(state, DraftsReady(drafts))

    if state.status is RunStatus.SELECTING:
        index, degraded = select_draft(idea, state.current_drafts, lmm, config.retry_limit, templates)
        early = bool(stop_hook(state)) if stop_hook is not None else False
        return advance(state, Selected(index=index, degraded=degraded, early_stop=early))

    if state.status is RunStatus.REFLECTING:
        record = state.iterations[-1]
        assert record.selection_index is not None
        note = reflect_feedback(
            idea,
            record.prompts[record.selection_index],
            record.drafts[record.selection_index],
            state.memory,
            state.t,
            lmm,
            config.retry_limit,
            templates,
        )
        return advance(state, FeedbackReady(note))

    raise EngineError(f"no step defined for status {state.status.value}")


def _drive(
    state: RunState,
    lmm: LmmClient,
    generator: Generator,
    templates: TemplateSet,
    store: RunStore | None,
    max_steps: int | None,
    stop_hook: StopHook | None,
) -> RunState:
    def persist(snapshot: RunState) -> None:
        if store is not None:
            store.persist(snapshot)

    steps = 0
    try:
        while not state.is_terminal:
            if max_steps is not None and steps >= max_steps:
                return state
            state = _step(state, lmm, generator, templates, stop_hook)
            persist(state)
            steps += 1
    except (LmmError, ParseError, GenerationError, EngineError) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        state = advance(state, Failed(reason=reason))
        persist(state)
        raise RunFailed(state, reason) from exc
    return state


def run(
    idea: Idea,
    config: RunConfig,
    lmm: LmmClient,
    generator: Generator,
    store: RunStore | None = None,
    templates: TemplateSet | None = None,
    run_id: str | None = None,
    max_steps: int | None = None,
    stop_hook: StopHook | None = None,
) -> RunState:
    """Drive a fresh run to completion (or for ``max_steps`` boundaries).

    Raises :class:`RunFailed` after persisting the failed state if a step
    fails fatally.
    """
    templates = templates or TemplateSet.load()
    state = new_run(idea, config, run_id=run_id)
    if store is not None:
        with store.writer_lock(state.run_id):
            store.persist(state)
            return _drive(state, lmm, generator, templates, store, max_steps, stop_hook)
    return _drive(state, lmm, generator, templates, None, max_steps, stop_hook)


def resume(
    store: RunStore,
    run_id: str,
    lmm: LmmClient,
    generator: Generator,
    templates: TemplateSet | None = None,
    max_steps: int | None = None,
    stop_hook: StopHook | None = None,
) -> RunState:
    """Continue a persisted run from its last step boundary.

    The step that was in flight when the run stopped is redone in full.
    Terminal runs are returned unchanged.
    """
    templates = templates or TemplateSet.load()
    state = store.load(run_id)
    if state.is_terminal:
        return state
    with store.writer_lock(run_id):
        return _drive(state, lmm, generator, templates, store, max_steps, stop_hook)
