"""Plain test helpers shared across modules: tiny images, scripted replies."""

from __future__ import annotations

from pathlib import Path

from idealoop import png
from idealoop.core import (
    DraftImage,
    FeedbackNote,
    ImageAsset,
    MemoryRecord,
    PromptCandidate,
)

TESTS_DIR = Path(__file__).resolve().parent
REPO_ROOT = TESTS_DIR.parent
DATA_DIR = TESTS_DIR / "data"
PROTOCOL_VECTORS = REPO_ROOT / "protocol" / "generate_vectors.json"
CORPUS_DIR = REPO_ROOT / "corpus"


def tiny_image(tag: str, size: int = 8) -> ImageAsset:
    """A small distinct PNG keyed by tag."""
    shade = sum(tag.encode()) % 200 + 20
    buf = bytearray()
    for y in range(size):
        for x in range(size):
            buf += bytes(((shade + x) % 256, (shade * 3 + y) % 256, (shade * 5 + x + y) % 256))
    return ImageAsset(data=png.encode_rgb(size, size, bytes(buf)))


def spans(*texts: str) -> str:
    """Wrap each text in the reply markers, joined by newlines."""
    return "\n".join(f"<START>{t}<END>" for t in texts)


def full_loop_script(n: int = 3, t: int = 3) -> list[str]:
    """A reply script that drives an N-candidate, T-iteration run.

    Prompt texts are synthetic but unique per round/slot; selections walk
    1, 2, 0, 1, ... so tests can predict the selected candidates.
    """
    script: list[str] = []
    for round_no in range(t):
        script.append(spans(*(f"p{round_no}-{i}" for i in range(n))))
        script.append(spans(str((round_no + 1) % n)))
        if round_no < t - 1:
            script.append(spans(f"feedback-{round_no}"))
    return script


def make_prompt(text: str = "a prompt", iteration: int = 0, index: int = 0) -> PromptCandidate:
    return PromptCandidate(text=text, iteration=iteration, index=index)


def make_draft(
    tag: str = "d", iteration: int = 0, prompt_index: int = 0, seed: int | None = 5
) -> DraftImage:
    return DraftImage(
        image=tiny_image(f"{tag}:{iteration}:{prompt_index}"),
        prompt_index=prompt_index,
        iteration=iteration,
        backend_id="mock-generator",
        seed=seed,
    )


def make_memory_record(iteration: int, tag: str = "m") -> MemoryRecord:
    return MemoryRecord(
        selected_prompt=make_prompt(f"prompt-{tag}-{iteration}", iteration, 0),
        selected_image=make_draft(tag, iteration, 0),
        feedback=FeedbackNote(text=f"feedback-{tag}-{iteration}", iteration=iteration),
    )
