"""Iterative multimodal prompt refinement for image-generation backends.

Give the loop an idea brief (interleaved text and reference images) and
two backends: a multimodal model that writes, judges, and critiques
prompts, and an image generator that renders them. Each iteration drafts
candidate prompts, generates one image per candidate, selects the best
draft, and reflects feedback into the next round's candidates. The full
trajectory persists as a content-addressed run directory.
"""

__version__ = "0.1.0"

from .core import (
    DraftImage,
    FeedbackNote,
    Idea,
    IdeaSegment,
    ImageAsset,
    IterationRecord,
    MemoryRecord,
    PromptCandidate,
    RunConfig,
    RunState,
    RunStatus,
    advance,
    image_segment,
    new_run,
    text_segment,
)
from .engine import resume, run
from .store import RunStore

__all__ = [
    "DraftImage",
    "FeedbackNote",
    "Idea",
    "IdeaSegment",
    "ImageAsset",
    "IterationRecord",
    "MemoryRecord",
    "PromptCandidate",
    "RunConfig",
    "RunState",
    "RunStatus",
    "RunStore",
    "advance",
    "image_segment",
    "new_run",
    "resume",
    "run",
    "text_segment",
    "__version__",
]
