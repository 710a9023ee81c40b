"""Shared fixtures: idea briefs and a scripted-backend run config."""

from __future__ import annotations

import pytest

from idealoop.core import Idea, RunConfig, image_segment, text_segment
from support import tiny_image


@pytest.fixture
def text_idea() -> Idea:
    return Idea(segments=(text_segment("a red fox in snow"),))


@pytest.fixture
def image_idea() -> Idea:
    return Idea(
        segments=(
            text_segment("two dogs playing like"),
            image_segment(tiny_image("pose")),
            text_segment("on a beach at sunset"),
        )
    )


@pytest.fixture
def mock_config() -> RunConfig:
    return RunConfig(
        lmm_backend="scripted-lmm",
        generator_backend="mock-generator",
        n_candidates=3,
        max_iterations=3,
        seed=7,
        retry_limit=2,
    )
