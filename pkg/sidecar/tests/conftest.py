"""Sidecar test fixtures: a live server shared across the session."""

from __future__ import annotations

import random

import pytest

from imagegen_sidecar.app import create_app
from sidecar_support import LiveServer


@pytest.fixture(scope="session")
def sidecar_url() -> str:
    server = LiveServer(create_app(rng=random.Random(424242)))
    url = server.start()
    yield url
    server.stop()
