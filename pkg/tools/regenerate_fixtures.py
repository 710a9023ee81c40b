#!/usr/bin/env python3
"""Regenerate committed binary/data fixtures.

Everything written here is deterministic, so re-running the script on a
clean tree is a no-op. Covers: corpus reference images, the shared
generation-protocol vectors, the committed preference-vote fixture, and
the recorded chat-completions exchange used by the replay test.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from idealoop import png  # noqa: E402
from idealoop.core import Idea, ImageAsset, image_segment, text_segment  # noqa: E402
from idealoop.lmm import LmmBackendDescriptor, _request_payload  # noqa: E402
from idealoop.prefs import VariantKind, Variant, build_ballots, save_ballots  # noqa: E402
from idealoop.templates import TemplateSet, render_generate  # noqa: E402

from dataclasses import replace  # noqa: E402

SIZE = 16


def _hash_pixels(key: str, width: int, height: int, grid: int = 4) -> bytes:
    colors = [
        hashlib.sha256(f"{key}|{i}".encode()).digest()[:3] for i in range(grid * grid)
    ]
    rows = bytearray()
    for y in range(height):
        gy = y * grid // height
        for x in range(width):
            gx = x * grid // width
            rows += colors[gy * grid + gx]
    return bytes(rows)


def _gradient_pixels(width: int, height: int, a: tuple, b: tuple) -> bytes:
    rows = bytearray()
    for y in range(height):
        fy = y / max(1, height - 1)
        for x in range(width):
            fx = x / max(1, width - 1)
            f = (fx + fy) / 2
            rows += bytes(int(a[i] + (b[i] - a[i]) * f) for i in range(3))
    return bytes(rows)


def _rings_pixels(width: int, height: int, base: tuple) -> bytes:
    rows = bytearray()
    cx, cy = (width - 1) / 2, (height - 1) / 2
    for y in range(height):
        for x in range(width):
            r = math.hypot(x - cx, y - cy)
            w = 0.5 + 0.5 * math.sin(r * 1.3)
            rows += bytes(min(255, int(c * w)) for c in base)
    return bytes(rows)


CORPUS_IMAGES = {
    "swirl.png": lambda: _rings_pixels(SIZE, SIZE, (240, 140, 90)),
    "meadow.png": lambda: _gradient_pixels(SIZE, SIZE, (120, 200, 120), (40, 90, 160)),
    "blocks.png": lambda: _hash_pixels("blocks", SIZE, SIZE),
    "sketch.png": lambda: _gradient_pixels(SIZE, SIZE, (235, 235, 230), (60, 60, 70)),
    "cliff.png": lambda: _gradient_pixels(SIZE, SIZE, (180, 120, 80), (70, 50, 110)),
    "lagoon.png": lambda: _rings_pixels(SIZE, SIZE, (90, 200, 210)),
    "owl.png": lambda: _hash_pixels("owl", SIZE, SIZE),
    "tiles.png": lambda: _hash_pixels("tiles", SIZE, SIZE),
}


def write_corpus_images() -> None:
    out = ROOT / "corpus" / "images"
    out.mkdir(parents=True, exist_ok=True)
    for name, make in CORPUS_IMAGES.items():
        (out / name).write_bytes(png.encode_rgb(SIZE, SIZE, make()))
    print(f"corpus images: {len(CORPUS_IMAGES)} files under {out}")


def write_protocol_vectors() -> None:
    init = png.encode_rgb(SIZE, SIZE, _gradient_pixels(SIZE, SIZE, (200, 60, 60), (60, 60, 200)))
    init_b64 = base64.b64encode(init).decode("ascii")
    vectors = {
        "notes": (
            "Shared conformance vectors for the generation wire protocol. "
            "seed_echo: seed_used must equal the request seed (when false the "
            "request seed is null and seed_used must be a non-negative integer). "
            "same_as / not_same_as compare raw image bytes against another vector's "
            "first image within the same backend."
        ),
        "vectors": [
            {
                "name": "t2i_single",
                "request": {
                    "prompt": "a red fox in snow",
                    "seed": 7,
                    "width": 64,
                    "height": 64,
                    "n": 1,
                    "init_image": None,
                    "strength": None,
                },
                "expect": {"images": 1, "width": 64, "height": 64, "seed_echo": True},
            },
            {
                "name": "t2i_pair",
                "request": {
                    "prompt": "two lanterns on a pier at dusk",
                    "seed": 11,
                    "width": 32,
                    "height": 48,
                    "n": 2,
                    "init_image": None,
                    "strength": None,
                },
                "expect": {
                    "images": 2,
                    "width": 32,
                    "height": 48,
                    "seed_echo": True,
                    "distinct_images": True,
                },
            },
            {
                "name": "t2i_unseeded",
                "request": {
                    "prompt": "a paper crane on a desk",
                    "seed": None,
                    "width": 64,
                    "height": 64,
                    "n": 1,
                    "init_image": None,
                    "strength": None,
                },
                "expect": {"images": 1, "width": 64, "height": 64, "seed_echo": False},
            },
            {
                "name": "img2img_half",
                "request": {
                    "prompt": "a red fox in snow",
                    "seed": 7,
                    "width": 64,
                    "height": 64,
                    "n": 1,
                    "init_image": init_b64,
                    "strength": 0.5,
                },
                "expect": {
                    "images": 1,
                    "width": 64,
                    "height": 64,
                    "seed_echo": True,
                    "not_same_as": "t2i_single",
                },
            },
            {
                "name": "img2img_full_strength",
                "request": {
                    "prompt": "a red fox in snow",
                    "seed": 7,
                    "width": 64,
                    "height": 64,
                    "n": 1,
                    "init_image": init_b64,
                    "strength": 1.0,
                },
                "expect": {
                    "images": 1,
                    "width": 64,
                    "height": 64,
                    "seed_echo": True,
                    "same_as": "t2i_single",
                },
            },
        ],
    }
    out = ROOT / "protocol" / "generate_vectors.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(vectors, indent=2) + "\n", encoding="utf-8")
    print(f"protocol vectors: {out}")


def write_vote_fixture() -> None:
    """104 voted ballots split 14 / 31 / 59 across the three variants."""
    idea_ids = [f"idea-{i:03d}" for i in range(1, 105)]
    digest = "0" * 64
    variants = {
        idea_id: {
            kind: Variant(kind=kind, image_digest=digest, source_run_id=None)
            for kind in VariantKind
        }
        for idea_id in idea_ids
    }
    ballots = build_ballots(idea_ids, variants, rng_seed=42)
    choices = (
        [VariantKind.MANUAL_INITIAL] * 14
        + [VariantKind.ENGINE_INITIAL] * 31
        + [VariantKind.ENGINE_REFINED] * 59
    )
    voted = [replace(ballot, choice=choice) for ballot, choice in zip(ballots, choices)]
    out = ROOT / "tests" / "data" / "table1_votes.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ballots(out, voted)
    print(f"vote fixture: {out} ({len(voted)} ballots)")


def write_chat_exchange() -> None:
    """One chat-completions exchange: our adapter's request + a typical reply."""
    image = ImageAsset(data=(ROOT / "corpus" / "images" / "swirl.png").read_bytes())
    idea = Idea(
        segments=(
            text_segment("A ceramic mug whose glaze follows the color palette of the given image"),
            image_segment(image),
        )
    )
    request = render_generate(idea, 3, TemplateSet.load())
    descriptor = LmmBackendDescriptor(
        id="lmm-main",
        kind="openai_chat",
        endpoint="http://127.0.0.1:9999/v1",
        model_name="vision-judge-1",
        auth_env_var="LMM_API_KEY",
    )
    payload = _request_payload(descriptor, request)
    reply = (
        "<START>A ceramic mug with a swirling orange and coral glaze, soft studio "
        "lighting, product photography, clean background<END>\n"
        "<START>A handmade stoneware mug glazed in warm sunset spirals, macro shot, "
        "shallow depth of field<END>\n"
        "<START>A glossy mug whose glaze swirls from amber to peach, centered on a "
        "walnut table, morning light<END>"
    )
    exchange = {
        "request": payload,
        "response": {
            "id": "chatcmpl-fixture-0001",
            "object": "chat.completion",
            "created": 1714000000,
            "model": "vision-judge-1",
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": reply},
                    "finish_reason": "stop",
                }
            ],
            "usage": {"prompt_tokens": 512, "completion_tokens": 96, "total_tokens": 608},
        },
        "expected_text": reply,
    }
    out = ROOT / "tests" / "data" / "chat_exchange.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(exchange, indent=2) + "\n", encoding="utf-8")
    print(f"chat exchange fixture: {out}")


if __name__ == "__main__":
    write_corpus_images()
    write_protocol_vectors()
    write_vote_fixture()
    write_chat_exchange()
