"""Deterministic procedural renderer.

Pixels are a pure function of (prompt, seed, size, image index) plus the
optional init image. Generation starts from seeded noise, optionally
blended with the init image by ``strength``, then relaxes toward a
prompt-keyed color field over a few smoothing steps:

    x0 = (1 - strength) * init + strength * noise
    x  <- x + RATE * (target(prompt) - x)        (BLEND_STEPS times)

At strength 1.0 (or without an init image) the init branch is skipped
entirely, so full-strength guided output is byte-identical to plain
text-to-image — the contract the wire protocol's conformance vectors pin
down.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image

GRID = 8
BLEND_STEPS = 4
BLEND_RATE = 0.35


def _rng(*key_parts: object) -> np.random.Generator:
    key = "|".join(str(part) for part in key_parts).encode("utf-8")
    words = np.frombuffer(hashlib.sha256(key).digest()[:16], dtype=np.uint64)
    return np.random.default_rng(words)


def prompt_field(prompt: str, width: int, height: int) -> np.ndarray:
    """The color field an image relaxes toward; depends on the prompt only."""
    grid = _rng("target", prompt).uniform(0.0, 255.0, size=(GRID, GRID, 3))
    ys = np.arange(height) * GRID // height
    xs = np.arange(width) * GRID // width
    return grid[np.ix_(ys, xs)]


def noise_field(prompt: str, seed: int, width: int, height: int, image_index: int) -> np.ndarray:
    rng = _rng("noise", prompt, seed, width, height, image_index)
    return rng.uniform(0.0, 255.0, size=(height, width, 3))


def render(
    prompt: str,
    seed: int,
    width: int,
    height: int,
    image_index: int = 0,
    init: Image.Image | None = None,
    strength: float | None = None,
) -> Image.Image:
    noise = noise_field(prompt, seed, width, height, image_index)
    effective = 1.0 if strength is None else strength
    if init is None or effective >= 1.0:
        x = noise
    else:
        init_arr = np.asarray(
            init.convert("RGB").resize((width, height), Image.BILINEAR), dtype=np.float64
        )
        x = (1.0 - effective) * init_arr + effective * noise
    target = prompt_field(prompt, width, height)
    for _ in range(BLEND_STEPS):
        x = x + BLEND_RATE * (target - x)
    return Image.fromarray(np.clip(np.rint(x), 0, 255).astype(np.uint8), "RGB")


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> Image.Image:
    """Decode init-image bytes; raises ValueError on anything undecodable."""
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
    except Exception as exc:  # Pillow raises a zoo of types here
        raise ValueError(f"init_image is not a decodable image: {exc}") from exc
    return image
