"""Image-generation gateway: deterministic mock, HTTP adapter, wire shim.

All generators expose ``generate(prompt, opts) -> list[ImageAsset]`` and
honor the same option semantics: an init image switches to image-guided
generation, and strength 1.0 means the init image contributes nothing
(the result is byte-identical to plain text-to-image on the mock).
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import random
import threading
from dataclasses import dataclass
from typing import Collection, Protocol

import requests

from . import png
from .core import ImageAsset, PromptCandidate
from .lmm import CallRecorder

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
MOCK_DEFAULT_SIZE = 64
REMOTE_DEFAULT_SIZE = 1024

PLACEHOLDER_GRAY = (128, 128, 128)


class GenerationError(Exception):
    """Base class for generator failures."""


class UnsupportedMode(GenerationError):
    """The backend cannot honor the requested option combination."""


class GenerationTransportError(GenerationError):
    """Network / availability failure; the engine may retry it."""


class GenerationRefused(GenerationError):
    """The backend declined the prompt (safety filter or equivalent)."""


@dataclass(frozen=True)
class GenerateOptions:
    """Per-call generation options.

    ``width``/``height`` of None defer to the backend's default size.
    ``strength`` only makes sense with an init image and must stay in
    (0, 1]; 1.0 reduces to unconditioned generation.
    """

    width: int | None = None
    height: int | None = None
    seed: int | None = None
    init_image: ImageAsset | None = None
    strength: float | None = None
    images_per_prompt: int = 1

    def __post_init__(self) -> None:
        for dim in (self.width, self.height):
            if dim is not None and dim < 1:
                raise ValueError("image dimensions must be >= 1")
        if self.strength is not None:
            if self.init_image is None:
                raise ValueError("strength requires an init image")
            if not (0.0 < self.strength <= 1.0):
                raise ValueError("strength must be in (0, 1]")
        if self.images_per_prompt < 1:
            raise ValueError("images_per_prompt must be >= 1")


@dataclass(frozen=True)
class GeneratorDescriptor:
    """Identity and capabilities of one generation backend."""

    id: str
    kind: str = "mock"  # mock | remote_http | local_sidecar
    endpoint: str = ""
    supports_img2img: bool = True

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("generator descriptor requires an id")
        if self.kind not in ("mock", "remote_http", "local_sidecar"):
            raise ValueError(f"unknown generator kind: {self.kind}")
        if self.kind != "mock" and not self.endpoint:
            raise ValueError(f"{self.kind} generator requires an endpoint")


class Generator(Protocol):
    descriptor: GeneratorDescriptor
    default_size: int

    def generate(self, prompt: PromptCandidate, opts: GenerateOptions) -> list[ImageAsset]: ...


def placeholder_image(width: int, height: int) -> ImageAsset:
    """Solid mid-gray stand-in for a draft whose generation failed."""
    return ImageAsset(data=png.solid_rgb(width, height, PLACEHOLDER_GRAY))


def _resolve_size(opts: GenerateOptions, default_size: int) -> tuple[int, int]:
    return (opts.width or default_size, opts.height or default_size)


_MOCK_DESCRIPTOR = GeneratorDescriptor(id="mock-generator", kind="mock")


class MockGenerator:
    """Procedural backend: pixels are a pure function of the inputs.

    The content key folds in the init image only when it can actually
    influence the output (strength below 1.0), so full-strength guided
    calls match plain text-to-image byte for byte.
    """

    default_size = MOCK_DEFAULT_SIZE

    def __init__(
        self,
        descriptor: GeneratorDescriptor = _MOCK_DESCRIPTOR,
        recorder: CallRecorder | None = None,
        refuse_texts: Collection[str] = (),
    ) -> None:
        self.descriptor = descriptor
        self._recorder = recorder
        self._refuse = frozenset(refuse_texts)
        self._rng = random.Random()
        self._lock = threading.Lock()
        self.calls: list[tuple[PromptCandidate, GenerateOptions]] = []

    def _pixels(self, key: str, width: int, height: int) -> bytes:
        # 8x8 grid of hash-derived colors, scaled up nearest-neighbor.
        grid = 8
        colors = [
            hashlib.sha256(f"{key}|{i}".encode("utf-8")).digest()[:3] for i in range(grid * grid)
        ]
        rows = bytearray()
        for y in range(height):
            gy = y * grid // height
            for x in range(width):
                gx = x * grid // width
                rows += colors[gy * grid + gx]
        return bytes(rows)

    def generate(self, prompt: PromptCandidate, opts: GenerateOptions) -> list[ImageAsset]:
        with self._lock:
            self.calls.append((prompt, opts))
        if self._recorder is not None:
            self._recorder.record("generate")
        if prompt.text in self._refuse:
            raise GenerationRefused(f"prompt declined by mock filter: {prompt.text!r}")
        if opts.init_image is not None and not self.descriptor.supports_img2img:
            raise UnsupportedMode("this backend is text-to-image only")
        width, height = _resolve_size(opts, self.default_size)
        seed = opts.seed if opts.seed is not None else self._rng.getrandbits(32)
        guided = opts.init_image is not None and (opts.strength or 1.0) < 1.0
        key_fields = {
            "prompt": prompt.text,
            "seed": seed,
            "width": width,
            "height": height,
            "init": opts.init_image.digest if guided else None,
            "strength": opts.strength if guided else None,
        }
        out = []
        for k in range(opts.images_per_prompt):
            key = json.dumps({**key_fields, "image": k}, sort_keys=True)
            out.append(ImageAsset(data=png.encode_rgb(width, height, self._pixels(key, width, height))))
        return out


class RemoteGenerator:
    """Adapter for HTTP backends speaking the shared generation protocol.

    Serves both standalone services and the local sidecar; the wire shape
    is identical.
    """

    default_size = REMOTE_DEFAULT_SIZE

    def __init__(
        self,
        descriptor: GeneratorDescriptor,
        timeout: float = DEFAULT_TIMEOUT,
        session: requests.Session | None = None,
        max_in_flight: int | None = None,
    ) -> None:
        if descriptor.kind == "mock":
            raise ValueError("RemoteGenerator requires an HTTP descriptor")
        self.descriptor = descriptor
        self._timeout = timeout
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight) if max_in_flight else None

    def _post(self, body: dict) -> requests.Response:
        url = self.descriptor.endpoint.rstrip("/") + "/generate"
        try:
            return self._session.post(url, json=body, timeout=self._timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise GenerationTransportError(f"request to {url} failed: {exc}") from exc

    def generate(self, prompt: PromptCandidate, opts: GenerateOptions) -> list[ImageAsset]:
        if opts.init_image is not None and not self.descriptor.supports_img2img:
            raise UnsupportedMode("this backend is text-to-image only")
        width, height = _resolve_size(opts, self.default_size)
        body = {
            "prompt": prompt.text,
            "seed": opts.seed,
            "width": width,
            "height": height,
            "n": opts.images_per_prompt,
            "init_image": (
                base64.b64encode(opts.init_image.data).decode("ascii")
                if opts.init_image is not None
                else None
            ),
            "strength": opts.strength,
        }
        if self._slots is not None:
            with self._slots:
                response = self._post(body)
        else:
            response = self._post(body)
        return self._parse_response(response, opts)

    def _parse_response(self, response: requests.Response, opts: GenerateOptions) -> list[ImageAsset]:
        if response.status_code == 422:
            raise UnsupportedMode(_error_text(response))
        if response.status_code == 451:
            raise GenerationRefused(_error_text(response))
        if response.status_code >= 500:
            raise GenerationTransportError(f"backend failure (HTTP {response.status_code}): {_error_text(response)}")
        if response.status_code != 200:
            raise GenerationError(f"unexpected HTTP {response.status_code}: {_error_text(response)}")
        try:
            body = response.json()
            images = body["images"]
        except (ValueError, KeyError) as exc:
            raise GenerationError(f"malformed generation response: {exc}") from exc
        if not isinstance(images, list) or len(images) != opts.images_per_prompt:
            raise GenerationError(
                f"backend returned {len(images) if isinstance(images, list) else '?'} images, "
                f"expected {opts.images_per_prompt}"
            )
        try:
            return [ImageAsset(data=base64.b64decode(item)) for item in images]
        except (binascii.Error, TypeError) as exc:
            raise GenerationError(f"undecodable image payload: {exc}") from exc

    def health(self) -> dict:
        url = self.descriptor.endpoint.rstrip("/") + "/health"
        try:
            response = self._session.get(url, timeout=self._timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise GenerationTransportError(f"request to {url} failed: {exc}") from exc
        if response.status_code != 200:
            raise GenerationTransportError(f"health check failed (HTTP {response.status_code})")
        return response.json()


def _error_text(response: requests.Response) -> str:
    try:
        return str(response.json().get("error", response.text[:200]))
    except ValueError:
        return response.text[:200]


def build_generator(descriptor: GeneratorDescriptor) -> Generator:
    if descriptor.kind == "mock":
        return MockGenerator(descriptor)
    return RemoteGenerator(descriptor)


# ---------------------------------------------------------------------------
# Reference wire handling
#
# The same request/response shape the HTTP sidecar speaks, handled
# in-process. Conformance tests run one shared vector file against this
# shim and against a live sidecar.
# ---------------------------------------------------------------------------


class WireError(Exception):
    """A protocol violation, carrying the HTTP status it maps to."""

    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status


def validate_generate_body(body: object) -> dict:
    """Check a generation request body, returning normalized fields.

    Missing/mistyped fields are malformed (400); well-formed but
    unsupported combinations are 422.
    """
    if not isinstance(body, dict):
        raise WireError(400, "request body must be a JSON object")
    prompt = body.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise WireError(400, "prompt must be a non-empty string")
    out: dict = {"prompt": prompt}
    for name, default in (("width", None), ("height", None), ("n", 1), ("seed", None)):
        value = body.get(name, default)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise WireError(400, f"{name} must be an integer")
        out[name] = value
    init_b64 = body.get("init_image")
    if init_b64 is not None:
        if not isinstance(init_b64, str):
            raise WireError(400, "init_image must be a base64 string")
        try:
            out["init_bytes"] = base64.b64decode(init_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise WireError(400, f"init_image is not valid base64: {exc}")
    else:
        out["init_bytes"] = None
    strength = body.get("strength")
    if strength is not None and isinstance(strength, bool):
        raise WireError(400, "strength must be a number")
    if strength is not None and not isinstance(strength, (int, float)):
        raise WireError(400, "strength must be a number")
    out["strength"] = float(strength) if strength is not None else None

    if out["n"] is None or out["n"] < 1:
        raise WireError(422, "n must be >= 1")
    for name in ("width", "height"):
        if out[name] is not None and out[name] < 1:
            raise WireError(422, f"{name} must be >= 1")
    if out["strength"] is not None:
        if out["init_bytes"] is None:
            raise WireError(422, "strength requires init_image")
        if not (0.0 < out["strength"] <= 1.0):
            raise WireError(422, "strength must be in (0, 1]")
    return out


def handle_generate_body(body: object, generator: Generator, rng: random.Random | None = None) -> dict:
    """Serve one generation request against an in-process generator."""
    fields = validate_generate_body(body)
    seed = fields["seed"]
    if seed is None:
        seed = (rng or random.Random()).getrandbits(32)
    init = ImageAsset(data=fields["init_bytes"]) if fields["init_bytes"] else None
    strength = fields["strength"]
    if init is not None and strength is None:
        strength = 1.0
    opts = GenerateOptions(
        width=fields["width"],
        height=fields["height"],
        seed=seed,
        init_image=init,
        strength=strength,
        images_per_prompt=fields["n"],
    )
    prompt = PromptCandidate(text=fields["prompt"], iteration=0, index=0)
    try:
        assets = generator.generate(prompt, opts)
    except UnsupportedMode as exc:
        raise WireError(422, str(exc))
    except GenerationError as exc:
        raise WireError(500, str(exc))
    return {
        "images": [base64.b64encode(asset.data).decode("ascii") for asset in assets],
        "seed_used": seed,
        "backend": generator.descriptor.id,
    }
