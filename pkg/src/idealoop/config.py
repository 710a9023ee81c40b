"""File-based configuration: run configs, idea briefs, backend wiring.

Both file kinds are YAML (JSON parses too). Unknown keys are rejected so
typos fail loudly instead of silently falling back to defaults. Relative
paths inside a file resolve against that file's directory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import yaml

from .core import (
    Idea,
    IdeaSegment,
    ImageAsset,
    InvalidConfigError,
    InvalidIdeaError,
    MediaType,
    RunConfig,
)
from .imagegen import (
    DEFAULT_TIMEOUT as GENERATOR_DEFAULT_TIMEOUT,
    Generator,
    GeneratorDescriptor,
    MockGenerator,
    RemoteGenerator,
)
from .lmm import LmmBackendDescriptor, LmmClient, build_client

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """A configuration file is missing, malformed, or inconsistent."""


_RUN_KEYS = {
    "n_candidates",
    "max_iterations",
    "img2img_strength",
    "seed",
    "retry_limit",
    "image_width",
    "image_height",
    "template_dir",
    "lmm",
    "generator",
}
_LMM_KEYS = {"id", "kind", "endpoint", "model_name", "auth_env_var", "timeout", "script_file"}
_GENERATOR_KEYS = {"id", "kind", "endpoint", "supports_img2img", "timeout"}

_MEDIA_BY_SUFFIX = {
    ".png": MediaType.PNG,
    ".jpg": MediaType.JPEG,
    ".jpeg": MediaType.JPEG,
}


@dataclass(frozen=True)
class Setup:
    """Everything a run needs beyond the idea itself."""

    run: RunConfig
    lmm: LmmBackendDescriptor
    generator: GeneratorDescriptor
    generator_timeout: float = GENERATOR_DEFAULT_TIMEOUT
    template_dir: Path | None = None


def _load_yaml(path: Path) -> Mapping:
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return doc


def _reject_unknown(doc: Mapping, allowed: set[str], context: str) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {', '.join(unknown)}")


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_setup(path: Path | str) -> Setup:
    """Parse a run-configuration file into descriptors plus RunConfig."""
    path = Path(path)
    doc = _load_yaml(path)
    _reject_unknown(doc, _RUN_KEYS, "config")

    lmm_doc = doc.get("lmm")
    gen_doc = doc.get("generator")
    if not isinstance(lmm_doc, Mapping) or not isinstance(gen_doc, Mapping):
        raise ConfigError("config requires 'lmm' and 'generator' mappings")
    _reject_unknown(lmm_doc, _LMM_KEYS, "lmm")
    _reject_unknown(gen_doc, _GENERATOR_KEYS, "generator")

    lmm_fields = dict(lmm_doc)
    if lmm_fields.get("script_file"):
        lmm_fields["script_file"] = str(_resolve(path.parent, lmm_fields["script_file"]))
    try:
        lmm = LmmBackendDescriptor(**lmm_fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad lmm backend: {exc}") from exc

    gen_fields = dict(gen_doc)
    generator_timeout = float(gen_fields.pop("timeout", GENERATOR_DEFAULT_TIMEOUT))
    try:
        generator = GeneratorDescriptor(**gen_fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator backend: {exc}") from exc

    run_fields = {
        key: doc[key]
        for key in (
            "n_candidates",
            "max_iterations",
            "img2img_strength",
            "seed",
            "retry_limit",
            "image_width",
            "image_height",
        )
        if key in doc
    }
    try:
        run = RunConfig(lmm_backend=lmm.id, generator_backend=generator.id, **run_fields)
    except (TypeError, InvalidConfigError) as exc:
        raise ConfigError(f"bad run configuration: {exc}") from exc

    template_dir = None
    if doc.get("template_dir"):
        template_dir = _resolve(path.parent, doc["template_dir"])
        if not template_dir.is_dir():
            raise ConfigError(f"template_dir does not exist: {template_dir}")
    return Setup(
        run=run,
        lmm=lmm,
        generator=generator,
        generator_timeout=generator_timeout,
        template_dir=template_dir,
    )


def load_image(path: Path | str) -> ImageAsset:
    path = Path(path)
    media = _MEDIA_BY_SUFFIX.get(path.suffix.lower())
    if media is None:
        raise ConfigError(f"unsupported image type: {path}")
    if not path.is_file():
        raise ConfigError(f"image file not found: {path}")
    return ImageAsset(data=path.read_bytes(), media_type=media)


def load_idea(path: Path | str) -> Idea:
    """Parse an idea brief: ordered text segments and image paths."""
    path = Path(path)
    doc = _load_yaml(path)
    _reject_unknown(doc, {"segments"}, "idea")
    raw_segments = doc.get("segments")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ConfigError(f"{path} must hold a non-empty 'segments' list")
    segments = []
    for i, entry in enumerate(raw_segments):
        if not isinstance(entry, Mapping) or len(entry) != 1:
            raise ConfigError(f"segment {i} must be a single-key mapping (text or image)")
        key, value = next(iter(entry.items()))
        if key == "text":
            if not isinstance(value, str):
                raise ConfigError(f"segment {i}: text must be a string")
            segments.append(IdeaSegment(text=value))
        elif key == "image":
            segments.append(IdeaSegment(image=load_image(_resolve(path.parent, str(value)))))
        else:
            raise ConfigError(f"segment {i}: unknown segment kind {key!r}")
    try:
        return Idea(segments=tuple(segments))
    except InvalidIdeaError as exc:
        raise ConfigError(f"bad idea brief: {exc}") from exc


def build_backends(setup: Setup) -> tuple[LmmClient, Generator]:
    """Construct live clients for a parsed setup."""
    try:
        lmm = build_client(setup.lmm)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"could not build LMM client: {exc}") from exc
    if setup.generator.kind == "mock":
        generator: Generator = MockGenerator(setup.generator)
    else:
        generator = RemoteGenerator(setup.generator, timeout=setup.generator_timeout)
    return lmm, generator


# -- backend wiring persisted next to a run (for resume) ---------------------


def setup_to_doc(setup: Setup) -> dict:
    return {
        "lmm": {
            "id": setup.lmm.id,
            "kind": setup.lmm.kind,
            "endpoint": setup.lmm.endpoint,
            "model_name": setup.lmm.model_name,
            "auth_env_var": setup.lmm.auth_env_var,
            "timeout": setup.lmm.timeout,
            "script_file": setup.lmm.script_file,
        },
        "generator": {
            "id": setup.generator.id,
            "kind": setup.generator.kind,
            "endpoint": setup.generator.endpoint,
            "supports_img2img": setup.generator.supports_img2img,
            "timeout": setup.generator_timeout,
        },
        "template_dir": str(setup.template_dir) if setup.template_dir else None,
    }


def setup_from_doc(doc: Mapping, run: RunConfig) -> Setup:
    try:
        lmm = LmmBackendDescriptor(**doc["lmm"])
        gen_fields = dict(doc["generator"])
        generator_timeout = float(gen_fields.pop("timeout", GENERATOR_DEFAULT_TIMEOUT))
        generator = GeneratorDescriptor(**gen_fields)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad backend wiring document: {exc}") from exc
    template_dir = Path(doc["template_dir"]) if doc.get("template_dir") else None
    return Setup(
        run=run,
        lmm=lmm,
        generator=generator,
        generator_timeout=generator_timeout,
        template_dir=template_dir,
    )
