"""Content-addressed persistence for run trajectories.

Layout under a store root::

    runs/{run_id}/manifest.json      # full trajectory, atomic writes
    runs/{run_id}/assets/{digest}.png
    runs/{run_id}/.lock              # advisory writer lock (pid inside)

The manifest is a pure function of the run state (plus its creation
timestamp), serialized with sorted keys, so identical states produce
identical bytes. Assets are written once per digest and re-verified when
already present.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from . import __version__
from .core import (
    HASH_ALGORITHM,
    DraftImage,
    FeedbackNote,
    Idea,
    IdeaSegment,
    ImageAsset,
    IterationRecord,
    MediaType,
    PromptCandidate,
    RunConfig,
    RunState,
    RunStatus,
    compute_digest,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_EXTENSIONS = {MediaType.PNG: ".png", MediaType.JPEG: ".jpg"}


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        # Exists but owned by someone else.
        return True
    return True


class StoreError(Exception):
    """Base class for persistence failures."""


class MissingRun(StoreError):
    """No manifest exists for the requested run id."""


class IntegrityError(StoreError):
    """Stored bytes do not match their recorded digest."""


class VersionMismatch(StoreError):
    """The manifest was written by an incompatible schema."""


class ConcurrentWriteError(StoreError):
    """Another live writer holds the run directory lock."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _segment_doc(segment: IdeaSegment) -> dict:
    if segment.text is not None:
        return {"kind": "text", "text": segment.text}
    assert segment.image is not None
    return {
        "kind": "image",
        "digest": segment.image.digest,
        "id": segment.image.id,
        "media_type": segment.image.media_type.value,
    }


def _prompt_doc(prompt: PromptCandidate) -> dict:
    return {"text": prompt.text, "index": prompt.index, "word_count": prompt.word_count}


def _draft_doc(draft: DraftImage) -> dict:
    return {
        "digest": draft.image.digest,
        "id": draft.image.id,
        "media_type": draft.image.media_type.value,
        "prompt_index": draft.prompt_index,
        "seed": draft.seed,
        "backend_id": draft.backend_id,
        "placeholder": draft.placeholder,
    }


def manifest_from_state(state: RunState, created_at: str, updated_at: str) -> dict:
    iterations = []
    for record in state.iterations:
        iterations.append(
            {
                "t": record.t,
                "prompts": [_prompt_doc(p) for p in record.prompts],
                "drafts": [_draft_doc(d) for d in record.drafts],
                "selection_index": record.selection_index,
                "degraded_selection": record.degraded_selection,
                "feedback": record.feedback.text if record.feedback else None,
            }
        )
    final = state.final_image
    return {
        "schema_version": SCHEMA_VERSION,
        "hash_algorithm": HASH_ALGORITHM,
        "run_id": state.run_id,
        "status": state.status.value,
        "t": state.t,
        "failure_reason": state.failure_reason,
        "created_at": created_at,
        "updated_at": updated_at,
        "versions": {"idealoop": __version__},
        "config": {
            "lmm_backend": state.config.lmm_backend,
            "generator_backend": state.config.generator_backend,
            "n_candidates": state.config.n_candidates,
            "max_iterations": state.config.max_iterations,
            "img2img_strength": state.config.img2img_strength,
            "seed": state.config.seed,
            "retry_limit": state.config.retry_limit,
            "image_width": state.config.image_width,
            "image_height": state.config.image_height,
        },
        "idea": {"segments": [_segment_doc(s) for s in state.idea.segments]},
        "iterations": iterations,
        "final_image_digest": final.digest if final else None,
    }


def collect_assets(state: RunState) -> dict[str, ImageAsset]:
    """Every image referenced by the state, keyed by digest."""
    assets: dict[str, ImageAsset] = {}
    for image in state.idea.images:
        assets[image.digest] = image
    for record in state.iterations:
        for draft in record.drafts:
            assets[draft.image.digest] = draft.image
    return assets


class RunStore:
    """Reads and writes run trajectories under one root directory."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def manifest_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "manifest.json"

    def asset_path(self, run_id: str, digest: str, media_type: MediaType = MediaType.PNG) -> Path:
        return self.run_dir(run_id) / "assets" / f"{digest}{_EXTENSIONS[media_type]}"

    def list_runs(self) -> list[str]:
        runs_dir = self.root / "runs"
        if not runs_dir.is_dir():
            return []
        return sorted(
            entry.name for entry in runs_dir.iterdir() if (entry / "manifest.json").is_file()
        )

    @contextmanager
    def writer_lock(self, run_id: str) -> Iterator[None]:
        """Hold the advisory per-run writer lock.

        A lock left by a dead process is stolen; a live holder raises
        ConcurrentWriteError.
        """
        run_dir = self.run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        lock_path = run_dir / ".lock"
        for attempt in range(2):
            try:
                fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                holder = self._lock_holder(lock_path)
                if holder is not None and _pid_alive(holder):
                    raise ConcurrentWriteError(
                        f"run {run_id} is locked by live pid {holder}"
                    )
                if attempt == 1:
                    raise ConcurrentWriteError(f"could not claim stale lock for run {run_id}")
                logger.warning("stealing stale lock for run %s (pid %s gone)", run_id, holder)
                lock_path.unlink(missing_ok=True)
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            lock_path.unlink(missing_ok=True)

    @staticmethod
    def _lock_holder(lock_path: Path) -> int | None:
        try:
            return int(lock_path.read_text(encoding="ascii").strip())
        except (OSError, ValueError):
            return None

    # -- writing ----------------------------------------------------------

    def persist(self, state: RunState) -> Path:
        """Write all referenced assets and the manifest; returns its path.

        Idempotent: persisting an unchanged state only moves the
        updated_at timestamp.
        """
        run_dir = self.run_dir(state.run_id)
        assets_dir = run_dir / "assets"
        assets_dir.mkdir(parents=True, exist_ok=True)

        for digest, asset in collect_assets(state).items():
            path = self.asset_path(state.run_id, digest, asset.media_type)
            if path.exists():
                on_disk = path.read_bytes()
                if compute_digest(on_disk) != digest:
                    raise IntegrityError(f"asset {digest} on disk no longer matches its digest")
                continue
            _atomic_write(path, asset.data)

        manifest_path = self.manifest_path(state.run_id)
        created_at = _now()
        if manifest_path.exists():
            try:
                created_at = json.loads(manifest_path.read_text(encoding="utf-8"))["created_at"]
            except (ValueError, KeyError) as exc:
                logger.warning("existing manifest unreadable (%s); resetting created_at", exc)
        doc = manifest_from_state(state, created_at=created_at, updated_at=_now())
        _atomic_write(
            manifest_path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
        )
        return manifest_path

    # -- reading ----------------------------------------------------------

    def load(self, run_id: str) -> RunState:
        """Rebuild the run state, verifying every asset digest."""
        manifest_path = self.manifest_path(run_id)
        if not manifest_path.is_file():
            raise MissingRun(f"no manifest for run {run_id} under {self.root}")
        try:
            doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise IntegrityError(f"manifest for run {run_id} is not valid JSON: {exc}") from exc
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise VersionMismatch(
                f"manifest schema {doc.get('schema_version')} is not supported (want {SCHEMA_VERSION})"
            )
        if doc.get("hash_algorithm") != HASH_ALGORITHM:
            raise VersionMismatch(f"unsupported hash algorithm {doc.get('hash_algorithm')}")

        def load_asset(digest: str, media_type: str, asset_id: str) -> ImageAsset:
            media = MediaType(media_type)
            path = self.asset_path(run_id, digest, media)
            if not path.is_file():
                raise IntegrityError(f"asset file missing for digest {digest}")
            data = path.read_bytes()
            if compute_digest(data) != digest:
                raise IntegrityError(f"asset {digest} fails digest verification")
            return ImageAsset(data=data, media_type=media, id=asset_id)

        segments = []
        for seg in doc["idea"]["segments"]:
            if seg["kind"] == "text":
                segments.append(IdeaSegment(text=seg["text"]))
            else:
                segments.append(
                    IdeaSegment(image=load_asset(seg["digest"], seg["media_type"], seg["id"]))
                )
        idea = Idea(segments=tuple(segments))
        config = RunConfig(**doc["config"])

        iterations = []
        for position, entry in enumerate(doc["iterations"]):
            if entry["t"] != position:
                raise IntegrityError(
                    f"iteration entries are not dense: entry {position} has t={entry['t']}"
                )
            prompts = tuple(
                PromptCandidate(text=p["text"], iteration=entry["t"], index=p["index"])
                for p in entry["prompts"]
            )
            drafts = tuple(
                DraftImage(
                    image=load_asset(d["digest"], d["media_type"], d["id"]),
                    prompt_index=d["prompt_index"],
                    iteration=entry["t"],
                    backend_id=d["backend_id"],
                    seed=d["seed"],
                    placeholder=d["placeholder"],
                )
                for d in entry["drafts"]
            )
            feedback = (
                FeedbackNote(text=entry["feedback"], iteration=entry["t"])
                if entry["feedback"] is not None
                else None
            )
            iterations.append(
                IterationRecord(
                    t=entry["t"],
                    prompts=prompts,
                    drafts=drafts,
                    selection_index=entry["selection_index"],
                    degraded_selection=entry["degraded_selection"],
                    feedback=feedback,
                )
            )

        return RunState(
            run_id=doc["run_id"],
            idea=idea,
            config=config,
            t=doc["t"],
            iterations=tuple(iterations),
            status=RunStatus(doc["status"]),
            failure_reason=doc["failure_reason"],
        )


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
