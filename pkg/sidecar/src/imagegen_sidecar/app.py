"""HTTP surface: POST /generate and GET /health.

Endpoints stay async for request parsing, but the CPU-bound pipeline
runs in the worker threadpool behind a bounded semaphore, so ``jobs``
caps how many renders run at once regardless of connection count.
"""

from __future__ import annotations

import base64
import logging
import random
import threading

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from . import __version__, pipeline
from .validation import RequestProblem, validate_body

logger = logging.getLogger(__name__)

DEFAULT_SIZE = 512
MODEL_NAME = "procedural-blend-1"
BACKEND_ID = "imagegen-sidecar"


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    model_name: str = MODEL_NAME,
    backend_id: str = BACKEND_ID,
    jobs: int = 1,
    rng: random.Random | None = None,
) -> FastAPI:
    app = FastAPI(title="imagegen-sidecar", version=__version__)
    slots = threading.BoundedSemaphore(jobs)
    seed_rng = rng or random.Random()
    seed_lock = threading.Lock()

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "model": model_name}

    @app.post("/generate")
    async def generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        try:
            fields = validate_body(body)
        except RequestProblem as exc:
            return _error(exc.status, str(exc))

        init = None
        if fields["init_bytes"] is not None:
            try:
                init = pipeline.decode_image(fields["init_bytes"])
            except ValueError as exc:
                return _error(400, str(exc))

        seed = fields["seed"]
        if seed is None:
            with seed_lock:
                seed = seed_rng.getrandbits(32)
        width = fields["width"] or DEFAULT_SIZE
        height = fields["height"] or DEFAULT_SIZE

        def work() -> list[str]:
            with slots:
                images = []
                for index in range(fields["n"]):
                    image = pipeline.render(
                        fields["prompt"],
                        seed,
                        width,
                        height,
                        image_index=index,
                        init=init,
                        strength=fields["strength"],
                    )
                    images.append(base64.b64encode(pipeline.encode_png(image)).decode("ascii"))
                return images

        try:
            images = await run_in_threadpool(work)
        except Exception as exc:  # pipeline failure -> protocol 500
            logger.exception("pipeline failure")
            return _error(500, f"pipeline failure: {exc}")
        return {"images": images, "seed_used": seed, "backend": backend_id}

    return app
