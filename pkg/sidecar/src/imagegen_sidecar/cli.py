"""Serve the sidecar: ``imagegen-sidecar --host 127.0.0.1 --port 8077``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import BACKEND_ID, MODEL_NAME, create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imagegen-sidecar", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8077)
    parser.add_argument("--jobs", type=int, default=1, help="max concurrent renders")
    parser.add_argument("--model-name", default=MODEL_NAME)
    parser.add_argument("--backend-id", default=BACKEND_ID)
    parser.add_argument("--log-level", default="info")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    app = create_app(model_name=args.model_name, backend_id=args.backend_id, jobs=args.jobs)
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
