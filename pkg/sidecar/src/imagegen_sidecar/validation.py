"""Wire-protocol request validation.

The split the protocol mandates: structurally broken requests (missing
or mistyped fields, undecodable base64) are 400; well-formed requests
asking for something out of range (n < 1, zero dimensions, strength
outside (0, 1] or without an init image) are 422.
"""

from __future__ import annotations

import base64
import binascii


class RequestProblem(Exception):
    """A rejected request, carrying the HTTP status it maps to."""

    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status


def validate_body(body: object) -> dict:
    if not isinstance(body, dict):
        raise RequestProblem(400, "request body must be a JSON object")
    prompt = body.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise RequestProblem(400, "prompt must be a non-empty string")
    out: dict = {"prompt": prompt}
    for name, default in (("width", None), ("height", None), ("n", 1), ("seed", None)):
        value = body.get(name, default)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise RequestProblem(400, f"{name} must be an integer")
        out[name] = value
    init_b64 = body.get("init_image")
    if init_b64 is not None:
        if not isinstance(init_b64, str):
            raise RequestProblem(400, "init_image must be a base64 string")
        try:
            out["init_bytes"] = base64.b64decode(init_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise RequestProblem(400, f"init_image is not valid base64: {exc}")
    else:
        out["init_bytes"] = None
    strength = body.get("strength")
    if strength is not None and (
        isinstance(strength, bool) or not isinstance(strength, (int, float))
    ):
        raise RequestProblem(400, "strength must be a number")
    out["strength"] = float(strength) if strength is not None else None

    if out["n"] is None or out["n"] < 1:
        raise RequestProblem(422, "n must be >= 1")
    for name in ("width", "height"):
        if out[name] is not None and out[name] < 1:
            raise RequestProblem(422, f"{name} must be >= 1")
    if out["strength"] is not None:
        if out["init_bytes"] is None:
            raise RequestProblem(422, "strength requires init_image")
        if not (0.0 < out["strength"] <= 1.0):
            raise RequestProblem(422, "strength must be in (0, 1]")
    return out
