"""The shared protocol vectors and error contract, over live HTTP."""

from __future__ import annotations

import base64
import io
import json

import pytest
import requests
from PIL import Image

from sidecar_support import PROTOCOL_VECTORS

VECTORS = json.loads(PROTOCOL_VECTORS.read_text())["vectors"]
VECTOR_IDS = [vector["name"] for vector in VECTORS]


def _png_size(raw: bytes) -> tuple[int, int]:
    return Image.open(io.BytesIO(raw)).size


@pytest.fixture(scope="session")
def vector_results(sidecar_url) -> dict[str, dict]:
    results = {}
    for vector in VECTORS:
        response = requests.post(f"{sidecar_url}/generate", json=vector["request"], timeout=30)
        assert response.status_code == 200, f"{vector['name']}: {response.text}"
        body = response.json()
        results[vector["name"]] = {
            "body": body,
            "images": [base64.b64decode(item) for item in body["images"]],
        }
    return results


@pytest.mark.parametrize("vector", VECTORS, ids=VECTOR_IDS)
def test_vector_conformance_over_http(vector, vector_results):
    expect = vector["expect"]
    result = vector_results[vector["name"]]
    body, images = result["body"], result["images"]

    assert len(images) == expect["images"]
    for raw in images:
        assert _png_size(raw) == (expect["width"], expect["height"])

    if expect["seed_echo"]:
        assert body["seed_used"] == vector["request"]["seed"]
    else:
        assert vector["request"]["seed"] is None
        assert isinstance(body["seed_used"], int) and body["seed_used"] >= 0

    if expect.get("distinct_images"):
        assert len(set(images)) == len(images)
    if "same_as" in expect:
        assert images[0] == vector_results[expect["same_as"]]["images"][0]
    if "not_same_as" in expect:
        assert images[0] != vector_results[expect["not_same_as"]]["images"][0]

    assert body["backend"] == "imagegen-sidecar"


def test_health(sidecar_url):
    body = requests.get(f"{sidecar_url}/health", timeout=10).json()
    assert body["status"] == "ok"
    assert body["model"]


def test_repeat_request_is_byte_stable(sidecar_url):
    request = VECTORS[0]["request"]
    first = requests.post(f"{sidecar_url}/generate", json=request, timeout=30).json()
    second = requests.post(f"{sidecar_url}/generate", json=request, timeout=30).json()
    assert first["images"] == second["images"]
    assert first["seed_used"] == second["seed_used"]


def _valid_request(**overrides) -> dict:
    base = {
        "prompt": "a paper crane on a desk",
        "seed": 3,
        "width": 32,
        "height": 32,
        "n": 1,
        "init_image": None,
        "strength": None,
    }
    base.update(overrides)
    return base


class TestErrorContract:
    def test_non_json_body_is_400(self, sidecar_url):
        response = requests.post(
            f"{sidecar_url}/generate",
            data=b"not json at all",
            headers={"Content-Type": "application/json"},
            timeout=10,
        )
        assert response.status_code == 400
        assert "error" in response.json()

    @pytest.mark.parametrize(
        "body",
        [
            _valid_request(prompt=None),
            _valid_request(prompt=""),
            _valid_request(seed="seven"),
            _valid_request(n=True),
            _valid_request(init_image="%%% not base64 %%%"),
            _valid_request(strength="high"),
        ],
        ids=["prompt_null", "prompt_empty", "seed_string", "n_bool", "init_bad_b64", "strength_string"],
    )
    def test_malformed_is_400(self, sidecar_url, body):
        response = requests.post(f"{sidecar_url}/generate", json=body, timeout=10)
        assert response.status_code == 400
        assert "error" in response.json()

    def test_undecodable_init_bytes_are_400(self, sidecar_url):
        body = _valid_request(
            init_image=base64.b64encode(b"valid base64, not an image").decode(), strength=0.5
        )
        response = requests.post(f"{sidecar_url}/generate", json=body, timeout=10)
        assert response.status_code == 400
        assert "decodable" in response.json()["error"]

    @pytest.mark.parametrize(
        "body",
        [
            _valid_request(n=0),
            _valid_request(width=0),
            _valid_request(strength=0.5),  # no init image
            _valid_request(
                init_image=VECTORS[3]["request"]["init_image"], strength=1.5
            ),
        ],
        ids=["n_zero", "width_zero", "strength_no_init", "strength_high"],
    )
    def test_unsupported_is_422(self, sidecar_url, body):
        response = requests.post(f"{sidecar_url}/generate", json=body, timeout=10)
        assert response.status_code == 422
        assert "error" in response.json()

    def test_pipeline_failure_is_500(self, monkeypatch):
        import random

        from imagegen_sidecar import app as app_module
        from sidecar_support import LiveServer

        def explode(*args, **kwargs):
            raise RuntimeError("injected failure")

        monkeypatch.setattr(app_module.pipeline, "render", explode)
        server = LiveServer(app_module.create_app(rng=random.Random(1)))
        url = server.start()
        try:
            response = requests.post(f"{url}/generate", json=_valid_request(), timeout=10)
            assert response.status_code == 500
            assert "injected failure" in response.json()["error"]
        finally:
            server.stop()
