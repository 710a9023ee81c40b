"""End-to-end: the idealoop CLI drives a run against a live sidecar.

The sidecar consumes the main package only through its external
surfaces: the CLI, the generation wire protocol, and the on-disk run
manifest.
"""

from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest
import yaml
from PIL import Image


def _wrapped(*texts: str) -> str:
    return "\n".join(f"<START>{t}<END>" for t in texts)


@pytest.fixture
def run_setup(tmp_path, sidecar_url):
    script = [
        _wrapped("a red fox in fresh snow, soft light", "a fox curled in a snowdrift, dusk"),
        _wrapped("1"),
    ]
    (tmp_path / "script.json").write_text(json.dumps(script))
    config = {
        "n_candidates": 2,
        "max_iterations": 1,
        "seed": 11,
        "retry_limit": 1,
        "image_width": 48,
        "image_height": 48,
        "lmm": {"id": "scripted-lmm", "kind": "scripted", "script_file": "script.json"},
        "generator": {
            "id": "sidecar",
            "kind": "local_sidecar",
            "endpoint": sidecar_url,
            "timeout": 30,
        },
    }
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(config))
    (tmp_path / "idea.yaml").write_text(
        yaml.safe_dump({"segments": [{"text": "a red fox in snow"}]})
    )
    return tmp_path


def test_cli_run_against_live_sidecar(run_setup):
    out_dir = run_setup / "runs-root"
    result = subprocess.run(
        [
            sys.executable, "-m", "idealoop.cli", "run",
            "--config", str(run_setup / "config.yaml"),
            "--idea", str(run_setup / "idea.yaml"),
            "--out", str(out_dir),
            "--run-id", "via-sidecar",
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert result.returncode == 0, result.stderr
    assert "finished after 1 iterations" in result.stdout

    manifest = json.loads((out_dir / "runs" / "via-sidecar" / "manifest.json").read_text())
    assert manifest["status"] == "finished"
    [iteration] = manifest["iterations"]
    assert [d["seed"] for d in iteration["drafts"]] == [11, 12]
    assert all(d["backend_id"] == "sidecar" for d in iteration["drafts"])
    assert iteration["selection_index"] == 1
    assert manifest["final_image_digest"] == iteration["drafts"][1]["digest"]

    assets_dir = out_dir / "runs" / "via-sidecar" / "assets"
    digests = {d["digest"] for d in iteration["drafts"]}
    assert len(digests) == 2
    for digest in digests:
        image = Image.open(io.BytesIO((assets_dir / f"{digest}.png").read_bytes()))
        assert image.size == (48, 48)


def test_cli_reports_backend_failure_when_sidecar_is_down(tmp_path):
    (tmp_path / "script.json").write_text(json.dumps([_wrapped("p0", "p1")]))
    config = {
        "n_candidates": 2,
        "max_iterations": 1,
        "seed": 1,
        "retry_limit": 0,
        "lmm": {"id": "scripted-lmm", "kind": "scripted", "script_file": "script.json"},
        "generator": {
            "id": "sidecar",
            "kind": "local_sidecar",
            "endpoint": "http://127.0.0.1:9",  # nothing listens here
            "timeout": 2,
        },
    }
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(config))
    (tmp_path / "idea.yaml").write_text(
        yaml.safe_dump({"segments": [{"text": "a red fox in snow"}]})
    )
    result = subprocess.run(
        [
            sys.executable, "-m", "idealoop.cli", "run",
            "--config", str(tmp_path / "config.yaml"),
            "--idea", str(tmp_path / "idea.yaml"),
            "--out", str(tmp_path / "runs-root"),
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert result.returncode == 4  # loop failed: every draft degraded to a placeholder
    manifest_dirs = list((tmp_path / "runs-root" / "runs").iterdir())
    assert len(manifest_dirs) == 1
    manifest = json.loads((manifest_dirs[0] / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert "AllDraftsFailed" in manifest["failure_reason"]
