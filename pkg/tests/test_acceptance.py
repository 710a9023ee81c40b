"""Acceptance gate: one test per headline behavior, run with -v for a
pass/fail line each. Timing bounds are generous ceilings, not benchmarks."""

from __future__ import annotations

import json
import random
import string
import time
from dataclasses import replace

import pytest

from idealoop import engine
from idealoop.core import RunStatus
from idealoop.imagegen import MockGenerator
from idealoop.lmm import CallRecorder, ScriptedLmm
from idealoop.prefs import (
    VARIANT_ORDER,
    VariantKind,
    build_ballots,
    load_ballots,
    tally,
)
from idealoop.store import RunStore
from idealoop.templates import (
    ParseError,
    TemplateSet,
    parse_selection,
    parse_wrapped,
)

from support import DATA_DIR, full_loop_script
from test_prefs import _variants


def test_preference_arithmetic_matches_published_style_tally():
    """14/31/59 votes of 104 -> 13.5/29.8/56.7 percent, delta +26.9."""
    started = time.monotonic()
    table = tally(load_ballots(DATA_DIR / "table1_votes.jsonl"))
    assert table.total == 104
    assert table.counts == {
        VariantKind.MANUAL_INITIAL: 14,
        VariantKind.ENGINE_INITIAL: 31,
        VariantKind.ENGINE_REFINED: 59,
    }
    assert table.percentages == {
        VariantKind.MANUAL_INITIAL: 13.5,
        VariantKind.ENGINE_INITIAL: 29.8,
        VariantKind.ENGINE_REFINED: 56.7,
    }
    assert table.delta_iteration == pytest.approx(26.9, abs=1e-9)
    assert time.monotonic() - started < 1.0


def test_loop_runs_exact_call_schedule_for_three_iterations(image_idea, mock_config):
    """N=3, T=3: 17 backend calls in order, 9 distinct drafts, 2 memory rows."""
    started = time.monotonic()
    recorder = CallRecorder()
    state = engine.run(
        image_idea,
        mock_config,
        ScriptedLmm(full_loop_script(3, 3), recorder=recorder),
        MockGenerator(recorder=recorder),
    )
    assert recorder.labels == (
        ["gen_prompts"]
        + ["generate"] * 3 + ["select", "feedback", "revise"]
        + ["generate"] * 3 + ["select", "feedback", "revise"]
        + ["generate"] * 3 + ["select"]
    )
    assert state.status is RunStatus.FINISHED
    assert len(state.iterations) == 3
    digests = {d.image.digest for rec in state.iterations for d in rec.drafts}
    assert len(digests) == 9
    assert len(state.memory) == 2
    assert time.monotonic() - started < 5.0


def test_memory_mirrors_selected_triples_field_by_field(image_idea, mock_config):
    """Memory row k is exactly iteration k's (picked prompt, image, feedback)."""
    state = engine.run(
        image_idea, mock_config, ScriptedLmm(full_loop_script(3, 3)), MockGenerator()
    )
    assert len(state.memory) == len(state.iterations) - 1
    for k, row in enumerate(state.memory):
        record = state.iterations[k]
        assert record.selection_index is not None
        assert row.selected_prompt is record.prompts[record.selection_index]
        assert row.selected_image is record.drafts[record.selection_index]
        assert row.feedback is record.feedback
        assert row.selected_prompt.iteration == k
        assert row.selected_image.iteration == k
        assert row.feedback.iteration == k


def test_instruction_templates_match_committed_goldens():
    """Loaded templates are byte-identical to the governed template files."""
    from importlib import resources

    templates = TemplateSet.load()
    package_files = resources.files("idealoop") / "prompts"
    for name in ("generate", "select", "feedback", "revise"):
        golden = (package_files / f"{name}.txt").read_text(encoding="utf-8")
        assert getattr(templates, name) == golden, f"{name} template drifted"
    assert "{IDEA}" in templates.generate and "{N}" in templates.generate
    assert "{N-1}" in templates.select and "{images}" in templates.select
    assert "{history}" in templates.feedback and "{t}" in templates.feedback
    assert "{reflection}" in templates.revise and "{prompt}" in templates.revise


def test_reply_parser_is_total_over_fuzzed_input():
    """10k round-trips parse back exactly; 10k byte soups never escape
    the parse-error family. Bounded at 30 seconds."""
    started = time.monotonic()
    rng = random.Random(0xC0FFEE)
    alphabet = string.ascii_letters + string.digits + " ,.;:!?'\"-()\n\t"

    for _ in range(10_000):
        n = rng.randint(1, 4)
        texts = []
        for _ in range(n):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 60))).strip()
            texts.append(text or "x")
        reply = "".join(
            f"{'':>{rng.randint(0, 3)}}<START>{text}<END>\n" for text in texts
        )
        assert list(parse_wrapped(reply, n)) == texts

    fragments = ["<START>", "<END>", "<STA", "RT>", "END", "<", ">", "42", "-1", ""]
    aborted = 0
    for _ in range(10_000):
        soup = "".join(
            rng.choice(fragments) if rng.random() < 0.4 else rng.choice(alphabet)
            for _ in range(rng.randint(0, 80))
        )
        for parse in (
            lambda s: parse_wrapped(s, rng.randint(1, 3)),
            lambda s: parse_selection(s, 3),
        ):
            try:
                parse(soup)
            except ParseError:
                pass
            except Exception:  # noqa: BLE001 - the whole point of the test
                aborted += 1
    assert aborted == 0
    assert time.monotonic() - started < 30.0


def test_ballot_shuffling_is_uniform_and_seed_deterministic():
    """6000 ballots: every variant sits at every position 2000 +/- 120."""
    ideas = [f"idea-{i}" for i in range(2000)]
    variants = _variants(ideas)
    ballots = build_ballots(ideas, variants, rng_seed=20240817, raters=3)
    assert len(ballots) == 6000
    position_counts = {
        (position, kind): 0 for position in range(3) for kind in VARIANT_ORDER
    }
    for ballot in ballots:
        assert sorted(ballot.presentation_order) == sorted(VARIANT_ORDER)
        for position, kind in enumerate(ballot.presentation_order):
            position_counts[(position, kind)] += 1
    for (position, kind), count in position_counts.items():
        assert abs(count - 2000) <= 120, f"{kind.value} at position {position}: {count}"
    again = build_ballots(ideas, variants, rng_seed=20240817, raters=3)
    assert again == ballots


@pytest.mark.parametrize("cut,consumed", [(5, 4), (6, 4), (7, 5), (8, 6)])
def test_resume_reproduces_the_uninterrupted_run(
    image_idea, mock_config, tmp_path, cut, consumed
):
    """Interrupt at every step boundary of iteration 1; resuming yields a
    manifest byte-identical to the straight run's, timestamps aside."""
    script = full_loop_script(3, 3)

    straight_store = RunStore(tmp_path / "straight")
    straight = engine.run(
        image_idea, mock_config, ScriptedLmm(script), MockGenerator(),
        store=straight_store, run_id="acceptance",
    )

    resumed_store = RunStore(tmp_path / f"cut{cut}")
    engine.run(
        image_idea, mock_config, ScriptedLmm(script), MockGenerator(),
        store=resumed_store, run_id="acceptance", max_steps=cut,
    )
    resumed = engine.resume(
        resumed_store, "acceptance", ScriptedLmm(script[consumed:]), MockGenerator()
    )
    assert resumed == straight

    def doc_without_timestamps(store: RunStore) -> dict:
        doc = json.loads(store.manifest_path("acceptance").read_text())
        doc.pop("created_at")
        doc.pop("updated_at")
        return doc

    assert doc_without_timestamps(resumed_store) == doc_without_timestamps(straight_store)


def test_degradation_policy_keeps_runs_alive(text_idea, mock_config):
    """An unparseable selection (twice) falls back to draft 0 with a flag;
    a refused generation becomes a flagged placeholder. Neither kills the run."""
    script = full_loop_script(3, 3)
    script[1] = "I like the second one best"
    script.insert(2, "the SECOND one, please")
    degraded = engine.run(text_idea, mock_config, ScriptedLmm(script), MockGenerator())
    assert degraded.status is RunStatus.FINISHED
    assert degraded.iterations[0].selection_index == 0
    assert degraded.iterations[0].degraded_selection is True

    refusing = MockGenerator(refuse_texts={"p0-2"})
    survived = engine.run(
        text_idea, mock_config, ScriptedLmm(full_loop_script(3, 3)), refusing
    )
    assert survived.status is RunStatus.FINISHED
    flags = [d.placeholder for d in survived.iterations[0].drafts]
    assert flags == [False, False, True]
    assert all(not d.placeholder for rec in survived.iterations[1:] for d in rec.drafts)
