"""Preference study: ballots, exact tallies, serialization, report."""

from __future__ import annotations

import csv
import json

import pytest

from idealoop import png
from idealoop.prefs import (
    ABSTAIN,
    VARIANT_ORDER,
    Ballot,
    MissingVariant,
    PrefsError,
    UnvotedBallot,
    Variant,
    VariantKind,
    build_ballots,
    load_ballots,
    record_vote,
    render_report,
    save_ballots,
    tally,
)

from support import DATA_DIR


def _variants(idea_ids):
    return {
        idea_id: {
            kind: Variant(kind=kind, image_digest=f"{idea_id}-{kind.value}")
            for kind in VARIANT_ORDER
        }
        for idea_id in idea_ids
    }


def _voted(idea_id, choice, order=VARIANT_ORDER, rater_id="r0"):
    return Ballot(
        idea_id=idea_id, rater_id=rater_id, presentation_order=tuple(order), choice=choice
    )


class TestModels:
    def test_variant_requires_digest(self):
        with pytest.raises(PrefsError):
            Variant(kind=VariantKind.ENGINE_REFINED, image_digest="")

    @pytest.mark.parametrize(
        "order",
        [
            (VariantKind.MANUAL_INITIAL,) * 3,
            (VariantKind.MANUAL_INITIAL, VariantKind.ENGINE_INITIAL),
        ],
    )
    def test_order_must_be_full_permutation(self, order):
        with pytest.raises(PrefsError, match="permutation"):
            Ballot(idea_id="i", rater_id="r0", presentation_order=order)

    def test_choice_type_checked(self):
        with pytest.raises(PrefsError, match="choice"):
            _voted("i", "second one from the left")

    def test_abstain_is_a_legal_choice(self):
        assert _voted("i", ABSTAIN).voted


class TestBuildBallots:
    def test_deterministic_per_seed(self):
        ideas = [f"idea-{i}" for i in range(20)]
        variants = _variants(ideas)
        first = build_ballots(ideas, variants, rng_seed=11, raters=2)
        second = build_ballots(ideas, variants, rng_seed=11, raters=2)
        assert first == second
        other = build_ballots(ideas, variants, rng_seed=12, raters=2)
        assert [b.presentation_order for b in first] != [b.presentation_order for b in other]

    def test_one_ballot_per_idea_rater_pair(self):
        ideas = ["a", "b", "c"]
        ballots = build_ballots(ideas, _variants(ideas), rng_seed=0, raters=2)
        assert len(ballots) == 6
        assert {(b.idea_id, b.rater_id) for b in ballots} == {
            (idea, f"r{r}") for idea in ideas for r in range(2)
        }
        assert all(b.choice is None for b in ballots)

    def test_orders_vary_across_ballots(self):
        ideas = [f"idea-{i}" for i in range(30)]
        ballots = build_ballots(ideas, _variants(ideas), rng_seed=5)
        assert len({b.presentation_order for b in ballots}) > 1

    def test_missing_variant_reported_by_name(self):
        variants = _variants(["a"])
        del variants["a"][VariantKind.ENGINE_REFINED]
        with pytest.raises(MissingVariant, match="engine_refined"):
            build_ballots(["a"], variants, rng_seed=0)

    def test_raters_must_be_positive(self):
        with pytest.raises(PrefsError):
            build_ballots([], {}, rng_seed=0, raters=0)


class TestTally:
    def test_published_style_example(self):
        """14/31/59 of 104 must land on 13.5/29.8/56.7 with a 26.9 delta."""
        ballots = (
            [_voted(f"i{k}", VariantKind.MANUAL_INITIAL) for k in range(14)]
            + [_voted(f"j{k}", VariantKind.ENGINE_INITIAL) for k in range(31)]
            + [_voted(f"k{k}", VariantKind.ENGINE_REFINED) for k in range(59)]
        )
        table = tally(ballots)
        assert table.total == 104
        assert table.abstains == 0
        assert table.percentages == {
            VariantKind.MANUAL_INITIAL: 13.5,
            VariantKind.ENGINE_INITIAL: 29.8,
            VariantKind.ENGINE_REFINED: 56.7,
        }
        assert table.delta_iteration == pytest.approx(26.9)

    def test_delta_can_go_negative(self):
        ballots = (
            [_voted(f"i{k}", VariantKind.MANUAL_INITIAL) for k in range(35)]
            + [_voted(f"j{k}", VariantKind.ENGINE_INITIAL) for k in range(35)]
            + [_voted(f"k{k}", VariantKind.ENGINE_REFINED) for k in range(34)]
        )
        table = tally(ballots)
        assert table.percentages[VariantKind.ENGINE_INITIAL] == 33.7
        assert table.percentages[VariantKind.ENGINE_REFINED] == 32.7
        assert table.delta_iteration == pytest.approx(-1.0)

    def test_abstains_stay_in_denominator(self):
        ballots = [
            _voted("a", VariantKind.MANUAL_INITIAL),
            _voted("b", VariantKind.ENGINE_INITIAL),
            _voted("c", VariantKind.ENGINE_REFINED),
            _voted("d", ABSTAIN),
        ]
        table = tally(ballots)
        assert table.total == 4
        assert table.abstains == 1
        assert all(value == 25.0 for value in table.percentages.values())

    def test_half_up_rounding(self):
        # 1 of 8 = 12.5 exactly; half-up keeps the 5.
        ballots = [_voted("a", VariantKind.ENGINE_REFINED)] + [
            _voted(f"x{k}", ABSTAIN) for k in range(7)
        ]
        assert tally(ballots).percentages[VariantKind.ENGINE_REFINED] == 12.5

    def test_empty_study(self):
        table = tally([])
        assert table.total == 0
        assert all(value == 0.0 for value in table.percentages.values())
        assert table.delta_iteration == 0.0

    def test_unvoted_ballot_rejected(self):
        with pytest.raises(UnvotedBallot):
            tally([Ballot(idea_id="a", rater_id="r0", presentation_order=VARIANT_ORDER)])

    def test_committed_vote_fixture(self):
        table = tally(load_ballots(DATA_DIR / "table1_votes.jsonl"))
        assert table.counts == {
            VariantKind.MANUAL_INITIAL: 14,
            VariantKind.ENGINE_INITIAL: 31,
            VariantKind.ENGINE_REFINED: 59,
        }
        assert table.delta_iteration == pytest.approx(26.9)


class TestSerialization:
    def test_round_trip_preserves_everything(self, tmp_path):
        ideas = ["a", "b"]
        ballots = build_ballots(ideas, _variants(ideas), rng_seed=3, raters=2)
        ballots = record_vote(ballots, "a", "r0", position=2)
        ballots = record_vote(ballots, "b", "r1", position=None, abstain=True)
        path = tmp_path / "ballots.jsonl"
        save_ballots(path, ballots)
        assert load_ballots(path) == ballots

    def test_jsonl_lines_are_sorted_objects(self, tmp_path):
        ballots = build_ballots(["a"], _variants(["a"]), rng_seed=1)
        path = tmp_path / "ballots.jsonl"
        save_ballots(path, ballots)
        line = path.read_text().splitlines()[0]
        doc = json.loads(line)
        assert list(doc) == ["choice", "idea_id", "order", "rater_id"]
        assert doc["choice"] is None


class TestRecordVote:
    def test_vote_lands_on_displayed_position(self):
        ballots = build_ballots(["a"], _variants(["a"]), rng_seed=9)
        voted = record_vote(ballots, "a", "r0", position=1)
        assert voted[0].choice == ballots[0].presentation_order[1]
        # Input list is untouched.
        assert ballots[0].choice is None

    def test_abstain_flag(self):
        ballots = build_ballots(["a"], _variants(["a"]), rng_seed=9)
        assert record_vote(ballots, "a", "r0", position=None, abstain=True)[0].choice == ABSTAIN

    def test_bad_position_rejected(self):
        ballots = build_ballots(["a"], _variants(["a"]), rng_seed=9)
        with pytest.raises(PrefsError, match="position"):
            record_vote(ballots, "a", "r0", position=3)

    def test_unknown_ballot_rejected(self):
        with pytest.raises(PrefsError, match="no ballot"):
            record_vote([], "ghost", "r9", position=0)


class TestReport:
    def _table_and_ballots(self):
        ballots = [
            _voted("a", VariantKind.ENGINE_REFINED),
            _voted("b", VariantKind.ENGINE_INITIAL),
            _voted("c", VariantKind.ENGINE_REFINED),
            _voted("d", ABSTAIN),
        ]
        return tally(ballots), ballots

    def test_all_artifacts_written(self, tmp_path):
        table, ballots = self._table_and_ballots()
        md_path = render_report(table, ballots, tmp_path)
        assert md_path == tmp_path / "report.md"
        for name in ("report.md", "report.html", "preferences.csv", "figures/preferences.png"):
            assert (tmp_path / name).is_file(), name
        assert (tmp_path / "figures" / "preferences.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_markdown_content(self, tmp_path):
        table, ballots = self._table_and_ballots()
        text = render_report(table, ballots, tmp_path).read_text()
        assert "Ballots: 4 (abstained: 1)" in text
        assert "| loop prompt, refined | 2 | 50.0 |" in text
        assert "**+25.0** points" in text
        assert "figures/preferences.png" in text

    def test_csv_rows(self, tmp_path):
        table, ballots = self._table_and_ballots()
        render_report(table, ballots, tmp_path)
        with open(tmp_path / "preferences.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["variant", "votes", "percentage"]
        assert rows[3] == ["engine_refined", "2", "50.0"]
        assert rows[4] == ["abstain", "1", "25.0"]
        assert rows[5] == ["delta_iteration", "", "25.0"]

    def test_images_copied_when_resolver_given(self, tmp_path):
        table, ballots = self._table_and_ballots()
        fake_png = png.solid_rgb(4, 4, (10, 20, 30))
        variants = {
            "a": {
                kind: Variant(kind=kind, image_digest=f"digest-{kind.value}")
                for kind in VARIANT_ORDER
            }
        }
        render_report(
            table, ballots, tmp_path, variants_by_idea=variants, resolve_digest=lambda d: fake_png
        )
        copied = sorted(p.name for p in (tmp_path / "images").iterdir())
        assert copied == sorted(f"digest-{kind.value}.png" for kind in VARIANT_ORDER)
        text = (tmp_path / "report.md").read_text()
        assert "images/digest-engine_refined.png" in text

    def test_empty_study_marker(self, tmp_path):
        render_report(tally([]), [], tmp_path)
        assert "No votes recorded." in (tmp_path / "report.md").read_text()
        assert "No votes recorded." in (tmp_path / "report.html").read_text()
