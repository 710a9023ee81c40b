"""Three-way preference study over run outputs.

For each idea, raters compare a manually prompted image, the loop's
first-round image, and its final refined image, shown in a seeded-random
order so variant identity is blind. Tallies use exact decimal arithmetic
(one decimal place, round half up) with abstentions kept in the
denominator; the headline delta is the refined percentage minus the
initial percentage, both already rounded.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

ABSTAIN = "abstain"


class PrefsError(Exception):
    """Base class for study failures."""


class MissingVariant(PrefsError):
    """An idea entered the study without all three variants."""


class UnvotedBallot(PrefsError):
    """Tally was requested while a ballot still has no choice recorded."""


class VariantKind(str, Enum):
    """The three conditions compared per idea."""

    MANUAL_INITIAL = "manual_initial"
    ENGINE_INITIAL = "engine_initial"
    ENGINE_REFINED = "engine_refined"


# Canonical (pre-shuffle) presentation order.
VARIANT_ORDER: tuple[VariantKind, ...] = (
    VariantKind.MANUAL_INITIAL,
    VariantKind.ENGINE_INITIAL,
    VariantKind.ENGINE_REFINED,
)

_LABELS = {
    VariantKind.MANUAL_INITIAL: "manual prompt, initial round",
    VariantKind.ENGINE_INITIAL: "loop prompt, initial round",
    VariantKind.ENGINE_REFINED: "loop prompt, refined",
}


@dataclass(frozen=True)
class Variant:
    """One condition's image for one idea."""

    kind: VariantKind
    image_digest: str
    source_run_id: str | None = None  # None for manually prompted images

    def __post_init__(self) -> None:
        if not self.image_digest:
            raise PrefsError("variant requires an image digest")


@dataclass(frozen=True)
class Ballot:
    """One rater's comparison slot for one idea.

    ``choice`` is None until voted; raters record either a variant kind
    or the literal abstain marker.
    """

    idea_id: str
    rater_id: str
    presentation_order: tuple[VariantKind, ...]
    choice: VariantKind | str | None = None

    def __post_init__(self) -> None:
        if sorted(self.presentation_order) != sorted(VARIANT_ORDER):
            raise PrefsError(
                f"presentation order must be a permutation of all variants, got {self.presentation_order}"
            )
        if self.choice is not None and self.choice != ABSTAIN:
            if not isinstance(self.choice, VariantKind):
                raise PrefsError(f"choice must be a variant kind or {ABSTAIN!r}")

    @property
    def voted(self) -> bool:
        return self.choice is not None


@dataclass(frozen=True)
class PreferenceTable:
    """Tally output: counts, half-up one-decimal percentages, and the

    refined-minus-initial percentage delta."""

    counts: Mapping[VariantKind, int]
    abstains: int
    total: int
    percentages: Mapping[VariantKind, float]
    delta_iteration: float


def build_ballots(
    idea_ids: Sequence[str],
    variants_by_idea: Mapping[str, Mapping[VariantKind, Variant]],
    rng_seed: int,
    raters: int = 1,
) -> list[Ballot]:
    """One unvoted ballot per (idea, rater slot), orders drawn uniformly.

    Deterministic for a given seed and input order.
    """
    if raters < 1:
        raise PrefsError("raters must be >= 1")
    rng = random.Random(rng_seed)
    ballots = []
    for idea_id in idea_ids:
        variants = variants_by_idea.get(idea_id, {})
        missing = [k.value for k in VARIANT_ORDER if k not in variants]
        if missing:
            raise MissingVariant(f"idea {idea_id} lacks variants: {', '.join(missing)}")
        for rater in range(raters):
            order = list(VARIANT_ORDER)
            rng.shuffle(order)
            ballots.append(
                Ballot(
                    idea_id=idea_id,
                    rater_id=f"r{rater}",
                    presentation_order=tuple(order),
                )
            )
    return ballots


def _pct(count: int, total: int) -> Decimal:
    if total == 0:
        return Decimal("0.0")
    return (Decimal(count * 100) / Decimal(total)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


def tally(ballots: Sequence[Ballot]) -> PreferenceTable:
    """Count votes; abstentions stay in the percentage denominator."""
    counts = {kind: 0 for kind in VARIANT_ORDER}
    abstains = 0
    for ballot in ballots:
        if not ballot.voted:
            raise UnvotedBallot(
                f"ballot ({ballot.idea_id}, {ballot.rater_id}) has no recorded choice"
            )
        if ballot.choice == ABSTAIN:
            abstains += 1
        else:
            assert isinstance(ballot.choice, VariantKind)
            counts[ballot.choice] += 1
    total = len(ballots)
    percentages = {kind: _pct(counts[kind], total) for kind in VARIANT_ORDER}
    delta = percentages[VariantKind.ENGINE_REFINED] - percentages[VariantKind.ENGINE_INITIAL]
    return PreferenceTable(
        counts=counts,
        abstains=abstains,
        total=total,
        percentages={kind: float(value) for kind, value in percentages.items()},
        delta_iteration=float(delta),
    )


# -- serialization ----------------------------------------------------------


def ballot_to_doc(ballot: Ballot) -> dict:
    choice: str | None
    if ballot.choice is None:
        choice = None
    elif ballot.choice == ABSTAIN:
        choice = ABSTAIN
    else:
        choice = ballot.choice.value
    return {
        "idea_id": ballot.idea_id,
        "rater_id": ballot.rater_id,
        "order": [kind.value for kind in ballot.presentation_order],
        "choice": choice,
    }


def ballot_from_doc(doc: Mapping) -> Ballot:
    raw_choice = doc.get("choice")
    if raw_choice is None or raw_choice == ABSTAIN:
        choice: VariantKind | str | None = raw_choice
    else:
        choice = VariantKind(raw_choice)
    return Ballot(
        idea_id=doc["idea_id"],
        rater_id=doc["rater_id"],
        presentation_order=tuple(VariantKind(k) for k in doc["order"]),
        choice=choice,
    )


def save_ballots(path: Path | str, ballots: Iterable[Ballot]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ballot in ballots:
            fh.write(json.dumps(ballot_to_doc(ballot), sort_keys=True) + "\n")


def load_ballots(path: Path | str) -> list[Ballot]:
    ballots = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ballots.append(ballot_from_doc(json.loads(line)))
    return ballots


def record_vote(
    ballots: Sequence[Ballot],
    idea_id: str,
    rater_id: str,
    position: int | None,
    abstain: bool = False,
) -> list[Ballot]:
    """Return ballots with one vote recorded by displayed position.

    Position indexes the shuffled presentation order, so the caller never
    needs to know which variant sat where.
    """
    out = list(ballots)
    for i, ballot in enumerate(out):
        if ballot.idea_id == idea_id and ballot.rater_id == rater_id:
            if abstain:
                out[i] = replace(ballot, choice=ABSTAIN)
            else:
                if position is None or not 0 <= position < len(ballot.presentation_order):
                    raise PrefsError(f"position must be in 0..{len(ballot.presentation_order) - 1}")
                out[i] = replace(ballot, choice=ballot.presentation_order[position])
            return out
    raise PrefsError(f"no ballot for idea {idea_id!r} and rater {rater_id!r}")


# -- report -----------------------------------------------------------------

DigestResolver = Callable[[str], bytes]


def _write_figure(table: PreferenceTable, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [_LABELS[kind] for kind in VARIANT_ORDER]
    values = [table.percentages[kind] for kind in VARIANT_ORDER]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    bars = ax.bar(labels, values, color=["#b0b0b0", "#7aa6c2", "#2d6a8f"])
    ax.set_ylabel("preferred (%)")
    ax.set_ylim(0, max(values + [1.0]) * 1.25)
    ax.set_title(f"User preference (n={table.total}, abstained {table.abstains})")
    for bar, value in zip(bars, values):
        ax.annotate(
            f"{value:.1f}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            ha="center",
            va="bottom",
        )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _markdown_report(
    table: PreferenceTable,
    variants_by_idea: Mapping[str, Mapping[VariantKind, Variant]],
) -> str:
    lines = ["# Preference study report", ""]
    if table.total == 0:
        lines += ["**No votes recorded.**", ""]
    lines += [
        f"Ballots: {table.total} (abstained: {table.abstains})",
        "",
        "| variant | votes | preferred (%) |",
        "| --- | ---: | ---: |",
    ]
    for kind in VARIANT_ORDER:
        lines.append(
            f"| {_LABELS[kind]} | {table.counts[kind]} | {table.percentages[kind]:.1f} |"
        )
    lines += [
        "",
        f"Refinement gain (refined minus initial loop round): **{table.delta_iteration:+.1f}** points.",
        "",
        "![preference percentages](figures/preferences.png)",
        "",
    ]
    if variants_by_idea:
        lines += ["## Images per idea", ""]
        for idea_id in sorted(variants_by_idea):
            lines.append(f"### {idea_id}")
            lines.append("")
            row = []
            for kind in VARIANT_ORDER:
                variant = variants_by_idea[idea_id][kind]
                row.append(f"![{_LABELS[kind]}](images/{variant.image_digest}.png)")
            lines.append(" ".join(row))
            lines.append("")
    return "\n".join(lines)


def _html_report(
    table: PreferenceTable,
    variants_by_idea: Mapping[str, Mapping[VariantKind, Variant]],
) -> str:
    rows = "\n".join(
        f"<tr><td>{_LABELS[kind]}</td><td>{table.counts[kind]}</td>"
        f"<td>{table.percentages[kind]:.1f}</td></tr>"
        for kind in VARIANT_ORDER
    )
    empty = "<p><strong>No votes recorded.</strong></p>" if table.total == 0 else ""
    sections = []
    for idea_id in sorted(variants_by_idea):
        cells = "".join(
            f'<figure><img src="images/{variants_by_idea[idea_id][kind].image_digest}.png" '
            f'alt="{_LABELS[kind]}" width="192"><figcaption>{_LABELS[kind]}</figcaption></figure>'
            for kind in VARIANT_ORDER
        )
        sections.append(f"<h3>{idea_id}</h3><div class=\"triptych\">{cells}</div>")
    return f"""<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>Preference study report</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
table {{ border-collapse: collapse; }}
td, th {{ border: 1px solid #999; padding: 0.3em 0.8em; }}
.triptych {{ display: flex; gap: 1em; }}
figure {{ margin: 0; }}
</style>
</head>
<body>
<h1>Preference study report</h1>
{empty}
<p>Ballots: {table.total} (abstained: {table.abstains})</p>
<table>
<tr><th>variant</th><th>votes</th><th>preferred (%)</th></tr>
{rows}
</table>
<p>Refinement gain (refined minus initial loop round): <strong>{table.delta_iteration:+.1f}</strong> points.</p>
<img src="figures/preferences.png" alt="preference percentages">
{"".join(sections)}
</body>
</html>
"""


def render_report(
    table: PreferenceTable,
    ballots: Sequence[Ballot],
    out_dir: Path | str,
    variants_by_idea: Mapping[str, Mapping[VariantKind, Variant]] | None = None,
    resolve_digest: DigestResolver | None = None,
) -> Path:
    """Write report.md, report.html, preferences.csv, and the bar figure.

    When variants and a digest resolver are given, each idea's three
    images are copied next to the report so it stays self-contained.
    Returns the markdown path.
    """
    out = Path(out_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    variants_by_idea = variants_by_idea or {}

    if variants_by_idea and resolve_digest is not None:
        images_dir = out / "images"
        images_dir.mkdir(exist_ok=True)
        for variants in variants_by_idea.values():
            for variant in variants.values():
                target = images_dir / f"{variant.image_digest}.png"
                if not target.exists():
                    target.write_bytes(resolve_digest(variant.image_digest))

    with open(out / "preferences.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "votes", "percentage"])
        for kind in VARIANT_ORDER:
            writer.writerow([kind.value, table.counts[kind], f"{table.percentages[kind]:.1f}"])
        writer.writerow([ABSTAIN, table.abstains, f"{float(_pct(table.abstains, table.total)):.1f}"])
        writer.writerow(["delta_iteration", "", f"{table.delta_iteration:.1f}"])

    _write_figure(table, out / "figures" / "preferences.png")
    (out / "report.md").write_text(_markdown_report(table, variants_by_idea), encoding="utf-8")
    (out / "report.html").write_text(_html_report(table, variants_by_idea), encoding="utf-8")
    logger.info("report written to %s", out)
    return out / "report.md"
