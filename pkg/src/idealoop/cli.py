"""Command-line surface.

    idealoop run      --config cfg.yaml --idea idea.yaml --out runs/
    idealoop resume   --out runs/ --run-id ID
    idealoop inspect  --out runs/ --run-id ID [--json]
    idealoop eval     prepare | vote | tally | report

Exit codes: 0 success, 2 configuration/input problems, 3 backend
failures, 4 parse or loop failures, 5 unknown run id.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid
from pathlib import Path

from . import engine, prefs
from .config import (
    ConfigError,
    Setup,
    build_backends,
    load_idea,
    load_image,
    load_setup,
    setup_from_doc,
    setup_to_doc,
    _load_yaml,
    _reject_unknown,
)
from .core import InvalidConfigError, InvalidIdeaError
from .imagegen import GenerationTransportError
from .lmm import AuthError, RetriesExhausted, TransportError
from .store import ConcurrentWriteError, MissingRun, RunStore, StoreError
from .templates import TemplateSet

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_RUN_FAILED = 4
EXIT_MISSING_RUN = 5

_BACKEND_ERRORS = (AuthError, TransportError, RetriesExhausted, GenerationTransportError)


def _classify_run_failure(exc: engine.RunFailed) -> int:
    cause = exc.__cause__
    if isinstance(cause, _BACKEND_ERRORS):
        return EXIT_BACKEND
    return EXIT_RUN_FAILED


def _apply_overrides(setup: Setup, args: argparse.Namespace) -> Setup:
    from dataclasses import replace

    run = setup.run
    lmm = setup.lmm
    generator = setup.generator
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "lmm_endpoint", None):
        lmm = replace(lmm, endpoint=args.lmm_endpoint)
    if getattr(args, "generator_endpoint", None):
        generator = replace(generator, endpoint=args.generator_endpoint)
    return Setup(
        run=run,
        lmm=lmm,
        generator=generator,
        generator_timeout=setup.generator_timeout,
        template_dir=setup.template_dir,
    )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        setup = _apply_overrides(load_setup(args.config), args)
        idea = load_idea(args.idea)
        templates = TemplateSet.load(setup.template_dir)
        lmm, generator = build_backends(setup)
    except (ConfigError, InvalidConfigError, InvalidIdeaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    store = RunStore(args.out)
    run_id = args.run_id or uuid.uuid4().hex
    wiring_path = store.run_dir(run_id) / "backends.json"
    wiring_path.parent.mkdir(parents=True, exist_ok=True)
    wiring_path.write_text(json.dumps(setup_to_doc(setup), indent=2, sort_keys=True) + "\n")

    try:
        state = engine.run(
            idea, setup.run, lmm, generator, store=store, templates=templates, run_id=run_id
        )
    except engine.RunFailed as exc:
        print(f"run {run_id} failed: {exc}", file=sys.stderr)
        return _classify_run_failure(exc)
    except ConcurrentWriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    final = state.final_image
    assert final is not None
    print(f"run {state.run_id} finished after {len(state.iterations)} iterations")
    print(f"final image: {store.asset_path(state.run_id, final.digest, final.image.media_type)}")
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    store = RunStore(args.out)
    try:
        state = store.load(args.run_id)
    except MissingRun as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_RUN
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    if state.is_terminal:
        print(f"run {args.run_id} is already {state.status.value}; nothing to do")
        return EXIT_OK

    wiring_path = store.run_dir(args.run_id) / "backends.json"
    try:
        if not wiring_path.is_file():
            raise ConfigError(f"backend wiring not found: {wiring_path}")
        setup = setup_from_doc(json.loads(wiring_path.read_text()), run=state.config)
        templates = TemplateSet.load(setup.template_dir)
        lmm, generator = build_backends(setup)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        state = engine.resume(store, args.run_id, lmm, generator, templates=templates)
    except engine.RunFailed as exc:
        print(f"run {args.run_id} failed: {exc}", file=sys.stderr)
        return _classify_run_failure(exc)
    except ConcurrentWriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    print(f"run {state.run_id} is now {state.status.value}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    store = RunStore(args.out)
    manifest_path = store.manifest_path(args.run_id)
    if not manifest_path.is_file():
        print(f"error: no run {args.run_id} under {args.out}", file=sys.stderr)
        return EXIT_MISSING_RUN
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK

    print(f"run {doc['run_id']}  status={doc['status']}  t={doc['t']}")
    if doc.get("failure_reason"):
        print(f"failure: {doc['failure_reason']}")
    header = f"{'iter':>4}  {'prompt words':<16}  {'sel':>3}  {'degraded':>8}  feedback"
    print(header)
    for entry in doc["iterations"]:
        words = ",".join(str(p["word_count"]) for p in entry["prompts"])
        placeholders = sum(1 for d in entry["drafts"] if d["placeholder"])
        sel = entry["selection_index"] if entry["selection_index"] is not None else "-"
        degraded = "yes" if entry["degraded_selection"] else "no"
        feedback = (entry["feedback"] or "")[:40]
        suffix = f" [{placeholders} placeholder]" if placeholders else ""
        print(f"{entry['t']:>4}  {words:<16}  {sel:>3}  {degraded:>8}  {feedback}{suffix}")
    if doc.get("final_image_digest"):
        print(f"final image digest: {doc['final_image_digest']}")
    return EXIT_OK


# -- eval subcommands ---------------------------------------------------------


def _study_paths(study_dir: Path) -> tuple[Path, Path, Path]:
    return study_dir / "study.json", study_dir / "ballots.jsonl", study_dir / "assets"


def _load_study(study_dir: Path) -> dict:
    study_path = _study_paths(study_dir)[0]
    if not study_path.is_file():
        raise ConfigError(f"no study at {study_path}; run 'eval prepare' first")
    return json.loads(study_path.read_text(encoding="utf-8"))


def _study_variants(doc: dict) -> dict[str, dict[prefs.VariantKind, prefs.Variant]]:
    out: dict[str, dict[prefs.VariantKind, prefs.Variant]] = {}
    for idea_id, kinds in doc["ideas"].items():
        out[idea_id] = {
            prefs.VariantKind(kind): prefs.Variant(
                kind=prefs.VariantKind(kind),
                image_digest=entry["image_digest"],
                source_run_id=entry["source_run_id"],
            )
            for kind, entry in kinds.items()
        }
    return out


def cmd_eval_prepare(args: argparse.Namespace) -> int:
    study_dir = Path(args.study)
    spec_path = Path(args.spec)
    try:
        doc = _load_yaml(spec_path)
        _reject_unknown(doc, {"ideas", "raters"}, "study spec")
        entries = doc.get("ideas")
        if not isinstance(entries, list) or not entries:
            raise ConfigError("study spec requires a non-empty 'ideas' list")
        raters = int(doc.get("raters", 1))

        store = RunStore(args.runs) if args.runs else None
        study_dir.mkdir(parents=True, exist_ok=True)
        assets_dir = _study_paths(study_dir)[2]
        assets_dir.mkdir(exist_ok=True)

        ideas: dict[str, dict] = {}
        variants: dict[str, dict[prefs.VariantKind, prefs.Variant]] = {}
        for entry in entries:
            _reject_unknown(
                entry, {"id", "manual_image", "engine_initial_run", "engine_refined_run"}, "idea entry"
            )
            idea_id = entry["id"]
            manual = load_image(
                Path(entry["manual_image"])
                if Path(entry["manual_image"]).is_absolute()
                else spec_path.parent / entry["manual_image"]
            )
            (assets_dir / f"{manual.digest}.png").write_bytes(manual.data)
            per_kind = {
                prefs.VariantKind.MANUAL_INITIAL: prefs.Variant(
                    kind=prefs.VariantKind.MANUAL_INITIAL, image_digest=manual.digest
                )
            }
            for kind, key in (
                (prefs.VariantKind.ENGINE_INITIAL, "engine_initial_run"),
                (prefs.VariantKind.ENGINE_REFINED, "engine_refined_run"),
            ):
                if store is None:
                    raise ConfigError("study spec references runs but --runs was not given")
                run_id = entry[key]
                manifest_path = store.manifest_path(run_id)
                if not manifest_path.is_file():
                    raise ConfigError(f"run {run_id} not found under {args.runs}")
                manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
                digest = manifest.get("final_image_digest")
                if not digest:
                    raise ConfigError(f"run {run_id} has no final image (status {manifest.get('status')})")
                source = store.asset_path(run_id, digest)
                (assets_dir / f"{digest}.png").write_bytes(source.read_bytes())
                per_kind[kind] = prefs.Variant(kind=kind, image_digest=digest, source_run_id=run_id)
            variants[idea_id] = per_kind
            ideas[idea_id] = {
                kind.value: {
                    "image_digest": variant.image_digest,
                    "source_run_id": variant.source_run_id,
                }
                for kind, variant in per_kind.items()
            }

        ballots = prefs.build_ballots(
            [entry["id"] for entry in entries], variants, rng_seed=args.seed, raters=raters
        )
    except (ConfigError, prefs.PrefsError, KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    study_doc = {"seed": args.seed, "raters": raters, "ideas": ideas}
    _study_paths(study_dir)[0].write_text(
        json.dumps(study_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    prefs.save_ballots(_study_paths(study_dir)[1], ballots)
    print(f"study prepared: {len(ideas)} ideas, {len(ballots)} ballots under {study_dir}")
    return EXIT_OK


def cmd_eval_vote(args: argparse.Namespace) -> int:
    study_dir = Path(args.study)
    ballots_path = _study_paths(study_dir)[1]
    if not args.show and not args.abstain and args.position is None:
        print("error: provide --position, --abstain, or --show", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ballots = prefs.load_ballots(ballots_path)
        if args.show:
            for ballot in ballots:
                if ballot.idea_id == args.idea and ballot.rater_id == args.rater:
                    state = ballot.choice or "unvoted"
                    print(f"{ballot.idea_id} [{ballot.rater_id}]: positions 0..2 shuffled, {state}")
            return EXIT_OK
        updated = prefs.record_vote(
            ballots, args.idea, args.rater, position=args.position, abstain=args.abstain
        )
        prefs.save_ballots(ballots_path, updated)
    except (prefs.PrefsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    what = "abstention" if args.abstain else f"position {args.position}"
    print(f"recorded {what} for idea {args.idea} (rater {args.rater})")
    return EXIT_OK


def cmd_eval_tally(args: argparse.Namespace) -> int:
    if not args.ballots and not args.study:
        print("error: provide --study or --ballots", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.ballots:
            ballots = prefs.load_ballots(args.ballots)
        else:
            ballots = prefs.load_ballots(_study_paths(Path(args.study))[1])
        table = prefs.tally(ballots)
    except (prefs.PrefsError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.json:
        print(
            json.dumps(
                {
                    "counts": {k.value: v for k, v in table.counts.items()},
                    "percentages": {k.value: v for k, v in table.percentages.items()},
                    "abstains": table.abstains,
                    "total": table.total,
                    "delta_iteration": table.delta_iteration,
                },
                indent=2,
                sort_keys=True,
            )
        )
        return EXIT_OK
    print(f"ballots: {table.total} (abstained: {table.abstains})")
    for kind in prefs.VARIANT_ORDER:
        print(f"  {kind.value:<16} {table.counts[kind]:>5}  {table.percentages[kind]:.1f}%")
    print(f"delta_iteration: {table.delta_iteration:+.1f}")
    return EXIT_OK


def cmd_eval_report(args: argparse.Namespace) -> int:
    study_dir = Path(args.study)
    try:
        study = _load_study(study_dir)
        ballots = prefs.load_ballots(_study_paths(study_dir)[1])
        table = prefs.tally(ballots)
        variants = _study_variants(study)
        assets_dir = _study_paths(study_dir)[2]

        def resolve(digest: str) -> bytes:
            return (assets_dir / f"{digest}.png").read_bytes()

        out = study_dir / args.out
        report_path = prefs.render_report(
            table, ballots, out, variants_by_idea=variants, resolve_digest=resolve
        )
    except (prefs.PrefsError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"report written: {report_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idealoop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="drive a fresh run to completion")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--idea", required=True)
    p_run.add_argument("--out", required=True, help="store root directory")
    p_run.add_argument("--run-id", default=None)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--lmm-endpoint", default=None, help="override the LMM endpoint")
    p_run.add_argument("--generator-endpoint", default=None, help="override the generator endpoint")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue an interrupted run")
    p_resume.add_argument("--out", required=True)
    p_resume.add_argument("--run-id", required=True)
    p_resume.set_defaults(func=cmd_resume)

    p_inspect = sub.add_parser("inspect", help="summarize a persisted run")
    p_inspect.add_argument("--out", required=True)
    p_inspect.add_argument("--run-id", required=True)
    p_inspect.add_argument("--json", action="store_true", help="print the raw manifest")
    p_inspect.set_defaults(func=cmd_inspect)

    p_eval = sub.add_parser("eval", help="preference study commands")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_prep = eval_sub.add_parser("prepare", help="build ballots for a study")
    p_prep.add_argument("--study", required=True, help="study directory to create")
    p_prep.add_argument("--spec", required=True, help="study spec YAML")
    p_prep.add_argument("--runs", default=None, help="store root holding the referenced runs")
    p_prep.add_argument("--seed", type=int, default=0, help="ballot shuffle seed")
    p_prep.set_defaults(func=cmd_eval_prepare)

    p_vote = eval_sub.add_parser("vote", help="record one vote")
    p_vote.add_argument("--study", required=True)
    p_vote.add_argument("--idea", required=True)
    p_vote.add_argument("--rater", default="r0")
    group = p_vote.add_mutually_exclusive_group()
    group.add_argument("--position", type=int, default=None, help="displayed position (0-based)")
    group.add_argument("--abstain", action="store_true")
    group.add_argument("--show", action="store_true", help="show ballot status instead of voting")
    p_vote.set_defaults(func=cmd_eval_vote)

    p_tally = eval_sub.add_parser("tally", help="compute the preference table")
    p_tally.add_argument("--study", default=None)
    p_tally.add_argument("--ballots", default=None, help="tally a ballots file directly")
    p_tally.add_argument("--json", action="store_true")
    p_tally.set_defaults(func=cmd_eval_tally)

    p_report = eval_sub.add_parser("report", help="render the study report")
    p_report.add_argument("--study", required=True)
    p_report.add_argument("--out", default="report", help="output subdirectory name")
    p_report.set_defaults(func=cmd_eval_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
