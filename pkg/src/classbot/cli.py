"""Command line interface.

    classbot check   --rubric R.json --repo DIR
    classbot nudge   --roster ROSTER.json [--dry-run]
    classbot serve   --roster ROSTER.json [--poll-interval 300]
    classbot mine    --roster ROSTER.json --group LABEL --out metrics.csv [--per-commit]
    classbot compare --csv metrics.csv --metrics commits,churn --group-col group [--alpha 0.05]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Callable

from classbot import __version__
from classbot._git import GitError, git
from classbot._timeutil import parse_utc, utcnow
from classbot.analyzer import AssessmentError, assess
from classbot.forge import FakeForge, Forge, ForgeConfig, GitHubForge
from classbot.miner import mine_roster, write_commits_csv, write_metrics_csv
from classbot.orchestrator import FAILED, Outcome, StateStore, nudge_pass, run_scheduler
from classbot.renderer import render
from classbot.roster import RosterError, load_roster
from classbot.rubric import RubricError, load_rubric
from classbot.stats import DEFAULT_ALPHA, StatsError, compare_table, ingest_csv

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

logger = logging.getLogger("classbot")


class ConfigError(Exception):
    pass


def _timestamp(text: str) -> datetime:
    try:
        return parse_utc(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    common.add_argument("--dry-run", action="store_true", help="never write to the forge or state")
    common.add_argument("--forge-url", default=None, help="issue API base URL (default: GitHub)")
    common.add_argument("--fake-forge", action="store_true", help="use an in-memory forge (demo)")
    common.add_argument("--jobs", type=int, default=1, help="repositories processed concurrently")
    common.add_argument("--state-dir", default=None, help="state directory (default: .classbot next to roster)")
    common.add_argument("--now", type=_timestamp, default=None, help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="classbot", description="Nudge students through the development process.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="assess a local repository once")
    p.add_argument("--rubric", required=True)
    p.add_argument("--repo", required=True)

    p = sub.add_parser("nudge", parents=[common], help="one nudge pass over the roster")
    p.add_argument("--roster", required=True)

    p = sub.add_parser("serve", parents=[common], help="run the nudge scheduler")
    p.add_argument("--roster", required=True)
    p.add_argument("--poll-interval", type=float, default=300)
    p.add_argument("--max-cycles", type=int, default=None, help=argparse.SUPPRESS)

    p = sub.add_parser("mine", parents=[common], help="mine productivity metrics to CSV")
    p.add_argument("--roster", required=True)
    p.add_argument("--group", required=True, help="group label written to every row")
    p.add_argument("--out", default="-")
    p.add_argument("--per-commit", action="store_true", help="one row per counted commit")
    p.add_argument("--exclude-author", action="append", default=[], metavar="REGEX")
    p.add_argument("--start", type=_timestamp, default=None)
    p.add_argument("--deadline", type=_timestamp, default=None)

    p = sub.add_parser("compare", parents=[common], help="Mann-Whitney comparison table")
    p.add_argument("--csv", required=True)
    p.add_argument("--metrics", required=True, help="comma-separated metric columns")
    p.add_argument("--group-col", default="group")
    p.add_argument("--control", default=None)
    p.add_argument("--treatment", default=None)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    return parser


def _emit(record: dict) -> None:
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")


def _head(repo: Path) -> str:
    try:
        return git("rev-parse", "HEAD", cwd=repo).strip()
    except GitError:
        return "unknown"


def cmd_check(args, clock) -> int:
    try:
        rubric = load_rubric(args.rubric)
    except (OSError, RubricError) as exc:
        raise ConfigError(f"rubric: {exc}") from None
    repo = Path(args.repo)
    try:
        report = assess(repo, repo.resolve().name, rubric, _head(repo), clock=clock)
    except AssessmentError as exc:
        raise ConfigError(str(exc)) from None
    sys.stdout.write(render(report, rubric).body)
    return EXIT_OK if all(r.passed for r in report.results) else EXIT_FAIL


def _load_roster_and_rubric(path):
    try:
        roster = load_roster(path)
        rubric = load_rubric(roster.rubric)
    except (OSError, RosterError, RubricError) as exc:
        raise ConfigError(str(exc)) from None
    return roster, rubric


def _make_forge(args, forge: Forge | None) -> Forge:
    if forge is None:
        if args.fake_forge:
            forge = FakeForge()
        else:
            forge = GitHubForge(ForgeConfig.from_env(args.forge_url))
    if args.dry_run:
        forge.dry_run = True
    return forge


def _state(args, roster) -> tuple[StateStore, Path]:
    state_dir = Path(args.state_dir) if args.state_dir else Path(args.roster).resolve().parent / ".classbot"
    return StateStore(state_dir, roster.name), state_dir / "work"


def _print_outcome(outcome: Outcome) -> None:
    _emit(outcome.log_record())


def _print_bodies(outcomes: list[Outcome]) -> None:
    for outcome in sorted(outcomes, key=lambda o: o.repo_id):
        if outcome.rendered is not None:
            sys.stdout.write(f"==> {outcome.repo_id} <==\n{outcome.rendered.body}\n")


def cmd_nudge(args, clock, forge) -> int:
    roster, rubric = _load_roster_and_rubric(args.roster)
    store, workspace = _state(args, roster)
    forge = _make_forge(args, forge)
    outcomes = nudge_pass(
        roster.repos, rubric, store, forge,
        jobs=args.jobs, workspace=workspace, dry_run=args.dry_run, clock=clock,
        on_outcome=_print_outcome,
    )
    _print_bodies(outcomes)
    return EXIT_FAIL if any(o.status == FAILED for o in outcomes) else EXIT_OK


def cmd_serve(args, clock, forge) -> int:
    roster, rubric = _load_roster_and_rubric(args.roster)
    store, workspace = _state(args, roster)
    forge = _make_forge(args, forge)
    run_scheduler(
        roster, rubric, store, forge,
        workspace=workspace, poll_interval=args.poll_interval, jobs=args.jobs,
        clock=clock, max_cycles=args.max_cycles, dry_run=args.dry_run,
        on_outcome=_print_outcome,
    )
    return EXIT_OK


def cmd_mine(args) -> int:
    try:
        roster = load_roster(args.roster)
    except (OSError, RosterError) as exc:
        raise ConfigError(str(exc)) from None
    start, deadline = args.start, args.deadline
    if start is None or deadline is None:
        try:
            rubric = load_rubric(roster.rubric)
        except (OSError, RubricError) as exc:
            raise ConfigError(f"need --start/--deadline or a readable rubric: {exc}") from None
        start = start or rubric.start
        deadline = deadline or rubric.deadline
    if start >= deadline:
        raise ConfigError("start must be before deadline")

    mined = mine_roster(roster, args.group, start, deadline, args.exclude_author, jobs=args.jobs)
    for m in mined.metrics:
        _emit({"repo": m.repo_id, "commits": m.commit_count, "churn": m.code_churn})
    for repo_id, reason in mined.skipped:
        _emit({"repo": repo_id, "skipped": reason})

    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="", encoding="utf-8")
    try:
        if args.per_commit:
            write_commits_csv(mined, args.group, out)
        else:
            write_metrics_csv(mined.metrics, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_compare(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if not metrics:
        raise ConfigError("--metrics is empty")
    try:
        ingested = ingest_csv(args.csv, metrics, args.group_col, args.control, args.treatment)
        table = compare_table(ingested.rows, args.alpha, args.format)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc.strerror}") from None
    except StatsError as exc:
        raise ConfigError(str(exc)) from None
    for metric in metrics:
        _emit({"metric": metric, "skipped": ingested.skipped[metric]})
    sys.stdout.write(table)
    return EXIT_OK


def main(
    argv: list[str] | None = None,
    *,
    forge: Forge | None = None,
    clock: Callable[[], datetime] | None = None,
) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if clock is None:
        clock = (lambda: args.now) if args.now is not None else utcnow
    try:
        if args.command == "check":
            return cmd_check(args, clock)
        if args.command == "nudge":
            return cmd_nudge(args, clock, forge)
        if args.command == "serve":
            return cmd_serve(args, clock, forge)
        if args.command == "mine":
            return cmd_mine(args)
        return cmd_compare(args)
    except ConfigError as exc:
        sys.stderr.write(f"classbot: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
