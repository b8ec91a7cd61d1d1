"""The nudge cycle: refresh a student repository, assess it, and publish the
progress issue, plus the scheduler that repeats this daily or on new commits."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Mapping

from classbot._git import GitError, git
from classbot._timeutil import format_utc, parse_utc, utcnow
from classbot.analyzer import AssessmentError, assess
from classbot.forge import Forge, ForgeError, IssueClosedError, IssueNotFoundError, IssueRef
from classbot.renderer import MARKER, NudgeIssue, content_hash, render
from classbot.roster import RepoEntry, Roster
from classbot.rubric import Rubric, UpdateMode

logger = logging.getLogger(__name__)

GRACE = timedelta(hours=24)
DEFAULT_POLL_INTERVAL = 300

CREATED = "created"
UPDATED = "updated"
UNCHANGED = "unchanged"
SKIPPED = "skipped"
FAILED = "failed"


@dataclass(frozen=True)
class RepoState:
    repo_id: str
    issue: IssueRef | None = None
    last_content_hash: str | None = None
    last_assessed_commit: str | None = None
    last_run_at: datetime | None = None

    def __post_init__(self) -> None:
        if self.issue is not None and self.last_content_hash is None:
            raise ValueError("a tracked issue needs a content hash")

    def to_dict(self) -> dict:
        return {
            "issue": None if self.issue is None else {"repo": self.issue.repo, "number": self.issue.number},
            "last_content_hash": self.last_content_hash,
            "last_assessed_commit": self.last_assessed_commit,
            "last_run_at": None if self.last_run_at is None else format_utc(self.last_run_at),
        }

    @classmethod
    def from_dict(cls, repo_id: str, data: Mapping) -> "RepoState":
        issue = data.get("issue")
        run_at = data.get("last_run_at")
        return cls(
            repo_id=repo_id,
            issue=None if issue is None else IssueRef(issue["repo"], int(issue["number"])),
            last_content_hash=data.get("last_content_hash"),
            last_assessed_commit=data.get("last_assessed_commit"),
            last_run_at=None if run_at is None else parse_utc(run_at),
        )


class StateStore:
    """Per-roster JSON document of :class:`RepoState`, replaced atomically on write."""

    def __init__(self, state_dir: str | os.PathLike, roster_name: str = "roster"):
        self.dir = Path(state_dir)
        self.path = self.dir / f"{roster_name}.state.json"
        self._lock = threading.Lock()

    def _read(self) -> dict:
        try:
            with open(self.path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return {}

    def get(self, repo_id: str) -> RepoState:
        with self._lock:
            data = self._read().get(repo_id)
        return RepoState(repo_id) if data is None else RepoState.from_dict(repo_id, data)

    def all(self) -> dict[str, RepoState]:
        with self._lock:
            doc = self._read()
        return {k: RepoState.from_dict(k, v) for k, v in doc.items()}

    def put(self, state: RepoState) -> None:
        with self._lock:
            doc = self._read()
            doc[state.repo_id] = state.to_dict()
            self.dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".state-", suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(doc, fh, indent=2, sort_keys=True)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise


@dataclass(frozen=True)
class Outcome:
    repo_id: str
    status: str
    reason: str = ""
    issue: IssueRef | None = None
    head: str | None = None
    assessed: bool = False
    rendered: NudgeIssue | None = None

    def log_record(self) -> dict:
        record = {"repo": self.repo_id, "outcome": self.status}
        if self.reason:
            record["reason"] = self.reason
        if self.issue is not None:
            record["issue"] = self.issue.number
        if self.head:
            record["head"] = self.head[:12]
        return record


def sync_repo(entry: RepoEntry, workspace: str | os.PathLike) -> tuple[Path, str]:
    """Clone or refresh ``entry`` under ``workspace``; return (worktree, head commit)."""
    dest = Path(workspace) / entry.id
    if not (dest / ".git").exists():
        dest.parent.mkdir(parents=True, exist_ok=True)
        git("clone", "--quiet", "--no-tags", entry.url, str(dest))
    else:
        git("remote", "set-url", "origin", entry.url, cwd=dest)
    git("fetch", "--quiet", "--force", "--no-tags", "origin", "HEAD", cwd=dest)
    git("checkout", "--quiet", "--force", "--detach", "FETCH_HEAD", cwd=dest)
    git("clean", "-fdxq", cwd=dest)
    head = git("rev-parse", "HEAD", cwd=dest).strip()
    return dest, head


def nudge_once(
    entry: RepoEntry,
    rubric: Rubric,
    store: StateStore,
    forge: Forge,
    *,
    workspace: str | os.PathLike,
    dry_run: bool = False,
    clock: Callable[[], datetime] = utcnow,
    env: Mapping[str, str] | None = None,
    assess_fn=assess,
) -> Outcome:
    """Run one nudge cycle for one repository.

    In dry-run mode the repository is still assessed and the issue rendered,
    but nothing is written to the forge or the state store.
    """
    now = clock()
    if now > rubric.deadline + GRACE:
        return Outcome(entry.id, SKIPPED, "past late window")

    state = store.get(entry.id)
    try:
        workdir, head = sync_repo(entry, workspace)
    except GitError as exc:
        return Outcome(entry.id, FAILED, f"fetch: {exc}")

    if rubric.update_mode == UpdateMode.ON_CHANGE and head == state.last_assessed_commit:
        if not dry_run:
            store.put(replace(state, last_run_at=now))
        return Outcome(entry.id, UNCHANGED, "no new commits", state.issue, head)

    generated_at = max(now, state.last_run_at) if state.last_run_at else now
    try:
        report = assess_fn(workdir, entry.id, rubric, head, clock=lambda: generated_at, env=env)
    except AssessmentError as exc:
        return Outcome(entry.id, FAILED, f"assess: {exc}", head=head)
    issue = render(report, rubric)
    repo = entry.forge_repo

    try:
        status, ref = _publish(forge, repo, issue, state, dry_run)
    except IssueClosedError as exc:
        return Outcome(entry.id, FAILED, f"issue closed: {exc}", state.issue, head, True, issue)
    except ForgeError as exc:
        return Outcome(entry.id, FAILED, f"forge: {exc}", state.issue, head, True, issue)

    if not dry_run:
        store.put(
            RepoState(
                repo_id=entry.id,
                issue=ref,
                last_content_hash=issue.content_hash if ref is not None else None,
                last_assessed_commit=head,
                last_run_at=generated_at,
            )
        )
    return Outcome(entry.id, status, "", ref, head, True, issue)


def _publish(
    forge: Forge, repo: str, issue: NudgeIssue, state: RepoState, dry_run: bool
) -> tuple[str, IssueRef | None]:
    ref = state.issue
    if ref is not None:
        if issue.content_hash == state.last_content_hash:
            return UNCHANGED, ref
        if dry_run:
            return UPDATED, ref
        try:
            forge.update_issue(ref, issue.body)
            return UPDATED, ref
        except IssueNotFoundError:
            logger.warning("tracked issue %s#%d is gone; rediscovering", ref.repo, ref.number)

    # No trusted state: an earlier run may have written the issue and then died
    # before recording it, so look for our marker before creating anything.
    found = forge.find_marked_issue(repo, MARKER)
    if found is not None:
        if content_hash(forge.get_issue(found).body) == issue.content_hash:
            return UNCHANGED, found
        if not dry_run:
            forge.update_issue(found, issue.body)
        return UPDATED, found
    if dry_run:
        return CREATED, None
    return CREATED, forge.create_issue(repo, issue.title, issue.body)


def is_due(rubric: Rubric, state: RepoState, now: datetime) -> bool:
    """Whether a repository should be nudged at ``now``.

    Daily mode runs once per UTC day at the rubric's hour, catching up if the
    last run predates today's slot. On-change mode is always due; the cycle
    itself skips unchanged heads.
    """
    if now > rubric.deadline + GRACE:
        return False
    if rubric.update_mode == UpdateMode.ON_CHANGE:
        return True
    slot = now.replace(hour=rubric.update_hour_utc, minute=0, second=0, microsecond=0)
    if now < slot:
        return False
    return state.last_run_at is None or state.last_run_at < slot


def nudge_pass(
    entries: Iterable[RepoEntry],
    rubric: Rubric,
    store: StateStore,
    forge: Forge,
    *,
    jobs: int = 1,
    on_outcome: Callable[[Outcome], None] | None = None,
    **kwargs,
) -> list[Outcome]:
    """Nudge each entry once, up to ``jobs`` repositories at a time."""

    def one(entry: RepoEntry) -> Outcome:
        try:
            outcome = nudge_once(entry, rubric, store, forge, **kwargs)
        except Exception as exc:  # one bad repo must not stop the pass
            logger.exception("nudge for %s crashed", entry.id)
            outcome = Outcome(entry.id, FAILED, f"crash: {exc}")
        logger.info(json.dumps(outcome.log_record(), sort_keys=True))
        if on_outcome is not None:
            on_outcome(outcome)
        return outcome

    entries = list(entries)
    if jobs <= 1:
        return [one(e) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, entries))


def run_scheduler(
    roster: Roster,
    rubric: Rubric,
    store: StateStore,
    forge: Forge,
    *,
    workspace: str | os.PathLike,
    poll_interval: float = DEFAULT_POLL_INTERVAL,
    jobs: int = 1,
    clock: Callable[[], datetime] = utcnow,
    sleep: Callable[[float], None] = time.sleep,
    max_cycles: int | None = None,
    **kwargs,
) -> None:
    """Service loop: wake every ``poll_interval`` seconds and nudge due repos.

    Runs forever unless ``max_cycles`` is given (tests and one-off catch-ups).
    """
    cycles = 0
    while max_cycles is None or cycles < max_cycles:
        now = clock()
        due = [e for e in roster.repos if is_due(rubric, store.get(e.id), now)]
        if due:
            nudge_pass(
                due, rubric, store, forge,
                jobs=jobs, workspace=workspace, clock=clock, **kwargs,
            )
        cycles += 1
        if max_cycles is not None and cycles >= max_cycles:
            break
        sleep(poll_interval)
