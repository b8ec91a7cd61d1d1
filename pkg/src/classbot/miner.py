"""Productivity metrics mined from git history.

For each repository we count first-parent commits whose author timestamp falls
between the assignment start and the end of the late window (deadline + 24 h),
and derive commit count, churn, first-commit latency and last-commit offset.
"""

from __future__ import annotations

import csv
import logging
import re
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from classbot._git import GitError, git, is_git_dir
from classbot._timeutil import format_utc
from classbot.roster import Roster

logger = logging.getLogger(__name__)

LATE_WINDOW = timedelta(hours=24)
METRICS_HEADER = ["repo_id", "group", "commits", "churn", "first_commit_days", "last_commit_hours"]
COMMITS_HEADER = ["repo_id", "group", "commit", "author", "timestamp", "lines_added", "lines_deleted", "churn"]

_RECORD = "\x1e"
_FIELD = "\x1f"


class MiningError(RuntimeError):
    pass


@dataclass(frozen=True)
class CommitRecord:
    hash: str
    author: str
    timestamp: datetime
    lines_added: int
    lines_deleted: int

    @property
    def churn(self) -> int:
        return self.lines_added + self.lines_deleted


@dataclass(frozen=True)
class RepoMetrics:
    repo_id: str
    group_label: str
    commit_count: int
    code_churn: int
    first_commit_days: float | None
    last_commit_hours: float | None


def read_history(repo: str | Path, branch: str = "HEAD") -> list[CommitRecord]:
    """First-parent history of ``branch`` with per-commit line counts.

    Merge commits are diffed against their first parent only. Binary file
    changes contribute no lines.
    """
    if not is_git_dir(repo):
        raise MiningError(f"{repo} is not a readable git repository")
    try:
        git("rev-parse", "--verify", "--quiet", f"{branch}^{{commit}}", cwd=repo)
    except GitError:
        raise MiningError(f"branch {branch!r} not found in {repo}") from None
    out = git(
        "log", "--first-parent", "--diff-merges=first-parent", "-M", "--numstat",
        "--no-color", f"--format={_RECORD}%H{_FIELD}%an <%ae>{_FIELD}%at",
        branch, "--",
        cwd=repo,
    )
    commits = []
    for chunk in out.split(_RECORD)[1:]:
        header, _, stats = chunk.partition("\n")
        sha, author, stamp = header.split(_FIELD)
        added = deleted = 0
        for line in stats.splitlines():
            parts = line.split("\t", 2)
            if len(parts) != 3:
                continue
            if parts[0] != "-":
                added += int(parts[0])
            if parts[1] != "-":
                deleted += int(parts[1])
        commits.append(
            CommitRecord(
                hash=sha,
                author=author,
                timestamp=datetime.fromtimestamp(int(stamp), tz=timezone.utc),
                lines_added=added,
                lines_deleted=deleted,
            )
        )
    return commits


def select_commits(
    commits: Iterable[CommitRecord],
    start: datetime,
    deadline: datetime,
    exclude_authors: Sequence[str] = (),
) -> list[CommitRecord]:
    """Commits inside ``[start, deadline + 24h]`` not written by an excluded author.

    ``exclude_authors`` are regular expressions searched in ``"Name <email>"``.
    """
    patterns = [re.compile(p) for p in exclude_authors]
    end = deadline + LATE_WINDOW
    return [
        c
        for c in commits
        if start <= c.timestamp <= end and not any(p.search(c.author) for p in patterns)
    ]


def summarize_commits(
    repo_id: str, group_label: str, commits: Sequence[CommitRecord], start: datetime, deadline: datetime
) -> RepoMetrics:
    if not commits:
        return RepoMetrics(repo_id, group_label, 0, 0, None, None)
    first = min(c.timestamp for c in commits)
    last = max(c.timestamp for c in commits)
    return RepoMetrics(
        repo_id=repo_id,
        group_label=group_label,
        commit_count=len(commits),
        code_churn=sum(c.churn for c in commits),
        first_commit_days=(first - start).total_seconds() / 86400,
        last_commit_hours=(last - deadline).total_seconds() / 3600,
    )


def mine_repo(
    repo: str | Path,
    start: datetime,
    deadline: datetime,
    exclude_authors: Sequence[str] = (),
    *,
    repo_id: str | None = None,
    group_label: str = "",
    branch: str = "HEAD",
) -> RepoMetrics:
    commits = select_commits(read_history(repo, branch), start, deadline, exclude_authors)
    return summarize_commits(repo_id or Path(repo).name, group_label, commits, start, deadline)


@dataclass
class MinedRoster:
    metrics: list[RepoMetrics]
    commits: dict[str, list[CommitRecord]]
    skipped: list[tuple[str, str]]


def _mine_entry(entry, start, deadline, exclude_authors, group_label):
    if is_git_dir(entry.url):
        commits = read_history(entry.url)
    else:
        tmp = tempfile.mkdtemp(prefix="classbot-mine-")
        try:
            try:
                git("clone", "--bare", "--quiet", entry.url, tmp + "/repo.git")
            except GitError as exc:
                raise MiningError(str(exc)) from None
            commits = read_history(tmp + "/repo.git")
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
    counted = select_commits(commits, start, deadline, exclude_authors)
    return summarize_commits(entry.id, group_label, counted, start, deadline), counted


def mine_roster(
    roster: Roster,
    group_label: str,
    start: datetime,
    deadline: datetime,
    exclude_authors: Sequence[str] = (),
    jobs: int = 1,
) -> MinedRoster:
    """Mine every roster repository; failures are logged and skipped."""

    def work(entry):
        try:
            return entry, _mine_entry(entry, start, deadline, exclude_authors, group_label), None
        except (MiningError, GitError, OSError) as exc:
            return entry, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(work, roster.repos))

    result = MinedRoster([], {}, [])
    for entry, mined, error in sorted(outcomes, key=lambda o: o[0].id):
        if error is not None:
            logger.warning("skipping %s: %s", entry.id, error)
            result.skipped.append((entry.id, error))
            continue
        metrics, counted = mined
        result.metrics.append(metrics)
        result.commits[entry.id] = counted
    return result


def _num(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_metrics_csv(rows: Iterable[RepoMetrics], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for m in rows:
        writer.writerow(
            [m.repo_id, m.group_label, m.commit_count, m.code_churn,
             _num(m.first_commit_days), _num(m.last_commit_hours)]
        )


def write_commits_csv(mined: MinedRoster, group_label: str, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COMMITS_HEADER)
    for repo_id in sorted(mined.commits):
        for c in sorted(mined.commits[repo_id], key=lambda c: (c.timestamp, c.hash)):
            writer.writerow(
                [repo_id, group_label, c.hash, c.author, format_utc(c.timestamp),
                 c.lines_added, c.lines_deleted, c.churn]
            )
