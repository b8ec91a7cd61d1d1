"""Turns an assessment report into the progress issue shown to students."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from classbot._timeutil import format_utc
from classbot.analyzer import AssessmentReport
from classbot.rubric import Rubric

MARKER = "<!-- class-bot:v1 -->"
PASS_MARK = ":white_check_mark:"
FAIL_MARK = ":x:"
TIMESTAMP_PREFIX = "_Last updated: "


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class NudgeIssue:
    title: str
    body: str
    marker: str
    content_hash: str


def issue_title(rubric: Rubric) -> str:
    return f"[class-bot] {rubric.assignment_name} progress"


def content_hash(body: str) -> str:
    """Hash of ``body`` with the timestamp line dropped."""
    kept = [line for line in body.split("\n") if not line.startswith(TIMESTAMP_PREFIX)]
    return hashlib.sha256("\n".join(kept).encode("utf-8")).hexdigest()


def render(report: AssessmentReport, rubric: Rubric) -> NudgeIssue:
    expected = list(rubric.item_ids)
    got = [r.item_id for r in report.results]
    if got != expected:
        raise RenderError(f"report items {got} do not match rubric items {expected}")

    status = {r.item_id: r.passed for r in report.results}
    lines = [
        MARKER,
        f"# {rubric.assignment_name} — Development Process Progress",
        f"{TIMESTAMP_PREFIX}{format_utc(report.generated_at)} "
        f"(commit {report.head_commit[:7]})_",
        "",
    ]
    for phase in rubric.phases:
        lines.append(f"## {phase.title} ({phase.id.value})")
        for item in phase.items:
            mark = PASS_MARK if status[item.id] else FAIL_MARK
            lines.append(f"- {mark} {item.description}")
        lines.append("")
    done = sum(status.values())
    lines.append(f"Progress: {done}/{len(expected)} tasks complete.")
    body = "\n".join(lines) + "\n"
    return NudgeIssue(
        title=issue_title(rubric),
        body=body,
        marker=MARKER,
        content_hash=content_hash(body),
    )
