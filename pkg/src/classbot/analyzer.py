"""Runs rubric checks against a repository working tree."""

from __future__ import annotations

import logging
import os
import re
import shutil
import signal
import subprocess
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterator, Mapping

from classbot._timeutil import utcnow
from classbot.rubric import CheckKind, CheckSpec, Rubric

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"

# Variables passed through from the bot's own environment to check commands.
BASE_ENV_KEYS = ("PATH", "HOME", "LANG")


@dataclass(frozen=True)
class CheckResult:
    item_id: str
    status: str
    detail: str
    duration: int  # milliseconds

    def __post_init__(self) -> None:
        if self.status not in (PASS, FAIL):
            raise ValueError(f"status must be {PASS!r} or {FAIL!r}, got {self.status!r}")
        if self.status == FAIL and not self.detail:
            raise ValueError("a failed check needs a detail")

    @property
    def passed(self) -> bool:
        return self.status == PASS


@dataclass(frozen=True)
class AssessmentReport:
    repo_id: str
    rubric_name: str
    generated_at: datetime
    results: tuple[CheckResult, ...]
    head_commit: str

    def statuses(self) -> dict[str, str]:
        return {r.item_id: r.status for r in self.results}


class AssessmentError(RuntimeError):
    """Configuration problem that prevents assessment (not a failed check)."""


def check_env(extra: Mapping[str, str] | None = None) -> dict[str, str]:
    env = {key: os.environ[key] for key in BASE_ENV_KEYS if key in os.environ}
    env.setdefault("PATH", os.defpath)
    env.setdefault("LANG", "C.UTF-8")
    if extra:
        env.update(extra)
    return env


def _inside(root: Path, rel: str) -> Path | None:
    root = root.resolve()
    target = (root / rel).resolve()
    if target != root and root not in target.parents:
        return None
    return target


def _run_command(
    command: tuple[str, ...], cwd: Path, timeout: int, env: Mapping[str, str]
) -> tuple[int | None, bytes, str | None]:
    """Run ``command`` and return (exit code, merged output, error detail)."""
    try:
        proc = subprocess.Popen(
            list(command),
            cwd=cwd,
            env=dict(env),
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            start_new_session=True,
        )
    except FileNotFoundError:
        return None, b"", "command not found"
    except PermissionError:
        return None, b"", "permission denied"
    except OSError as exc:
        return None, b"", f"cannot execute: {exc.strerror or exc}"

    try:
        output, _ = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        try:
            output, _ = proc.communicate(timeout=5)
        except subprocess.TimeoutExpired:
            output = b""
        return None, output or b"", "timeout"
    finally:
        # Reap anything the command left running in its group.
        _kill_group(proc, only_if_alive=False)
    return proc.returncode, output, None


def _kill_group(proc: subprocess.Popen, only_if_alive: bool = True) -> None:
    if only_if_alive and proc.poll() is not None:
        return
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def count_matching_lines(output: bytes, pattern: str) -> int:
    regex = re.compile(pattern)
    text = output.decode("utf-8", errors="replace")
    return sum(1 for line in text.splitlines() if regex.search(line))


def run_check(
    workdir: str | os.PathLike,
    spec: CheckSpec,
    env: Mapping[str, str] | None = None,
) -> CheckResult:
    """Evaluate one rubric item in ``workdir``.

    Missing tools and timeouts become failed checks rather than exceptions, so
    the student always sees a result for every item.
    """
    root = Path(workdir)
    began = time.monotonic()

    def done(status: str, detail: str) -> CheckResult:
        elapsed = int(round((time.monotonic() - began) * 1000))
        return CheckResult(spec.id, status, detail, elapsed)

    if spec.kind in (CheckKind.FILE_EXISTS, CheckKind.FILE_ABSENT):
        target = _inside(root, spec.path)
        exists = target is not None and target.is_file()
        if spec.kind == CheckKind.FILE_EXISTS:
            return done(PASS, "found") if exists else done(FAIL, f"missing {spec.path}")
        return done(FAIL, f"present {spec.path}") if exists else done(PASS, "absent")

    code, output, error = _run_command(
        spec.command, root, spec.timeout, env if env is not None else check_env()
    )
    if error is not None:
        return done(FAIL, error)

    if spec.kind == CheckKind.COMMAND_SUCCEEDS:
        return done(PASS if code == 0 else FAIL, f"exit {code}")

    count = count_matching_lines(output, spec.pattern)
    if count <= spec.threshold:
        return done(PASS, f"{count} <= {spec.threshold}")
    return done(FAIL, f"{count} > {spec.threshold}")


@contextmanager
def scratch_copy(workdir: Path) -> Iterator[Path]:
    """Copy the working tree, minus ``.git``, into a throwaway directory."""
    tmp = Path(tempfile.mkdtemp(prefix="classbot-check-"))
    try:
        dest = tmp / "repo"
        shutil.copytree(
            workdir,
            dest,
            symlinks=True,
            ignore=lambda d, names: [".git"] if Path(d) == workdir else [],
        )
        yield dest
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def assess(
    workdir: str | os.PathLike,
    repo_id: str,
    rubric: Rubric,
    head: str,
    *,
    env: Mapping[str, str] | None = None,
    isolate: bool = True,
    clock: Callable[[], datetime] = utcnow,
) -> AssessmentReport:
    """Run every rubric item, in rubric order, and collect a report.

    With ``isolate`` (the default) the checks run against a copy of the working
    tree that has no ``.git`` directory, so a check command cannot touch the
    repository's history or refs.
    """
    root = Path(workdir)
    if not root.is_dir():
        raise AssessmentError(f"working tree {root} does not exist")
    run_env = dict(env) if env is not None else check_env()
    if isolate:
        # Keep git inside the scratch copy from discovering an enclosing repository.
        run_env.setdefault("GIT_CEILING_DIRECTORIES", tempfile.gettempdir())

    results = []
    with (scratch_copy(root.resolve()) if isolate else _as_is(root)) as tree:
        for item in rubric.items():
            try:
                results.append(run_check(tree, item, run_env))
            except Exception as exc:  # a broken check must not hide the rest
                logger.exception("check %s crashed", item.id)
                results.append(CheckResult(item.id, FAIL, f"error: {exc}", 0))
    return AssessmentReport(
        repo_id=repo_id,
        rubric_name=rubric.assignment_name,
        generated_at=clock(),
        results=tuple(results),
        head_commit=head,
    )


@contextmanager
def _as_is(root: Path) -> Iterator[Path]:
    yield root
