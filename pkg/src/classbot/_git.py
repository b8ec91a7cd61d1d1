from __future__ import annotations

import os
import subprocess
from pathlib import Path


class GitError(RuntimeError):
    pass


def git(*args: str, cwd: str | os.PathLike | None = None, timeout: float = 600) -> str:
    env = dict(os.environ)
    env.setdefault("GIT_TERMINAL_PROMPT", "0")
    env["LC_ALL"] = "C"
    try:
        proc = subprocess.run(
            ["git", "-c", "core.quotepath=off", "-c", "log.showSignature=false", *args],
            cwd=cwd,
            env=env,
            stdin=subprocess.DEVNULL,
            capture_output=True,
            timeout=timeout,
        )
    except FileNotFoundError as exc:
        raise GitError("git executable not found") from exc
    except subprocess.TimeoutExpired as exc:
        raise GitError(f"git {args[0]} timed out") from exc
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise GitError(f"git {' '.join(args)} failed: {err}")
    return proc.stdout.decode("utf-8", "replace")


def ref_snapshot(repo: str | os.PathLike) -> dict[str, str]:
    """Map of every ref (plus HEAD) to the object it points at."""
    out = git("for-each-ref", "--format=%(refname) %(objectname)", cwd=repo)
    refs = dict(line.split(" ", 1) for line in out.splitlines() if line)
    try:
        refs["HEAD"] = git("rev-parse", "HEAD", cwd=repo).strip()
    except GitError:
        pass
    return refs


def is_git_dir(path: str | os.PathLike) -> bool:
    p = Path(path)
    if not p.is_dir():
        return False
    try:
        git("rev-parse", "--git-dir", cwd=p)
    except GitError:
        return False
    return True
