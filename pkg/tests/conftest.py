from __future__ import annotations

import os
import shutil
import subprocess
from datetime import datetime, timezone
from pathlib import Path

import pytest

from classbot.rubric import load_rubric

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

STUDENT = ("Student One", "student@univ.edu")
TA = ("Course Staff", "ta@course.edu")

# Filled by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


class GitRepo:
    """Scripted repository with fully controlled authors and timestamps."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._git("init", "-q", "-b", "main")

    def _git(self, *args: str, env: dict | None = None) -> str:
        full_env = {
            "PATH": os.environ["PATH"],
            "HOME": str(self.path),
            "GIT_CONFIG_NOSYSTEM": "1",
            "GIT_AUTHOR_NAME": STUDENT[0],
            "GIT_AUTHOR_EMAIL": STUDENT[1],
            "GIT_COMMITTER_NAME": STUDENT[0],
            "GIT_COMMITTER_EMAIL": STUDENT[1],
        }
        full_env.update(env or {})
        out = subprocess.run(
            ["git", *args], cwd=self.path, env=full_env, check=True, capture_output=True, text=True
        )
        return out.stdout

    def write(self, rel: str, text: str, mode: int | None = None) -> None:
        target = self.path / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
        if mode is not None:
            target.chmod(mode)

    def remove(self, rel: str) -> None:
        (self.path / rel).unlink()

    def commit(self, message: str, when: datetime, author: tuple[str, str] = STUDENT) -> str:
        stamp = when.strftime("%Y-%m-%dT%H:%M:%S+0000")
        env = {
            "GIT_AUTHOR_NAME": author[0],
            "GIT_AUTHOR_EMAIL": author[1],
            "GIT_AUTHOR_DATE": stamp,
            "GIT_COMMITTER_DATE": stamp,
        }
        self._git("add", "-A")
        self._git("commit", "-q", "--allow-empty", "-m", message, env=env)
        return self.head()

    def head(self) -> str:
        return self._git("rev-parse", "HEAD").strip()


@pytest.fixture
def make_repo(tmp_path):
    def factory(name: str = "repo") -> GitRepo:
        return GitRepo(tmp_path / name)

    return factory


@pytest.fixture
def sample_rubric():
    return load_rubric(FIXTURES / "sample_rubric.json")


def build_fixture_repo(repo: GitRepo, *, compiles: bool = True, when=None) -> GitRepo:
    """Working tree for the sample rubric.

    Expected results, worked out by hand: readme pass, design fail, compiles
    pass (or fail with ``compiles=False``), style fail (12 > 10), tests_pass
    fail (exit 1), system_tests fail, gitignore pass, no_binaries pass.
    """
    repo.write("README.md", "# Project 6\nA calculator.\n")
    repo.write("build.sh", "exit 0\n" if compiles else "echo 'error: ; expected' >&2\nexit 1\n")
    repo.write("lint.sh", "cat lint_output.txt\n")
    shutil.copy(FIXTURES / "lint_output.txt", repo.path / "lint_output.txt")
    repo.write("test.sh", "echo '1 of 3 tests failed'\nexit 1\n")
    repo.write(".gitignore", "*.class\n")
    repo.commit("initial", when or utc(2020, 3, 2, 12))
    return repo


@pytest.fixture
def fixture_repo(make_repo):
    return build_fixture_repo(make_repo("stu01"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, note in ACCEPTANCE_RESULTS:
        suffix = f" ({note})" if note else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}{suffix}")


MINE_START = utc(2020, 3, 1)
MINE_DEADLINE = utc(2020, 3, 15)


def build_mining_repo(repo: GitRepo) -> GitRepo:
    """Four commits; the staff scaffold commit is excluded by ``ta@course\\.edu``.

    Counted by hand:
      03-03 12:00  calc.txt created with 3 lines          +3 -0
      03-10 06:00  line 2 rewritten, 2 lines appended      +3 -1
      03-14 22:24  the 2 appended lines removed            +0 -2
    commits 3, churn 9, first commit 2.5 days after start,
    last commit 1.6 hours (96 minutes) before the deadline.
    """
    repo.write("scaffold.txt", "".join(f"s{i}\n" for i in range(10)))
    repo.commit("scaffold", utc(2020, 3, 1), author=TA)
    repo.write("calc.txt", "l1\nl2\nl3\n")
    repo.commit("start", utc(2020, 3, 3, 12))
    repo.write("calc.txt", "l1\nL2\nl3\nl4\nl5\n")
    repo.commit("work", utc(2020, 3, 10, 6))
    repo.write("calc.txt", "l1\nL2\nl3\n")
    repo.commit("tidy", utc(2020, 3, 14, 22, 24))
    return repo


def build_single_commit_repo(repo: GitRepo) -> GitRepo:
    """Staff scaffold (excluded) then one student commit: 2 lines rewritten, 1 added (+3 -2)."""
    repo.write("calc.txt", "a\nb\nc\nd\ne\n")
    repo.commit("scaffold", utc(2020, 3, 1), author=TA)
    repo.write("calc.txt", "a\nB\nC\nd\ne\nf\n")
    repo.commit("student", utc(2020, 3, 2))
    return repo
