import io
import subprocess
from datetime import timedelta

import pytest
from hypothesis import given
from hypothesis import strategies as st

from classbot.miner import (
    METRICS_HEADER,
    CommitRecord,
    MiningError,
    RepoMetrics,
    mine_repo,
    mine_roster,
    read_history,
    select_commits,
    summarize_commits,
    write_commits_csv,
    write_metrics_csv,
)
from classbot.roster import RepoEntry, Roster

from conftest import (
    MINE_DEADLINE,
    MINE_START,
    TA,
    build_mining_repo,
    build_single_commit_repo,
    utc,
)

EXCLUDE = [r"ta@course\.edu"]


def test_single_commit_churn(make_repo):
    repo = build_single_commit_repo(make_repo())
    history = read_history(repo.path)
    assert (history[0].lines_added, history[0].lines_deleted) == (3, 2)
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE, EXCLUDE)
    assert (m.commit_count, m.code_churn) == (1, 5)


def test_fixture_history(make_repo):
    repo = build_mining_repo(make_repo())
    history = read_history(repo.path)
    assert [(c.lines_added, c.lines_deleted) for c in history] == [(0, 2), (3, 1), (3, 0), (10, 0)]
    assert history[-1].author == f"{TA[0]} <{TA[1]}>"


def test_fixture_metrics(make_repo):
    repo = build_mining_repo(make_repo())
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE, EXCLUDE, repo_id="stu01", group_label="nudge")
    assert m.commit_count == 3
    assert m.code_churn == 9
    assert m.first_commit_days == pytest.approx(2.5, abs=1e-9)
    assert m.last_commit_hours == pytest.approx(-1.6, abs=1e-9)


def test_without_exclusion_scaffold_counts(make_repo):
    repo = build_mining_repo(make_repo())
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE)
    assert (m.commit_count, m.code_churn, m.first_commit_days) == (4, 19, 0.0)


def test_window_includes_late_day_only(make_repo):
    repo = make_repo()
    repo.write("a", "1\n")
    repo.commit("late", MINE_DEADLINE + timedelta(hours=24))
    repo.write("a", "1\n2\n")
    repo.commit("too late", MINE_DEADLINE + timedelta(hours=24, seconds=1))
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE)
    assert m.commit_count == 1
    assert m.last_commit_hours == 24.0


def test_no_counted_commits(make_repo):
    repo = make_repo()
    repo.write("a", "1\n")
    repo.commit("old", utc(2019, 1, 1))
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE)
    assert m == RepoMetrics(repo.path.name, "", 0, 0, None, None)


def test_merge_commits_first_parent(make_repo):
    repo = make_repo()
    repo.write("a", "1\n")
    repo.commit("base", utc(2020, 3, 2))
    repo._git("checkout", "-q", "-b", "side")
    repo.write("b", "1\n2\n3\n")
    repo.commit("side work", utc(2020, 3, 3))
    repo._git("checkout", "-q", "main")
    repo.write("a", "1\n2\n")
    repo.commit("main work", utc(2020, 3, 4))
    env = {"GIT_AUTHOR_DATE": "2020-03-05T00:00:00+0000", "GIT_COMMITTER_DATE": "2020-03-05T00:00:00+0000"}
    repo._git("merge", "-q", "--no-ff", "-m", "merge", "side", env=env)
    m = mine_repo(repo.path, MINE_START, MINE_DEADLINE)
    # base(+1), main work(+1), merge(+3 against first parent); side commit not traversed
    assert m.commit_count == 3
    assert m.code_churn == 5


def test_binary_changes_count_zero(make_repo):
    repo = make_repo()
    (repo.path / "blob.bin").write_bytes(bytes(range(256)) * 4)
    repo.commit("binary", utc(2020, 3, 2))
    assert mine_repo(repo.path, MINE_START, MINE_DEADLINE).code_churn == 0


def test_errors(tmp_path, make_repo):
    with pytest.raises(MiningError):
        mine_repo(tmp_path, MINE_START, MINE_DEADLINE)
    empty = make_repo("empty")
    with pytest.raises(MiningError, match="not found"):
        mine_repo(empty.path, MINE_START, MINE_DEADLINE)
    repo = build_single_commit_repo(make_repo("one"))
    with pytest.raises(MiningError, match="branch"):
        mine_repo(repo.path, MINE_START, MINE_DEADLINE, branch="nope")


def test_bare_clone_gives_same_metrics(make_repo, tmp_path):
    repo = build_mining_repo(make_repo())
    bare = tmp_path / "bare.git"
    subprocess.run(["git", "clone", "-q", "--bare", str(repo.path), str(bare)], check=True)
    assert mine_repo(bare, MINE_START, MINE_DEADLINE, EXCLUDE, repo_id="x") == mine_repo(
        repo.path, MINE_START, MINE_DEADLINE, EXCLUDE, repo_id="x"
    )


def _roster(*entries):
    return Roster(repos=tuple(RepoEntry(i, u) for i, u in entries), rubric="unused.json")


def test_mine_roster_rows_sorted(make_repo):
    a = build_mining_repo(make_repo("a"))
    b = build_single_commit_repo(make_repo("b"))
    mined = mine_roster(_roster(("stu02", str(b.path)), ("stu01", str(a.path))), "nudge",
                        MINE_START, MINE_DEADLINE, EXCLUDE, jobs=2)
    assert [m.repo_id for m in mined.metrics] == ["stu01", "stu02"]
    out = io.StringIO()
    write_metrics_csv(mined.metrics, out)
    assert out.getvalue() == (
        "repo_id,group,commits,churn,first_commit_days,last_commit_hours\n"
        "stu01,nudge,3,9,2.500000,-1.600000\n"
        "stu02,nudge,1,5,1.000000,-312.000000\n"
    )


def test_mine_roster_skips_broken(make_repo, tmp_path, caplog):
    a = build_mining_repo(make_repo("a"))
    b = build_single_commit_repo(make_repo("b"))
    mined = mine_roster(
        _roster(("stu01", str(a.path)), ("stu02", str(tmp_path / "missing.git")), ("stu03", str(b.path))),
        "nudge", MINE_START, MINE_DEADLINE, EXCLUDE,
    )
    assert [m.repo_id for m in mined.metrics] == ["stu01", "stu03"]
    assert [s[0] for s in mined.skipped] == ["stu02"]
    assert "skipping stu02" in caplog.text


def test_mine_roster_clones_remote_urls(make_repo):
    a = build_mining_repo(make_repo("a"))
    mined = mine_roster(_roster(("stu01", f"file://{a.path}")), "g", MINE_START, MINE_DEADLINE, EXCLUDE)
    assert mined.metrics[0].code_churn == 9


def test_empty_roster_header_only():
    out = io.StringIO()
    write_metrics_csv(mine_roster(_roster(), "g", MINE_START, MINE_DEADLINE).metrics, out)
    assert out.getvalue() == ",".join(METRICS_HEADER) + "\n"


def test_per_commit_rows(make_repo):
    a = build_mining_repo(make_repo("a"))
    mined = mine_roster(_roster(("stu01", str(a.path))), "nudge", MINE_START, MINE_DEADLINE, EXCLUDE)
    out = io.StringIO()
    write_commits_csv(mined, "nudge", out)
    rows = out.getvalue().splitlines()
    assert rows[0] == "repo_id,group,commit,author,timestamp,lines_added,lines_deleted,churn"
    assert [r.split(",")[-3:] for r in rows[1:]] == [["3", "0", "3"], ["3", "1", "4"], ["0", "2", "2"]]
    assert rows[1].split(",")[4] == "2020-03-03T12:00:00Z"


# --- properties over synthetic commit lists ---------------------------------------

_commits = st.lists(
    st.builds(
        CommitRecord,
        hash=st.uuids().map(str),
        author=st.sampled_from(["A <a@x>", "B <b@x>", "Bot <bot@x>"]),
        timestamp=st.integers(-5 * 86400, 20 * 86400).map(lambda s: MINE_START + timedelta(seconds=s)),
        lines_added=st.integers(0, 500),
        lines_deleted=st.integers(0, 500),
    ),
    max_size=30,
)


@given(_commits, st.randoms())
def test_churn_invariant_under_order(commits, rnd):
    shuffled = list(commits)
    rnd.shuffle(shuffled)
    a = summarize_commits("r", "g", select_commits(commits, MINE_START, MINE_DEADLINE), MINE_START, MINE_DEADLINE)
    b = summarize_commits("r", "g", select_commits(shuffled, MINE_START, MINE_DEADLINE), MINE_START, MINE_DEADLINE)
    assert a == b


@given(_commits, st.integers(0, 3 * 86400), st.integers(0, 3 * 86400))
def test_wider_window_and_fewer_exclusions_never_decrease(commits, widen_start, widen_end):
    narrow = select_commits(commits, MINE_START, MINE_DEADLINE, ["Bot"])
    no_exclusion = select_commits(commits, MINE_START, MINE_DEADLINE)
    wide = select_commits(
        commits, MINE_START - timedelta(seconds=widen_start), MINE_DEADLINE + timedelta(seconds=widen_end)
    )
    assert len(narrow) <= len(no_exclusion) <= len(wide)


@given(_commits)
def test_metric_invariants(commits):
    m = summarize_commits("r", "g", select_commits(commits, MINE_START, MINE_DEADLINE), MINE_START, MINE_DEADLINE)
    assert m.commit_count >= 0 and m.code_churn >= 0
    assert (m.first_commit_days is None) == (m.commit_count == 0) == (m.last_commit_hours is None)
