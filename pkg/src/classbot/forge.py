"""Issue-tracker access: a GitHub-compatible REST client and an in-memory fake.

Both share :class:`Forge`, which owns retries with exponential backoff, the
per-repository request spacing, body truncation and the dry-run guard. The
subclasses only implement single-attempt primitives.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.github.com"
TOKEN_ENV = "CLASSBOT_TOKEN"
MAX_BODY_CHARS = 65536
TRUNCATION_NOTICE = "\n\n_[class-bot: issue body truncated]_\n"
PER_PAGE = 100


class ForgeError(Exception):
    """Base class for issue-tracker failures."""


class ForgeNetworkError(ForgeError):
    """Transport failure or server error; retried."""


class ForgeRateLimitError(ForgeError):
    """The forge refused the request for rate limiting; retried."""


class ForgeAuthError(ForgeError):
    """Bad or missing credentials; never retried."""


class IssueNotFoundError(ForgeError):
    pass


class IssueClosedError(ForgeError):
    pass


class DryRunViolation(ForgeError):
    """A mutation was attempted on a client in dry-run mode."""


_TRANSIENT = (ForgeNetworkError, ForgeRateLimitError)


@dataclass(frozen=True, order=True)
class IssueRef:
    repo: str
    number: int


@dataclass(frozen=True)
class Issue:
    ref: IssueRef
    title: str
    body: str
    state: str = "open"


@dataclass(frozen=True)
class ForgeConfig:
    base_url: str = DEFAULT_BASE_URL
    token: str | None = field(default=None, repr=False)
    max_retries: int = 3
    min_request_interval: int = 0  # milliseconds
    backoff_base: float = 0.5  # seconds; doubled per retry

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.min_request_interval < 0:
            raise ValueError("min_request_interval must be >= 0")

    @classmethod
    def from_env(cls, base_url: str | None = None, **kwargs) -> "ForgeConfig":
        return cls(
            base_url=base_url or DEFAULT_BASE_URL, token=os.environ.get(TOKEN_ENV), **kwargs
        )


def fit_body(body: str) -> str:
    """Clamp ``body`` to the forge's size limit, ending with a truncation notice."""
    if len(body) <= MAX_BODY_CHARS:
        return body
    return body[: MAX_BODY_CHARS - len(TRUNCATION_NOTICE)] + TRUNCATION_NOTICE


class Forge:
    def __init__(
        self,
        config: ForgeConfig | None = None,
        *,
        dry_run: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        monotonic: Callable[[], float] = time.monotonic,
    ):
        self.config = config or ForgeConfig()
        self.dry_run = dry_run
        self._sleep = sleep
        self._monotonic = monotonic
        self._dispatch_lock = threading.Lock()
        self._last_request: dict[str, float] = {}

    # single-attempt primitives, implemented by subclasses
    def _list_open_issues(self, repo: str, page: int) -> tuple[list[Issue], bool]:
        """One page of open issues plus whether another page follows."""
        raise NotImplementedError

    def _get_issue(self, ref: IssueRef) -> Issue:
        raise NotImplementedError

    def _create_issue(self, repo: str, title: str, body: str) -> IssueRef:
        raise NotImplementedError

    def _update_issue(self, ref: IssueRef, body: str) -> None:
        raise NotImplementedError

    def _throttle(self, repo: str) -> None:
        interval = self.config.min_request_interval / 1000.0
        with self._dispatch_lock:
            last = self._last_request.get(repo)
            if last is not None and interval > 0:
                wait = last + interval - self._monotonic()
                if wait > 0:
                    self._sleep(wait)
            self._last_request[repo] = self._monotonic()

    def _call(self, repo: str, fn, *args, on_retry: Callable[[], object] | None = None):
        attempt = 0
        while True:
            self._throttle(repo)
            try:
                return fn(*args)
            except _TRANSIENT as exc:
                if attempt >= self.config.max_retries:
                    raise
                delay = self.config.backoff_base * (2**attempt)
                attempt += 1
                logger.warning(
                    "forge request failed (%s); retry %d/%d in %.2fs",
                    exc, attempt, self.config.max_retries, delay,
                )
                self._sleep(delay)
                if on_retry is not None:
                    found = on_retry()
                    if found is not None:
                        return found

    def _guard(self, what: str) -> None:
        if self.dry_run:
            raise DryRunViolation(f"{what} attempted in dry-run mode")

    def list_open_issues(self, repo: str) -> list[Issue]:
        issues: list[Issue] = []
        page = 1
        while True:
            batch, more = self._call(repo, self._list_open_issues, repo, page)
            issues.extend(batch)
            if not more:
                return issues
            page += 1

    def find_marked_issue(self, repo: str, marker: str) -> IssueRef | None:
        """Return the open issue whose body starts with ``marker``.

        If several match, the lowest-numbered one wins and a warning is logged.
        """
        matches = sorted(
            issue.ref
            for issue in self.list_open_issues(repo)
            if issue.state == "open" and issue.body.startswith(marker)
        )
        if len(matches) > 1:
            logger.warning(
                "repo %s has %d marked issues (%s); using #%d",
                repo, len(matches), ", ".join(f"#{m.number}" for m in matches), matches[0].number,
            )
        return matches[0] if matches else None

    def get_issue(self, ref: IssueRef) -> Issue:
        return self._call(ref.repo, self._get_issue, ref)

    def create_issue(self, repo: str, title: str, body: str) -> IssueRef:
        if not body:
            raise ValueError("issue body must not be empty")
        self._guard("create_issue")
        body = fit_body(body)
        first_line = body.split("\n", 1)[0]

        def already_created():
            # A create whose response was lost may still have landed.
            if first_line.startswith("<!--"):
                return self.find_marked_issue(repo, first_line)
            return None

        return self._call(repo, self._create_issue, repo, title, body, on_retry=already_created)

    def update_issue(self, ref: IssueRef, body: str) -> None:
        if not body:
            raise ValueError("issue body must not be empty")
        self._guard("update_issue")
        self._call(ref.repo, self._update_issue, ref, fit_body(body))


class GitHubForge(Forge):
    """Client for the GitHub issues REST API (or a compatible forge)."""

    def __init__(
        self,
        config: ForgeConfig | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 30.0,
        **kwargs,
    ):
        super().__init__(config, **kwargs)
        headers = {
            "Accept": "application/vnd.github+json",
            "User-Agent": "class-bot",
        }
        if self.config.token:
            headers["Authorization"] = f"token {self.config.token}"
        self._http = httpx.Client(
            base_url=self.config.base_url.rstrip("/"),
            headers=headers,
            timeout=timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        try:
            resp = self._http.request(method, url, **kwargs)
        except httpx.TransportError as exc:
            raise ForgeNetworkError(f"{method} {url}: {exc.__class__.__name__}") from exc
        if resp.status_code == 401:
            raise ForgeAuthError(f"{method} {url}: authentication failed")
        if resp.status_code == 429 or (
            resp.status_code == 403 and resp.headers.get("X-RateLimit-Remaining") == "0"
        ):
            raise ForgeRateLimitError(f"{method} {url}: rate limited")
        if resp.status_code == 403:
            raise ForgeAuthError(f"{method} {url}: forbidden")
        if resp.status_code >= 500:
            raise ForgeNetworkError(f"{method} {url}: server error {resp.status_code}")
        return resp

    @staticmethod
    def _issue(repo: str, data: dict) -> Issue:
        return Issue(
            ref=IssueRef(repo, int(data["number"])),
            title=data.get("title") or "",
            body=data.get("body") or "",
            state=data.get("state", "open"),
        )

    def _list_open_issues(self, repo: str, page: int) -> tuple[list[Issue], bool]:
        resp = self._request(
            "GET",
            f"/repos/{repo}/issues",
            params={"state": "open", "per_page": PER_PAGE, "page": page},
        )
        if resp.status_code == 404:
            raise IssueNotFoundError(f"repository {repo} not found")
        resp.raise_for_status()
        data = resp.json()
        # The listing includes pull requests; they still count towards the page size.
        issues = [self._issue(repo, d) for d in data if "pull_request" not in d]
        return issues, len(data) == PER_PAGE

    def _get_issue(self, ref: IssueRef) -> Issue:
        resp = self._request("GET", f"/repos/{ref.repo}/issues/{ref.number}")
        if resp.status_code in (404, 410):
            raise IssueNotFoundError(f"{ref.repo}#{ref.number} not found")
        resp.raise_for_status()
        return self._issue(ref.repo, resp.json())

    def _create_issue(self, repo: str, title: str, body: str) -> IssueRef:
        resp = self._request("POST", f"/repos/{repo}/issues", json={"title": title, "body": body})
        if resp.status_code in (404, 410):
            raise IssueNotFoundError(f"repository {repo} not found")
        resp.raise_for_status()
        return IssueRef(repo, int(resp.json()["number"]))

    def _update_issue(self, ref: IssueRef, body: str) -> None:
        current = self._get_issue(ref)
        if current.state != "open":
            raise IssueClosedError(f"{ref.repo}#{ref.number} is closed")
        resp = self._request(
            "PATCH", f"/repos/{ref.repo}/issues/{ref.number}", json={"body": body}
        )
        if resp.status_code in (404, 410):
            raise IssueNotFoundError(f"{ref.repo}#{ref.number} not found")
        resp.raise_for_status()


@dataclass
class _StoredIssue:
    title: str
    body: str
    state: str = "open"


class FakeForge(Forge):
    """In-memory forge for tests and offline demo runs.

    ``calls`` counts every primitive attempt (including failed ones) and
    ``writes`` counts mutations that took effect. Use :meth:`fail_next` to make
    upcoming attempts raise.
    """

    def __init__(self, config: ForgeConfig | None = None, **kwargs):
        kwargs.setdefault("sleep", lambda _s: None)
        super().__init__(config or ForgeConfig(max_retries=3, backoff_base=0.0), **kwargs)
        self.issues: dict[str, dict[int, _StoredIssue]] = {}
        self.calls = 0
        self.writes = 0
        self.write_log: list[tuple[str, IssueRef]] = []
        self._failures: list[ForgeError] = []
        self._lock = threading.Lock()

    def fail_next(self, error: ForgeError, times: int = 1) -> None:
        self._failures.extend([error] * times)

    def seed_issue(self, repo: str, body: str, title: str = "seeded", state: str = "open") -> IssueRef:
        with self._lock:
            issues = self.issues.setdefault(repo, {})
            number = max(issues, default=0) + 1
            issues[number] = _StoredIssue(title, body, state)
            return IssueRef(repo, number)

    def seed_issue_number(self, repo: str, number: int, body: str, state: str = "open") -> IssueRef:
        with self._lock:
            self.issues.setdefault(repo, {})[number] = _StoredIssue("seeded", body, state)
            return IssueRef(repo, number)

    def close(self, ref: IssueRef) -> None:
        self.issues[ref.repo][ref.number].state = "closed"

    def marked_issues(self, repo: str, marker: str) -> list[IssueRef]:
        return sorted(
            IssueRef(repo, n)
            for n, issue in self.issues.get(repo, {}).items()
            if issue.body.startswith(marker)
        )

    def body(self, ref: IssueRef) -> str:
        return self.issues[ref.repo][ref.number].body

    def _attempt(self) -> None:
        with self._lock:
            self.calls += 1
            if self._failures:
                raise self._failures.pop(0)

    def _list_open_issues(self, repo: str, page: int) -> tuple[list[Issue], bool]:
        self._attempt()
        with self._lock:
            everything = [
                Issue(IssueRef(repo, n), i.title, i.body, i.state)
                for n, i in sorted(self.issues.get(repo, {}).items())
                if i.state == "open"
            ]
        start = (page - 1) * PER_PAGE
        return everything[start : start + PER_PAGE], start + PER_PAGE < len(everything)

    def _get_issue(self, ref: IssueRef) -> Issue:
        self._attempt()
        with self._lock:
            stored = self.issues.get(ref.repo, {}).get(ref.number)
            if stored is None:
                raise IssueNotFoundError(f"{ref.repo}#{ref.number} not found")
            return Issue(ref, stored.title, stored.body, stored.state)

    def _create_issue(self, repo: str, title: str, body: str) -> IssueRef:
        self._attempt()
        with self._lock:
            issues = self.issues.setdefault(repo, {})
            ref = IssueRef(repo, max(issues, default=0) + 1)
            issues[ref.number] = _StoredIssue(title, body)
            self.writes += 1
            self.write_log.append(("create", ref))
            return ref

    def _update_issue(self, ref: IssueRef, body: str) -> None:
        self._attempt()
        with self._lock:
            stored = self.issues.get(ref.repo, {}).get(ref.number)
            if stored is None:
                raise IssueNotFoundError(f"{ref.repo}#{ref.number} not found")
            if stored.state != "open":
                raise IssueClosedError(f"{ref.repo}#{ref.number} is closed")
            stored.body = body
            self.writes += 1
            self.write_log.append(("update", ref))
