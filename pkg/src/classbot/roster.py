from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path


class RosterError(ValueError):
    pass


_SLUG_RE = re.compile(r"(?:[:/])([^/:]+/[^/]+?)(?:\.git)?/?$")


@dataclass(frozen=True)
class RepoEntry:
    id: str
    url: str
    slug: str | None = None

    @property
    def forge_repo(self) -> str:
        """``owner/name`` on the forge: explicit ``repo`` field, else parsed from a remote URL."""
        if self.slug:
            return self.slug
        if "://" in self.url or self.url.startswith("git@"):
            match = _SLUG_RE.search(self.url)
            if match:
                return match.group(1)
        return self.id


@dataclass(frozen=True)
class Roster:
    """Student repositories for one assignment plus the rubric they are held to."""

    repos: tuple[RepoEntry, ...]
    rubric: str
    name: str = "roster"

    def __post_init__(self) -> None:
        ids = [r.id for r in self.repos]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise RosterError(f"duplicate repo ids: {', '.join(dupes)}")


def parse_roster(data: bytes | str, base_dir: str | os.PathLike = ".", name: str = "roster") -> Roster:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RosterError(f"malformed roster: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("repos"), list):
        raise RosterError("roster must be an object with a 'repos' list")
    rubric = doc.get("rubric")
    if not isinstance(rubric, str) or not rubric:
        raise RosterError("roster.rubric must be a path")
    entries = []
    for i, raw in enumerate(doc["repos"]):
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str) or not isinstance(
            raw.get("url"), str
        ):
            raise RosterError(f"repos[{i}] needs string 'id' and 'url'")
        if not raw["id"] or "/" in raw["id"] or raw["id"] in (".", ".."):
            raise RosterError(f"repos[{i}].id {raw['id']!r} is not a usable identifier")
        url = raw["url"]
        # Relative local paths are resolved against the roster file's directory.
        if "://" not in url and not url.startswith("git@") and not os.path.isabs(url):
            candidate = Path(base_dir) / url
            if candidate.exists():
                url = str(candidate.resolve())
        slug = raw.get("repo")
        if slug is not None and (not isinstance(slug, str) or slug.count("/") != 1):
            raise RosterError(f"repos[{i}].repo must look like 'owner/name'")
        entries.append(RepoEntry(raw["id"], url, slug))
    rubric_path = Path(rubric)
    if not rubric_path.is_absolute():
        rubric_path = Path(base_dir) / rubric_path
    return Roster(repos=tuple(entries), rubric=str(rubric_path), name=name)


def load_roster(path: str | os.PathLike) -> Roster:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise RosterError(f"cannot read roster {p}: {exc.strerror}") from None
    return parse_roster(data, base_dir=p.parent, name=p.stem)
