"""Declarative assignment rubric: ordered process phases and their check items.

A rubric is loaded from a JSON document such as::

    {
      "assignment": {"name": "Project 6", "start": "2020-03-01T00:00:00Z",
                     "deadline": "2020-03-15T23:59:59Z"},
      "update": {"mode": "daily", "hour_utc": 6},
      "phases": [
        {"id": "Rq", "title": "Requirements",
         "items": [{"id": "readme", "description": "README describes functionality",
                    "kind": "file_exists", "path": "README.md"}]}
      ]
    }
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import PurePosixPath
from typing import Any

from classbot._timeutil import format_utc, parse_utc

DEFAULT_TIMEOUT = 120

_ID_RE = re.compile(r"^[a-z0-9_]+$")


class PhaseId(str, enum.Enum):
    """Software development process phases, in process order."""

    Rq = "Rq"
    Ds = "Ds"
    Im = "Im"
    Ut = "Ut"
    St = "St"
    Dp = "Dp"

    @property
    def order(self) -> int:
        return _PHASE_ORDER[self]


_PHASE_ORDER = {phase: i for i, phase in enumerate(PhaseId)}


class CheckKind(str, enum.Enum):
    FILE_EXISTS = "file_exists"
    FILE_ABSENT = "file_absent"
    COMMAND_SUCCEEDS = "command_succeeds"
    MAX_PATTERN_COUNT = "max_pattern_count"

    @property
    def runs_command(self) -> bool:
        return self in (CheckKind.COMMAND_SUCCEEDS, CheckKind.MAX_PATTERN_COUNT)


# Optional fields each kind requires; everything else must be absent.
_KIND_FIELDS = {
    CheckKind.FILE_EXISTS: {"path"},
    CheckKind.FILE_ABSENT: {"path"},
    CheckKind.COMMAND_SUCCEEDS: {"command", "timeout"},
    CheckKind.MAX_PATTERN_COUNT: {"command", "timeout", "pattern", "threshold"},
}
_OPTIONAL_FIELDS = ("path", "command", "timeout", "pattern", "threshold")


class UpdateMode(str, enum.Enum):
    DAILY = "daily"
    ON_CHANGE = "on_change"


class RubricError(ValueError):
    """Raised when a rubric document cannot be parsed or violates the schema."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class CheckSpec:
    id: str
    description: str
    kind: CheckKind
    path: str | None = None
    command: tuple[str, ...] | None = None
    timeout: int | None = None
    pattern: str | None = None
    threshold: int | None = None


@dataclass(frozen=True)
class Phase:
    id: PhaseId
    title: str
    items: tuple[CheckSpec, ...] = ()


@dataclass(frozen=True)
class Rubric:
    assignment_name: str
    start: datetime
    deadline: datetime
    phases: tuple[Phase, ...]
    update_mode: UpdateMode = UpdateMode.DAILY
    update_hour_utc: int | None = 0
    item_ids: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "item_ids", tuple(item.id for phase in self.phases for item in phase.items)
        )

    def items(self) -> list[CheckSpec]:
        return [item for phase in self.phases for item in phase.items]


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate_rubric(r: Rubric) -> list[str]:
    """Return every invariant violation in ``r`` as ``"<field path>: <rule>"``."""
    violations: list[str] = []
    if not isinstance(r.assignment_name, str) or not r.assignment_name.strip():
        violations.append("assignment.name: must be a non-empty string")
    elif "\n" in r.assignment_name:
        violations.append("assignment.name: must be a single line")
    if r.start >= r.deadline:
        violations.append("assignment.deadline: deadline must be after start")

    if r.update_mode == UpdateMode.DAILY:
        if not _is_int(r.update_hour_utc) or not 0 <= r.update_hour_utc <= 23:
            violations.append("update.hour_utc: must be an integer in 0..23 for daily mode")
    elif r.update_hour_utc is not None:
        violations.append("update.hour_utc: only allowed in daily mode")

    if not r.phases:
        violations.append("phases: at least one phase is required")
    elif not any(phase.items for phase in r.phases):
        violations.append("phases: at least one phase must have at least one item")

    seen_phases: set[PhaseId] = set()
    last_order = -1
    seen_items: dict[str, str] = {}
    for i, phase in enumerate(r.phases):
        where = f"phases[{i}]"
        if phase.id in seen_phases:
            violations.append(f"{where}.id: duplicate phase {phase.id.value!r}")
        elif phase.id.order < last_order:
            violations.append(f"{where}.id: phase {phase.id.value!r} is out of process order")
        seen_phases.add(phase.id)
        last_order = max(last_order, phase.id.order)
        if not isinstance(phase.title, str) or not phase.title.strip():
            violations.append(f"{where}.title: must be a non-empty string")
        elif "\n" in phase.title:
            violations.append(f"{where}.title: must be a single line")
        for j, item in enumerate(phase.items):
            item_where = f"{where}.items[{j}]"
            if item.id in seen_items:
                violations.append(
                    f"{item_where}.id: duplicate item id {item.id!r} (first at {seen_items[item.id]})"
                )
            else:
                seen_items[item.id] = item_where
            violations.extend(_check_violations(item, item_where))
    return violations


def _check_violations(item: CheckSpec, where: str) -> list[str]:
    out: list[str] = []
    if not isinstance(item.id, str) or not _ID_RE.match(item.id):
        out.append(f"{where}.id: must match [a-z0-9_]+")
    if not isinstance(item.description, str) or not item.description.strip():
        out.append(f"{where}.description: must be a non-empty string")
    if "\n" in (item.description or ""):
        out.append(f"{where}.description: must be a single line")
    required = _KIND_FIELDS[item.kind]
    for name in _OPTIONAL_FIELDS:
        present = getattr(item, name) is not None
        if name in required and not present:
            out.append(f"{where}.{name}: required for kind {item.kind.value}")
        elif name not in required and present:
            out.append(f"{where}.{name}: not allowed for kind {item.kind.value}")

    if item.path is not None:
        p = PurePosixPath(item.path)
        if not item.path or p.is_absolute() or ".." in p.parts:
            out.append(f"{where}.path: must be a relative path inside the repository")
    if item.command is not None:
        if not item.command or not all(isinstance(a, str) and a for a in item.command):
            out.append(f"{where}.command: must be a non-empty list of non-empty strings")
    if item.timeout is not None and (not _is_int(item.timeout) or item.timeout <= 0):
        out.append(f"{where}.timeout: must be a positive integer")
    if item.threshold is not None and (not _is_int(item.threshold) or item.threshold < 0):
        out.append(f"{where}.threshold: must be a non-negative integer")
    if item.pattern is not None:
        try:
            re.compile(item.pattern)
        except re.error as exc:
            out.append(f"{where}.pattern: invalid regular expression ({exc})")
    return out


class _Reader:
    """Collects schema violations while walking the decoded JSON tree."""

    def __init__(self) -> None:
        self.violations: list[str] = []

    def fail(self, where: str, rule: str) -> None:
        self.violations.append(f"{where}: {rule}")

    def obj(self, value: Any, where: str, allowed: set[str]) -> dict | None:
        if not isinstance(value, dict):
            self.fail(where, "must be an object")
            return None
        for key in sorted(set(value) - allowed):
            self.fail(f"{where}.{key}" if where else key, "unknown field")
        return value

    def get(self, mapping: dict, key: str, where: str, kind: type | tuple, required=True):
        path = f"{where}.{key}" if where else key
        if key not in mapping:
            if required:
                self.fail(path, "required field missing")
            return None
        value = mapping[key]
        if kind is int:
            ok = _is_int(value)
        else:
            ok = isinstance(value, kind)
        if not ok:
            self.fail(path, f"wrong type ({type(value).__name__})")
            return None
        return value

    def timestamp(self, mapping: dict, key: str, where: str) -> datetime | None:
        raw = self.get(mapping, key, where, str)
        if raw is None:
            return None
        try:
            return parse_utc(raw)
        except ValueError:
            self.fail(f"{where}.{key}", f"invalid ISO-8601 UTC timestamp {raw!r}")
            return None


def _read_item(rd: _Reader, raw: Any, where: str) -> CheckSpec | None:
    allowed = {"id", "description", "kind", *_OPTIONAL_FIELDS}
    data = rd.obj(raw, where, allowed)
    if data is None:
        return None
    item_id = rd.get(data, "id", where, str)
    description = rd.get(data, "description", where, str)
    kind_raw = rd.get(data, "kind", where, str)
    kind = None
    if kind_raw is not None:
        try:
            kind = CheckKind(kind_raw)
        except ValueError:
            rd.fail(f"{where}.kind", f"unknown check kind {kind_raw!r}")
    path = rd.get(data, "path", where, str, required=False)
    command = rd.get(data, "command", where, list, required=False)
    if command is not None and not all(isinstance(a, str) for a in command):
        rd.fail(f"{where}.command", "must be a list of strings")
        command = None
    timeout = rd.get(data, "timeout", where, int, required=False)
    pattern = rd.get(data, "pattern", where, str, required=False)
    threshold = rd.get(data, "threshold", where, int, required=False)
    if item_id is None or description is None or kind is None:
        return None
    if kind.runs_command and timeout is None and "timeout" not in data:
        timeout = DEFAULT_TIMEOUT
    return CheckSpec(
        id=item_id,
        description=description,
        kind=kind,
        path=path,
        command=tuple(command) if command is not None else None,
        timeout=timeout,
        pattern=pattern,
        threshold=threshold,
    )


def _read_phase(rd: _Reader, raw: Any, where: str) -> Phase | None:
    data = rd.obj(raw, where, {"id", "title", "items"})
    if data is None:
        return None
    phase_raw = rd.get(data, "id", where, str)
    title = rd.get(data, "title", where, str)
    items_raw = rd.get(data, "items", where, list)
    phase_id = None
    if phase_raw is not None:
        try:
            phase_id = PhaseId(phase_raw)
        except ValueError:
            rd.fail(f"{where}.id", f"unknown phase {phase_raw!r}")
    items = []
    for j, raw_item in enumerate(items_raw or []):
        item = _read_item(rd, raw_item, f"{where}.items[{j}]")
        if item is not None:
            items.append(item)
    if phase_id is None or title is None or items_raw is None:
        return None
    return Phase(id=phase_id, title=title, items=tuple(items))


def parse_rubric(source: bytes | str) -> Rubric:
    """Parse and validate a rubric document.

    Raises :class:`RubricError` for any malformed input; never raises anything
    else, whatever the bytes.
    """
    try:
        text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source
    except UnicodeDecodeError as exc:
        raise RubricError([f"document: not valid UTF-8 ({exc.reason})"]) from None
    if not isinstance(text, str):
        raise RubricError(["document: expected bytes or text"])
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise RubricError([f"document: malformed JSON ({exc})"]) from None

    rd = _Reader()
    root = rd.obj(doc, "", {"assignment", "update", "phases"})
    if root is None:
        raise RubricError(rd.violations)

    name = start = deadline = None
    assignment = rd.get(root, "assignment", "", dict)
    if assignment is not None:
        rd.obj(assignment, "assignment", {"name", "start", "deadline"})
        name = rd.get(assignment, "name", "assignment", str)
        start = rd.timestamp(assignment, "start", "assignment")
        deadline = rd.timestamp(assignment, "deadline", "assignment")

    mode = UpdateMode.DAILY
    hour: int | None = 0
    update = rd.get(root, "update", "", dict, required=False)
    if update is not None:
        rd.obj(update, "update", {"mode", "hour_utc"})
        mode_raw = rd.get(update, "mode", "update", str, required=False)
        if mode_raw is not None:
            try:
                mode = UpdateMode(mode_raw)
            except ValueError:
                rd.fail("update.mode", f"unknown update mode {mode_raw!r}")
        if "hour_utc" in update:
            hour = rd.get(update, "hour_utc", "update", int)
        else:
            hour = 0 if mode == UpdateMode.DAILY else None

    phases = []
    phases_raw = rd.get(root, "phases", "", list)
    for i, raw_phase in enumerate(phases_raw or []):
        phase = _read_phase(rd, raw_phase, f"phases[{i}]")
        if phase is not None:
            phases.append(phase)

    if rd.violations:
        raise RubricError(rd.violations)

    rubric = Rubric(
        assignment_name=name,
        start=start,
        deadline=deadline,
        phases=tuple(phases),
        update_mode=mode,
        update_hour_utc=hour,
    )
    violations = validate_rubric(rubric)
    if violations:
        raise RubricError(violations)
    return rubric


def rubric_to_dict(r: Rubric) -> dict:
    update: dict[str, Any] = {"mode": r.update_mode.value}
    if r.update_hour_utc is not None:
        update["hour_utc"] = r.update_hour_utc
    phases = []
    for phase in r.phases:
        items = []
        for item in phase.items:
            entry: dict[str, Any] = {
                "id": item.id,
                "description": item.description,
                "kind": item.kind.value,
            }
            for name in _OPTIONAL_FIELDS:
                value = getattr(item, name)
                if value is not None:
                    entry[name] = list(value) if name == "command" else value
            items.append(entry)
        phases.append({"id": phase.id.value, "title": phase.title, "items": items})
    return {
        "assignment": {
            "name": r.assignment_name,
            "start": format_utc(r.start),
            "deadline": format_utc(r.deadline),
        },
        "update": update,
        "phases": phases,
    }


def serialize_rubric(r: Rubric) -> bytes:
    return json.dumps(rubric_to_dict(r), indent=2, ensure_ascii=False).encode("utf-8") + b"\n"


def load_rubric(path) -> Rubric:
    with open(path, "rb") as fh:
        return parse_rubric(fh.read())
