from __future__ import annotations

from datetime import datetime, timezone


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp carrying an explicit UTC offset or ``Z``."""
    if not isinstance(text, str):
        raise ValueError(f"expected ISO-8601 string, got {type(text).__name__}")
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    value = datetime.fromisoformat(raw)
    if value.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no timezone")
    return value.astimezone(timezone.utc)


def format_utc(value: datetime) -> str:
    value = value.astimezone(timezone.utc)
    if value.microsecond:
        return value.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


def utcnow() -> datetime:
    return datetime.now(timezone.utc)
