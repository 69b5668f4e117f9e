"""Weekday names and display renderings for minute-valued quantities."""

from __future__ import annotations

import datetime as dt
import math

WEEKDAYS = ("Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat")
MINUTES_PER_DAY = 1440


def weekday_name(day: dt.date) -> str:
    # date.weekday() is Monday-based
    return WEEKDAYS[(day.weekday() + 1) % 7]


def _round_minute(minutes: float) -> int:
    return int(math.floor(minutes + 0.5))


def format_clock(minutes: float) -> str:
    """Render minutes after midnight (any sign) as a 12-hour clock, e.g. ``04:19AM``.

    Hours run 00-11 within each half-day, so 00:30 renders as ``00:30AM``.
    """
    m = _round_minute(minutes) % MINUTES_PER_DAY
    hour, minute = divmod(m, 60)
    suffix = "AM" if hour < 12 else "PM"
    return f"{hour % 12:02d}:{minute:02d}{suffix}"


def format_hm(minutes: float) -> str:
    """Render a signed duration in minutes as ``h:mm`` (``-0:05``, ``9:25``)."""
    m = _round_minute(minutes)
    sign = "-" if m < 0 else ""
    hours, rest = divmod(abs(m), 60)
    return f"{sign}{hours}:{rest:02d}"


def parse_hm(text: str) -> int:
    """Inverse of :func:`format_hm` for whole minutes."""
    text = text.strip()
    sign = -1 if text.startswith("-") else 1
    hours, minutes = text.lstrip("+-").split(":")
    return sign * (int(hours) * 60 + int(minutes))


def parse_clock(text: str) -> int:
    """Minutes after midnight for ``4:16AM`` / ``04:16PM`` style strings."""
    text = text.strip().upper()
    suffix = text[-2:]
    hours, minutes = text[:-2].split(":")
    h = int(hours) % 12
    if suffix == "PM":
        h += 12
    elif suffix != "AM":
        raise ValueError(f"not a clock time: {text!r}")
    return h * 60 + int(minutes)
