"""Event-log parsing and tumbling-window aggregation.

The canonical input is a unified line-delimited stream of JSON records,
one per proxy request: ``{"ts": <seconds>, "kind": "request"|"bind"}``.
A ``bind`` line is a request that opened a directory connection, so it
counts toward both the request total and the marked total.
"""

from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

from .errors import ParseError, SequencingError

__all__ = [
    "REORDER_TOLERANCE_S",
    "EventKind",
    "Event",
    "parse_event",
    "read_events",
    "WindowStats",
    "window_stats",
    "windowize",
]

# Multi-worker log writers flush independently, so mild timestamp jitter is
# normal; regressions within this many seconds are reordered silently while
# anything larger aborts the run as corrupt input.
REORDER_TOLERANCE_S = 1.0


class EventKind(Enum):
    REQUEST = "request"
    BIND = "bind"


@dataclass(frozen=True)
class Event:
    """One proxy request; kind BIND means it reached the directory server."""

    ts: float
    kind: EventKind

    def __post_init__(self) -> None:
        if isinstance(self.ts, bool) or not isinstance(self.ts, numbers.Real):
            raise ValueError(f"ts must be a real number, got {self.ts!r}")
        if not (self.ts >= 0.0 and math.isfinite(self.ts)):
            raise ValueError(f"ts must be finite and >= 0, got {self.ts!r}")
        if not isinstance(self.kind, EventKind):
            raise ValueError(f"kind must be an EventKind, got {self.kind!r}")
        object.__setattr__(self, "ts", float(self.ts))

    @property
    def marked(self) -> bool:
        return self.kind is EventKind.BIND

    def to_json(self) -> str:
        return json.dumps({"ts": self.ts, "kind": self.kind.value})


def parse_event(line: str, line_no: int = 0) -> Event:
    """Decode one log line into an :class:`Event`.

    Raises :class:`ParseError` carrying ``line_no`` when the record is not
    valid JSON, is missing a field, has a non-numeric timestamp, or names
    an unknown kind.  Unrecognized extra fields are ignored.
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"invalid record: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise ParseError(line_no, f"expected an object, got {type(record).__name__}")
    try:
        ts = record["ts"]
        kind_name = record["kind"]
    except KeyError as exc:
        raise ParseError(line_no, f"missing field {exc.args[0]!r}") from exc
    if isinstance(ts, bool) or not isinstance(ts, (int, float)):
        raise ParseError(line_no, f"ts must be a number, got {ts!r}")
    try:
        kind = EventKind(kind_name)
    except ValueError:
        raise ParseError(line_no, f"unknown kind {kind_name!r}") from None
    try:
        return Event(float(ts), kind)
    except ValueError as exc:
        raise ParseError(line_no, str(exc)) from exc


def read_events(lines: Iterable[str]) -> Iterator[Event]:
    """Parse an iterable of log lines, skipping blank ones.

    Line numbers reported in errors are 1-based positions in the iterable.
    """
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        yield parse_event(line, line_no)


@dataclass(frozen=True)
class WindowStats:
    """Aggregated counts and empirical rates for one tumbling window.

    chi is the marked fraction n_marked / n_requests and theta the per-user
    request rate n_requests / (n_users * window_s); both are 0 for windows
    that saw no traffic, which carry zero_traffic=True so consumers can
    tell "no information" apart from "genuinely zero marked fraction".
    """

    window_start_ts: float
    window_s: float
    n_requests: int
    n_marked: int
    chi: float
    theta: float
    zero_traffic: bool

    def __post_init__(self) -> None:
        if not (self.window_s > 0.0 and math.isfinite(self.window_s)):
            raise ValueError(f"window_s must be positive and finite, got {self.window_s!r}")
        if self.n_requests < 0 or self.n_marked < 0:
            raise ValueError("event counts must be nonnegative")
        if self.n_marked > self.n_requests:
            raise ValueError(
                f"n_marked {self.n_marked} exceeds n_requests {self.n_requests}"
            )
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError(f"chi must lie in [0, 1], got {self.chi!r}")
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0, got {self.theta!r}")
        if self.zero_traffic != (self.n_requests == 0):
            raise ValueError("zero_traffic flag inconsistent with n_requests")

    @classmethod
    def from_counts(
        cls,
        window_start_ts: float,
        window_s: float,
        n_requests: int,
        n_marked: int,
        n_users: int,
    ) -> "WindowStats":
        if n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {n_users}")
        chi = n_marked / n_requests if n_requests else 0.0
        theta = n_requests / (n_users * window_s)
        return cls(
            window_start_ts=float(window_start_ts),
            window_s=float(window_s),
            n_requests=int(n_requests),
            n_marked=int(n_marked),
            chi=chi,
            theta=theta,
            zero_traffic=n_requests == 0,
        )

    @property
    def window_end_ts(self) -> float:
        return self.window_start_ts + self.window_s

    def to_json(self) -> str:
        return json.dumps(
            {
                "window_start_ts": self.window_start_ts,
                "window_s": self.window_s,
                "n_requests": self.n_requests,
                "n_marked": self.n_marked,
                "chi": self.chi,
                "theta": self.theta,
                "zero_traffic": self.zero_traffic,
            }
        )


def window_stats(
    events: Iterable[Event],
    window_s: float,
    n_users: int,
    window_start_ts: float,
) -> WindowStats:
    """Count one pre-sliced window.

    Every event must fall inside [window_start_ts, window_start_ts +
    window_s) and arrive in nondecreasing time order; violations raise
    :class:`SequencingError`.
    """
    if window_s <= 0.0:
        raise ValueError(f"window_s must be positive, got {window_s!r}")
    end = window_start_ts + window_s
    n_requests = 0
    n_marked = 0
    prev_ts = -math.inf
    for ev in events:
        if ev.ts < prev_ts:
            raise SequencingError(
                f"event at {ev.ts} arrives after one at {prev_ts}; input must be time-ordered"
            )
        if not window_start_ts <= ev.ts < end:
            raise SequencingError(
                f"event at {ev.ts} outside window [{window_start_ts}, {end})"
            )
        prev_ts = ev.ts
        n_requests += 1
        if ev.marked:
            n_marked += 1
    return WindowStats.from_counts(window_start_ts, window_s, n_requests, n_marked, n_users)


def windowize(
    events: Iterable[Event],
    window_s: float,
    n_users: int,
    tolerance_s: float = REORDER_TOLERANCE_S,
) -> Iterator[WindowStats]:
    """Aggregate a time-ordered event stream into contiguous windows.

    Windows are half-open intervals [anchor + i*T, anchor + (i+1)*T)
    anchored at the first event's timestamp.  Every elapsed window is
    emitted, including zero-traffic ones, in order.  A window is released
    only once the newest timestamp seen is past its end by more than the
    reorder tolerance, so late events inside the tolerance still land in
    their proper window; events older than that raise
    :class:`SequencingError`.
    """
    if window_s <= 0.0 or not math.isfinite(window_s):
        raise ValueError(f"window_s must be positive and finite, got {window_s!r}")
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    if tolerance_s < 0.0:
        raise ValueError(f"tolerance_s must be >= 0, got {tolerance_s!r}")

    it = iter(events)
    first = next(it, None)
    if first is None:
        return
    anchor = first.ts
    max_ts = first.ts
    counts: dict[int, list[int]] = {}
    next_emit = 0

    def add(ev: Event) -> None:
        idx = int((ev.ts - anchor) // window_s)
        if idx < 0:
            # stragglers inside the tolerance but ahead of the anchor
            idx = 0
        cell = counts.setdefault(idx, [0, 0])
        cell[0] += 1
        if ev.marked:
            cell[1] += 1

    def emit(idx: int) -> WindowStats:
        n_requests, n_marked = counts.pop(idx, (0, 0))
        return WindowStats.from_counts(
            anchor + idx * window_s, window_s, n_requests, n_marked, n_users
        )

    add(first)
    for ev in it:
        if ev.ts < max_ts - tolerance_s:
            raise SequencingError(
                f"timestamp {ev.ts} regresses {max_ts - ev.ts:.6g}s behind the newest "
                f"event at {max_ts}; tolerance is {tolerance_s:.6g}s"
            )
        if ev.ts > max_ts:
            max_ts = ev.ts
        add(ev)
        # a window is safe to close once no in-tolerance event can reach it
        while anchor + (next_emit + 1) * window_s + tolerance_s <= max_ts:
            yield emit(next_emit)
            next_emit += 1
    last_idx = int((max_ts - anchor) // window_s)
    while next_emit <= last_idx:
        yield emit(next_emit)
        next_emit += 1
