"""Merge probe streams into client activity sessions and derive reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable

from .leaks import extract_terms, registrable_suffix
from .probing import ECHO_REPLY, KIND_ICMP, KIND_RDNS, ProbeSample
from .snapshots import SnapshotDay, format_ts, parse_ts

_KIND_ORDER = {KIND_ICMP: 0, KIND_RDNS: 1}

_NON_VALUE_OUTCOMES = {"nxdomain", "servfail", "timeout", ""}

START_SLACK = timedelta(minutes=5)


@dataclass
class SessionGroup:
    """One inferred client activity period on one address."""

    group_id: int
    ip: str
    start: datetime
    end: datetime
    session_hostname: str | None = None
    first_ptr: str = ""
    last_ptr: str = ""
    successful: bool = False
    ptr_reverted: bool = False
    timing_aligned: bool = False
    lingering_min: float | None = None


@dataclass
class GroupBreakdown:
    all: int = 0
    successful: int = 0
    reverted: int = 0
    aligned: int = 0

    @classmethod
    def from_groups(cls, groups: Iterable[SessionGroup]) -> "GroupBreakdown":
        breakdown = cls()
        for group in groups:
            breakdown.all += 1
            breakdown.successful += group.successful
            breakdown.reverted += group.ptr_reverted
            breakdown.aligned += group.timing_aligned
        return breakdown


def _ip_key(ip: str) -> tuple[int, ...]:
    return tuple(int(part) for part in ip.split("."))


def merge_streams(samples: Iterable[ProbeSample]) -> dict[str, list[ProbeSample]]:
    """Per-ip sample sequences joined on the 5-minute truncated timestamp;
    within a cell ICMP samples order before rDNS."""
    streams: dict[str, list[ProbeSample]] = {}
    for sample in samples:
        streams.setdefault(sample.ip, []).append(sample)
    ordered = {}
    for ip in sorted(streams, key=_ip_key):
        ordered[ip] = sorted(
            streams[ip], key=lambda s: (s.truncated_ts, _KIND_ORDER.get(s.kind, 2), s.sent_at)
        )
    return ordered


def infer_sessions(streams: dict[str, list[ProbeSample]]) -> list[SessionGroup]:
    """A session opens at the first echo after an offline period and closes at
    the last echo before the next offline inference (one missed probe)."""
    groups: list[SessionGroup] = []
    next_id = 1
    for ip, stream in streams.items():
        online = False
        start: datetime | None = None
        last_echo: datetime | None = None
        for sample in sorted(
            (s for s in stream if s.kind == KIND_ICMP), key=lambda s: s.sent_at
        ):
            if sample.outcome == ECHO_REPLY:
                if not online:
                    online = True
                    start = sample.sent_at
                last_echo = sample.sent_at
            elif online:
                groups.append(SessionGroup(next_id, ip, start, last_echo))
                next_id += 1
                online = False
        if online:
            groups.append(SessionGroup(next_id, ip, start, last_echo))
            next_id += 1
    return groups


def _ptr_repr(sample: ProbeSample | None) -> str:
    if sample is None:
        return ""
    if sample.outcome == "ok":
        return sample.hostname or ""
    return sample.outcome


def _differs(session_hostname: str | None, sample: ProbeSample) -> bool:
    if sample.outcome == "ok":
        return sample.hostname != session_hostname
    if sample.outcome == "nxdomain":
        return session_hostname is not None
    return False


def label_quality(
    group: SessionGroup, stream: list[ProbeSample], post_end: datetime | None = None
) -> SessionGroup:
    """Fill quality flags, PTR context, and the lingering delta in place.

    ``post_end`` bounds the post-session window (exclusive); pass the next
    session's start on the same ip, or None for the end of the log.
    NXDOMAIN answers are valid join/leave evidence, not errors.
    """
    window_lo = group.start - START_SLACK
    during_rdns = [
        s for s in stream if s.kind == KIND_RDNS and window_lo <= s.sent_at <= group.end
    ]
    post_rdns = []
    post_icmp = []
    for s in stream:
        if s.sent_at <= group.end:
            continue
        if post_end is not None and s.sent_at >= post_end:
            continue
        (post_rdns if s.kind == KIND_RDNS else post_icmp).append(s)

    ok_during = [s for s in during_rdns if s.outcome == "ok"]
    group.session_hostname = ok_during[-1].hostname if ok_during else None
    group.first_ptr = _ptr_repr(during_rdns[0] if during_rdns else None)
    group.last_ptr = _ptr_repr(post_rdns[-1] if post_rdns else None)

    clean = all(s.outcome in ("ok", "nxdomain") for s in during_rdns + post_rdns)
    group.successful = bool(during_rdns) and bool(post_rdns) and bool(post_icmp) and clean

    group.ptr_reverted = group.successful and _differs(group.session_hostname, post_rdns[-1])

    if group.ptr_reverted:
        for s in post_rdns:
            if s.outcome in ("ok", "nxdomain") and _differs(group.session_hostname, s):
                group.lingering_min = (s.sent_at - group.end).total_seconds() / 60.0
                break

    group.timing_aligned = group.ptr_reverted and _reactive_probes_on_time(
        stream, window_lo, post_end
    )
    return group


def _reactive_probes_on_time(
    stream: list[ProbeSample], lo: datetime, hi: datetime | None
) -> bool:
    """Every reactive probe fired within twice its scheduled spacing of the
    previous probe in the same back-off run."""
    reactive = sorted(
        (
            s
            for s in stream
            if s.scheduled_offset is not None
            and s.sent_at >= lo
            and (hi is None or s.sent_at < hi)
        ),
        key=lambda s: s.sent_at,
    )
    for previous, current in zip(reactive, reactive[1:]):
        if current.scheduled_offset <= previous.scheduled_offset:
            continue  # a new back-off run began
        expected = timedelta(minutes=current.scheduled_offset - previous.scheduled_offset)
        if current.sent_at - previous.sent_at > 2 * expected:
            return False
    return True


def lingering_delta(group: SessionGroup, stream: list[ProbeSample], post_end: datetime | None = None) -> float | None:
    """Minutes between the last echo reply and the first post-session lookup
    showing the record removed or changed; None when no such lookup exists."""
    for s in stream:
        if s.kind != KIND_RDNS or s.sent_at <= group.end:
            continue
        if post_end is not None and s.sent_at >= post_end:
            continue
        if s.outcome in ("ok", "nxdomain") and _differs(group.session_hostname, s):
            return (s.sent_at - group.end).total_seconds() / 60.0
    return None


def build_groups(samples: Iterable[ProbeSample]) -> list[SessionGroup]:
    """Full pipeline: merge, infer sessions, and label every group."""
    streams = merge_streams(samples)
    groups = infer_sessions(streams)
    by_ip: dict[str, list[SessionGroup]] = {}
    for group in groups:
        by_ip.setdefault(group.ip, []).append(group)
    for ip, ip_groups in by_ip.items():
        ip_groups.sort(key=lambda g: g.start)
        stream = streams[ip]
        for index, group in enumerate(ip_groups):
            post_end = ip_groups[index + 1].start if index + 1 < len(ip_groups) else None
            label_quality(group, stream, post_end)
    return groups


# -- reports ----------------------------------------------------------------


def daily_presence_series(
    days: Iterable[SnapshotDay],
    suffix: str | None = None,
    prefix: str | None = None,
) -> list[tuple[date, int, float]]:
    """Per-day record counts normalized to the window maximum."""
    from ipaddress import ip_address, ip_network

    network = ip_network(prefix) if prefix else None
    counts: dict[date, int] = {}
    for day in days:
        total = 0
        for obs in day.observations:
            if obs.outcome != "ok":
                continue
            if network is not None and ip_address(obs.ip) not in network:
                continue
            if suffix is not None and registrable_suffix(obs.hostname) != suffix:
                continue
            total += 1
        counts[day.date] = total
    if not counts:
        return []
    peak = max(counts.values())
    return [
        (day, count, count / peak if peak else 0.0)
        for day, count in sorted(counts.items())
    ]


def activity_histogram(
    groups: Iterable[SessionGroup], bucket_minutes: int = 60
) -> dict[datetime, int]:
    """Sessions overlapping each time bucket; bucket size must divide an hour."""
    if bucket_minutes <= 0 or 60 % bucket_minutes:
        raise ValueError("bucket_minutes must divide 60")
    groups = list(groups)
    if not groups:
        return {}
    step = timedelta(minutes=bucket_minutes)
    first = min(group.start for group in groups)
    last = max(group.end for group in groups)
    anchor = first.replace(minute=first.minute - first.minute % bucket_minutes, second=0, microsecond=0)
    histogram: dict[datetime, int] = {}
    bucket = anchor
    while bucket <= last:
        bucket_end = bucket + step
        histogram[bucket] = sum(
            1 for group in groups if group.start < bucket_end and group.end >= bucket
        )
        bucket += step
    return histogram


def quietest_buckets(histogram: dict[datetime, int]) -> dict[date, datetime]:
    """Per UTC day, the bucket with the fewest active sessions."""
    best: dict[date, datetime] = {}
    for bucket in sorted(histogram):
        day = bucket.astimezone(timezone.utc).date()
        if day not in best or histogram[bucket] < histogram[best[day]]:
            best[day] = bucket
    return best


def _matches_term(hostname: str | None, term: str) -> bool:
    if not hostname:
        return False
    term = term.lower()
    terms = set(extract_terms(hostname, min(3, len(term))))
    return term in terms or term + "s" in terms


def name_session_timeline(
    groups: Iterable[SessionGroup], term: str
) -> dict[str, list[tuple[datetime, datetime, str]]]:
    """Session intervals grouped by full hostname for hostnames whose terms
    include ``term`` (or its genitive form)."""
    timeline: dict[str, list[tuple[datetime, datetime, str]]] = {}
    for group in groups:
        if not _matches_term(group.session_hostname, term):
            continue
        timeline.setdefault(group.session_hostname, []).append((group.start, group.end, group.ip))
    for intervals in timeline.values():
        intervals.sort()
    return timeline


# -- CSV interfaces ----------------------------------------------------------

GROUPS_COLUMNS = (
    "group_id", "ip", "start", "end", "successful", "ptr_reverted",
    "timing_aligned", "lingering_min", "first_ptr", "last_ptr",
)


def write_groups_csv(path: str | Path, groups: Iterable[SessionGroup]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(GROUPS_COLUMNS)
        for g in groups:
            writer.writerow(
                [
                    g.group_id,
                    g.ip,
                    format_ts(g.start),
                    format_ts(g.end),
                    str(g.successful).lower(),
                    str(g.ptr_reverted).lower(),
                    str(g.timing_aligned).lower(),
                    "" if g.lingering_min is None else f"{g.lingering_min:.3f}",
                    g.first_ptr,
                    g.last_ptr,
                ]
            )


def read_groups_csv(path: str | Path) -> list[SessionGroup]:
    groups = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            first_ptr = row["first_ptr"]
            groups.append(
                SessionGroup(
                    group_id=int(row["group_id"]),
                    ip=row["ip"],
                    start=parse_ts(row["start"]),
                    end=parse_ts(row["end"]),
                    session_hostname=None if first_ptr in _NON_VALUE_OUTCOMES else first_ptr,
                    first_ptr=first_ptr,
                    last_ptr=row["last_ptr"],
                    successful=row["successful"] == "true",
                    ptr_reverted=row["ptr_reverted"] == "true",
                    timing_aligned=row["timing_aligned"] == "true",
                    lingering_min=float(row["lingering_min"]) if row["lingering_min"] else None,
                )
            )
    return groups


def write_lingering_cdf_csv(path: str | Path, deltas: Iterable[float]) -> None:
    values = sorted(deltas)
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["lingering_min", "cum_fraction"])
        for index, value in enumerate(values, start=1):
            writer.writerow([f"{value:.3f}", f"{index / len(values):.6f}"])


def write_presence_csv(path: str | Path, series: Iterable[tuple[date, int, float]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "count", "fraction_of_max"])
        for day, count, fraction in series:
            writer.writerow([day.isoformat(), count, f"{fraction:.6f}"])


def write_activity_csv(path: str | Path, histogram: dict[datetime, int]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bucket_start", "active_sessions"])
        for bucket in sorted(histogram):
            writer.writerow([format_ts(bucket), histogram[bucket]])


def write_timeline_csv(
    path: str | Path, timeline: dict[str, list[tuple[datetime, datetime, str]]]
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["hostname", "ip", "start", "end"])
        for hostname in sorted(timeline):
            for start, end, ip in timeline[hostname]:
                writer.writerow([hostname, ip, format_ts(start), format_ts(end)])
