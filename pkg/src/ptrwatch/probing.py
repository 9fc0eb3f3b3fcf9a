"""Reactive ICMP/rDNS measurement engine.

Sweeps target ranges on a fixed interval, tracks client appearances with
staged back-off pings, and chases record removal with reactive rDNS lookups
once a client goes quiet. Probe I/O is abstracted behind injected callables
so the engine runs identically against a live transport or the simulator's
virtual endpoints.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from ipaddress import ip_address, ip_network
from pathlib import Path
from typing import Callable, Iterable

from .snapshots import format_ts, parse_ts

US_PER_MINUTE = 60_000_000
US_PER_SECOND = 1_000_000
TRUNCATE_SECONDS = 300

ICMP_RTT_US = 20_000
RDNS_RTT_US = 40_000

KIND_ICMP = "icmp"
KIND_RDNS = "rdns"

ECHO_REPLY = "echo_reply"
ICMP_TIMEOUT = "icmp_timeout"

# Probe cadence after a trigger: (spacing minutes, probe count) for the first
# four hours, then hourly until the track ends.
_BACKOFF_STAGES = ((5, 12), (10, 6), (20, 3), (30, 2))
_HOURLY_SPACING = 60

TRACK_REVERTED = "reverted"
TRACK_LINGERING = "lingering_beyond_horizon"
TRACK_RESOLVER_ERRORS = "resolver_errors"
TRACK_ONLINE_BEYOND_HORIZON = "online_beyond_horizon"
TRACK_BLOCKLISTED = "blocklisted"


class TransportUnavailable(RuntimeError):
    """Probe transport cannot be used (missing privileges, no interface)."""


class ResolverFailure(Exception):
    """A lookup attempt failed; ``kind`` is ``servfail`` or ``timeout``."""

    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


def backoff_offsets(max_hours: int) -> list[int]:
    """Minute offsets after a trigger, staged per the back-off plan and
    truncated at ``max_hours``."""
    if max_hours < 1:
        raise ValueError("max_hours must be at least 1")
    offsets = []
    minute = 0
    for spacing, count in _BACKOFF_STAGES:
        for _ in range(count):
            minute += spacing
            offsets.append(minute)
    while minute + _HOURLY_SPACING <= max_hours * 60:
        minute += _HOURLY_SPACING
        offsets.append(minute)
    return [offset for offset in offsets if offset <= max_hours * 60]


def truncate_timestamp(ts: datetime) -> datetime:
    seconds = int(ts.timestamp())
    return datetime.fromtimestamp(seconds - seconds % TRUNCATE_SECONDS, tz=timezone.utc)


@dataclass(frozen=True)
class ProbeSample:
    kind: str
    ip: str
    scheduled_offset: int | None
    sent_at: datetime
    answered_at: datetime | None
    outcome: str
    hostname: str | None = None

    @property
    def truncated_ts(self) -> datetime:
        return truncate_timestamp(self.sent_at)


class RateLimiter:
    """Serialises sends so no 1-second window exceeds the configured rate."""

    def __init__(self, per_second: float):
        if per_second <= 0:
            raise ValueError("rate must be positive")
        self.spacing_us = max(1, math.ceil(US_PER_SECOND / per_second))
        self._next_free = 0

    def reserve(self, requested_us: int) -> int:
        slot = max(requested_us, self._next_free)
        self._next_free = slot + self.spacing_us
        return slot


def parse_blocklist_entries(entries: Iterable[str]) -> list:
    networks = []
    for entry in entries:
        text = str(entry).strip()
        if not text:
            continue
        networks.append(ip_network(text, strict=False))
    return networks


def load_blocklist(path: str | Path) -> list:
    entries = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    return parse_blocklist_entries(entries)


def is_blocklisted(ip: str, networks: Iterable) -> bool:
    address = ip_address(ip)
    return any(address in network for network in networks)


@dataclass(frozen=True)
class TargetSpec:
    network_label: str
    cidr_ranges: tuple[str, ...]
    blocklist: tuple[str, ...] = ()
    icmp_rate_limit: float = 256.0
    rdns_rate_limit: float = 64.0
    max_hours: int = 12
    sweep_interval_minutes: int = 60

    def addresses(self) -> list[str]:
        seen = set()
        for cidr in self.cidr_ranges:
            for host in ip_network(cidr).hosts():
                seen.add(str(host))
        return sorted(seen, key=lambda ip: tuple(int(part) for part in ip.split(".")))


def rdns_lookup(
    ip: str,
    minute: int,
    resolver: Callable[[str, int], str | None],
    retries: int = 2,
) -> tuple[str, str | None]:
    """Query the authoritative endpoint once, classifying the outcome.

    Timeouts are retried up to ``retries`` times and then recorded as data,
    not raised.
    """
    attempts = 0
    while True:
        try:
            value = resolver(ip, minute)
        except ResolverFailure as failure:
            if failure.kind == "timeout" and attempts < retries:
                attempts += 1
                continue
            return (failure.kind, None)
        if value is None:
            return ("nxdomain", None)
        return ("ok", value)


class WallClockPacer:
    """Delays each send until its scheduled wall-clock slot (live mode).

    Simulated runs pass no pacer and advance through virtual time instantly.
    """

    def __init__(self, start_time: datetime):
        self.start_time = start_time.astimezone(timezone.utc)

    def __call__(self, at_us: int) -> None:
        import time

        target = self.start_time + timedelta(microseconds=at_us)
        delay = (target - datetime.now(timezone.utc)).total_seconds()
        if delay > 0:
            time.sleep(delay)


def run_sweep(
    addresses: Iterable[str],
    prober: Callable[[str, int], bool],
    limiter: RateLimiter,
    at_us: int,
    start_time: datetime,
    blocklist_networks: Iterable,
    pacer: Callable[[int], None] | None = None,
) -> tuple[set[str], list[ProbeSample]]:
    """One echo request per non-blocklisted address; returns responders.

    Raises TransportUnavailable from the prober untouched, discarding any
    partially collected samples.
    """
    responsive: set[str] = set()
    samples: list[ProbeSample] = []
    blocklist = list(blocklist_networks)
    for ip in addresses:
        if is_blocklisted(ip, blocklist):
            continue
        sent_us = limiter.reserve(at_us)
        if pacer is not None:
            pacer(sent_us)
        online = prober(ip, sent_us // US_PER_MINUTE)
        sent_at = start_time + timedelta(microseconds=sent_us)
        answered = sent_at + timedelta(microseconds=ICMP_RTT_US) if online else None
        samples.append(
            ProbeSample(KIND_ICMP, ip, None, sent_at, answered, ECHO_REPLY if online else ICMP_TIMEOUT)
        )
        if online:
            responsive.add(ip)
    return responsive, samples


def hourly_sweep(
    target: TargetSpec,
    prober: Callable[[str, int], bool],
    at_us: int = 0,
    start_time: datetime | None = None,
    limiter: RateLimiter | None = None,
) -> tuple[set[str], list[ProbeSample]]:
    start = start_time or datetime(2021, 1, 4, tzinfo=timezone.utc)
    return run_sweep(
        target.addresses(),
        prober,
        limiter or RateLimiter(target.icmp_rate_limit),
        at_us,
        start,
        parse_blocklist_entries(target.blocklist),
    )


@dataclass
class _Track:
    ip: str
    phase: str  # "presence" | "reverting" | "confirming"
    anchor_us: int
    ping_offsets: deque = field(default_factory=deque)
    rdns_offsets: deque = field(default_factory=deque)
    servfail_streak: int = 0


@dataclass(frozen=True)
class TrackClosure:
    ip: str
    status: str
    at_us: int


class ProbeEngine:
    """Owns the measurement timeline for one target network.

    The clock is virtual: all scheduling happens in integer microseconds from
    ``start_time``, so identical inputs produce identical probe logs.
    """

    def __init__(
        self,
        target: TargetSpec,
        prober: Callable[[str, int], bool],
        resolver: Callable[[str, int], str | None],
        start_time: datetime,
        blocklist_loader: Callable[[], Iterable[str]] | None = None,
        phase1_rdns_every_probe: bool = False,
        servfail_cap: int = 5,
        rdns_retries: int = 2,
        pacer: Callable[[int], None] | None = None,
    ):
        self.target = target
        self.prober = prober
        self.resolver = resolver
        self.start_time = start_time.astimezone(timezone.utc)
        self.blocklist_loader = blocklist_loader
        self.phase1_rdns_every_probe = phase1_rdns_every_probe
        self.servfail_cap = servfail_cap
        self.rdns_retries = rdns_retries
        self.pacer = pacer

        self._blocklist = parse_blocklist_entries(target.blocklist)
        self._addresses = target.addresses()
        self._icmp_limiter = RateLimiter(target.icmp_rate_limit)
        self._rdns_limiter = RateLimiter(target.rdns_rate_limit)
        self._heap: list[tuple[int, int, str, tuple]] = []
        self._seq = 0
        self._online: set[str] = set()
        self._tracks: dict[str, _Track] = {}
        self._session_ptr: dict[str, str | None] = {}
        self.samples: list[ProbeSample] = []
        self.closures: list[TrackClosure] = []

    # -- scheduling ---------------------------------------------------------

    def _push(self, at_us: int, action: str, payload: tuple) -> None:
        heapq.heappush(self._heap, (at_us, self._seq, action, payload))
        self._seq += 1

    def _at(self, sent_us: int) -> datetime:
        return self.start_time + timedelta(microseconds=sent_us)

    def on_appearance(self, ip: str, at_us: int) -> list[tuple[int, str]]:
        """Start a presence track: immediate ping plus lookup, then staged pings.

        Re-triggering for an already-tracked address is a no-op.
        """
        if ip in self._tracks:
            return []
        self._online.add(ip)
        offsets = deque(backoff_offsets(self.target.max_hours))
        self._tracks[ip] = _Track(ip, "presence", at_us, ping_offsets=offsets)
        scheduled = [(at_us, "ping"), (at_us, "rdns")]
        self._push(at_us, "ping", (ip, 0))
        self._push(at_us, "rdns", (ip, 0, "baseline"))
        return scheduled

    def on_disappearance(self, ip: str, at_us: int) -> list[tuple[int, str]]:
        """Start reactive record-removal lookups for a client that went quiet."""
        current = self._tracks.get(ip)
        if current is not None and current.phase != "presence":
            return []
        self._tracks.pop(ip, None)
        self._online.discard(ip)
        offsets = deque(backoff_offsets(self.target.max_hours))
        self._tracks[ip] = _Track(ip, "reverting", at_us, rdns_offsets=offsets)
        self._push(at_us, "rdns", (ip, 0, "revert"))
        return [(at_us, "rdns")]

    # -- probe primitives ---------------------------------------------------

    def _probe_icmp(self, ip: str, requested_us: int, offset: int | None) -> ProbeSample:
        sent_us = self._icmp_limiter.reserve(requested_us)
        if self.pacer is not None:
            self.pacer(sent_us)
        online = self.prober(ip, sent_us // US_PER_MINUTE)
        sent_at = self._at(sent_us)
        answered = sent_at + timedelta(microseconds=ICMP_RTT_US) if online else None
        sample = ProbeSample(
            KIND_ICMP, ip, offset, sent_at, answered, ECHO_REPLY if online else ICMP_TIMEOUT
        )
        self.samples.append(sample)
        return sample

    def _probe_rdns(self, ip: str, requested_us: int, offset: int | None) -> ProbeSample:
        sent_us = self._rdns_limiter.reserve(requested_us)
        if self.pacer is not None:
            self.pacer(sent_us)
        outcome, hostname = rdns_lookup(ip, sent_us // US_PER_MINUTE, self.resolver, self.rdns_retries)
        sent_at = self._at(sent_us)
        answered = None
        if outcome in ("ok", "nxdomain", "servfail"):
            answered = sent_at + timedelta(microseconds=RDNS_RTT_US)
        sample = ProbeSample(KIND_RDNS, ip, offset, sent_at, answered, outcome, hostname)
        self.samples.append(sample)
        return sample

    # -- event handlers -----------------------------------------------------

    def _handle_sweep(self, at_us: int) -> None:
        if self.blocklist_loader is not None:
            self._blocklist = parse_blocklist_entries(self.blocklist_loader())
        responsive, samples = run_sweep(
            self._addresses, self.prober, self._icmp_limiter, at_us,
            self.start_time, self._blocklist, self.pacer,
        )
        self.samples.extend(samples)
        for ip in sorted(responsive - self._online):
            self.on_appearance(ip, at_us)
        for ip in sorted(self._online - responsive):
            if is_blocklisted(ip, self._blocklist):
                continue
            track = self._tracks.get(ip)
            if track is not None and track.phase == "presence":
                continue  # its own reactive pings will notice
            self.on_disappearance(ip, at_us)

    def _handle_ping(self, ip: str, offset: int, at_us: int) -> None:
        track = self._tracks.get(ip)
        if track is None or track.phase != "presence":
            return
        if is_blocklisted(ip, self._blocklist):
            self._close(track, TRACK_BLOCKLISTED, at_us)
            return
        sample = self._probe_icmp(ip, at_us, offset)
        if sample.outcome == ECHO_REPLY:
            if self.phase1_rdns_every_probe and offset > 0:
                self._push(at_us, "rdns", (ip, offset, "baseline"))
            if track.ping_offsets:
                next_offset = track.ping_offsets.popleft()
                self._push(track.anchor_us + next_offset * US_PER_MINUTE, "ping", (ip, next_offset))
            else:
                self._close(track, TRACK_ONLINE_BEYOND_HORIZON, at_us)
        else:
            self.on_disappearance(ip, at_us)

    def _handle_rdns(self, ip: str, offset: int, purpose: str, at_us: int) -> None:
        track = self._tracks.get(ip)
        if purpose == "baseline":
            if is_blocklisted(ip, self._blocklist):
                return
            sample = self._probe_rdns(ip, at_us, offset)
            if sample.outcome in ("ok", "nxdomain"):
                self._session_ptr[ip] = sample.hostname
            return
        if track is None or track.phase not in ("reverting", "confirming"):
            return
        if is_blocklisted(ip, self._blocklist):
            self._close(track, TRACK_BLOCKLISTED, at_us)
            return
        sample = self._probe_rdns(ip, at_us, offset)
        if purpose == "confirm":
            self._close(track, TRACK_REVERTED, at_us)
            return
        if sample.outcome == "servfail":
            track.servfail_streak += 1
            if track.servfail_streak >= self.servfail_cap:
                self._close(track, TRACK_RESOLVER_ERRORS, at_us)
                return
        elif sample.outcome != "timeout":
            track.servfail_streak = 0
        if self._ptr_changed(sample, self._session_ptr.get(ip)):
            track.phase = "confirming"
            confirm_offset = offset + 5
            self._push(track.anchor_us + confirm_offset * US_PER_MINUTE, "rdns", (ip, confirm_offset, "confirm"))
            return
        if track.rdns_offsets:
            next_offset = track.rdns_offsets.popleft()
            self._push(track.anchor_us + next_offset * US_PER_MINUTE, "rdns", (ip, next_offset, "revert"))
        else:
            self._close(track, TRACK_LINGERING, at_us)

    @staticmethod
    def _ptr_changed(sample: ProbeSample, session_ptr: str | None) -> bool:
        if sample.outcome == "ok":
            return sample.hostname != session_ptr
        if sample.outcome == "nxdomain":
            return session_ptr is not None
        return False

    def _close(self, track: _Track, status: str, at_us: int) -> None:
        self.closures.append(TrackClosure(track.ip, status, at_us))
        self._tracks.pop(track.ip, None)
        if track.phase in ("reverting", "confirming"):
            self._session_ptr.pop(track.ip, None)

    # -- main loop ----------------------------------------------------------

    def run(self, horizon_minutes: int) -> list[ProbeSample]:
        horizon_us = horizon_minutes * US_PER_MINUTE
        interval_us = self.target.sweep_interval_minutes * US_PER_MINUTE
        for tick in range(0, horizon_us + 1, interval_us):
            self._push(tick, "sweep", ())
        while self._heap:
            at_us, _, action, payload = heapq.heappop(self._heap)
            if at_us > horizon_us:
                break
            if action == "sweep":
                self._handle_sweep(at_us)
            elif action == "ping":
                self._handle_ping(payload[0], payload[1], at_us)
            elif action == "rdns":
                self._handle_rdns(payload[0], payload[1], payload[2], at_us)
        self.samples.sort(key=lambda s: (s.sent_at, s.kind, s.ip))
        return self.samples


PROBE_LOG_COLUMNS = ("kind", "ip", "scheduled_offset_min", "sent_at", "outcome", "hostname", "truncated_ts")


def write_probe_log(path: str | Path, samples: Iterable[ProbeSample]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(PROBE_LOG_COLUMNS)
        for sample in samples:
            writer.writerow(
                [
                    sample.kind,
                    sample.ip,
                    "" if sample.scheduled_offset is None else sample.scheduled_offset,
                    format_ts(sample.sent_at),
                    sample.outcome,
                    sample.hostname or "",
                    format_ts(sample.truncated_ts),
                ]
            )


def read_probe_log(path: str | Path) -> list[ProbeSample]:
    samples = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            offset = row["scheduled_offset_min"]
            samples.append(
                ProbeSample(
                    kind=row["kind"],
                    ip=row["ip"],
                    scheduled_offset=int(offset) if offset else None,
                    sent_at=parse_ts(row["sent_at"]),
                    answered_at=None,
                    outcome=row["outcome"],
                    hostname=row["hostname"] or None,
                )
            )
    return samples
