"""Deterministic discrete-event model of a DHCP-managed network with an
authoritative reverse zone.

Provides ground truth plus queryable virtual ICMP/rDNS endpoints so the
probing and analysis layers can be exercised without touching a real network.
Time advances on a 1-minute grid; a seed fully determines every trace.
"""

from __future__ import annotations

import csv
import heapq
import math
import random
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from ipaddress import ip_network
from pathlib import Path

from .leaks import default_given_names
from .snapshots import PtrObservation, write_snapshot_csv

PTR_REMOVE_ON_EXPIRY = "set_on_lease_remove_on_expiry"
PTR_REMOVE_ON_RELEASE = "set_on_lease_remove_on_release_or_expiry"
PTR_STATIC_POOL = "static_pool_names"
PTR_NONE = "none"

PTR_POLICIES = (PTR_REMOVE_ON_EXPIRY, PTR_REMOVE_ON_RELEASE, PTR_STATIC_POOL, PTR_NONE)

GENERATOR_NAME_DEVICE = "name_device"
GENERATOR_GENERIC = "generic"
GENERATOR_MIXED = "mixed"

DEVICE_TERMS = (
    "iphone", "ipad", "mbp", "air", "galaxy", "laptop",
    "desktop", "android", "macbook", "pixel", "chromebook", "thinkpad",
)

EPSILON_MINUTES = 1

MINUTES_PER_DAY = 1440


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    address_pool: tuple[str, ...] = ("10.0.0.0/24",)
    lease_minutes: int = 60
    release_probability: float = 0.0
    ptr_policy: str = PTR_REMOVE_ON_EXPIRY
    client_population: int = 20
    arrival_mean_minutes: float = 30.0
    session_median_minutes: float = 45.0
    session_sigma: float = 0.6
    session_max_minutes: float | None = None
    hostname_generator: str = GENERATOR_NAME_DEVICE
    mixed_name_fraction: float = 0.5
    zone_suffix: str = "net-a.example.com"
    weekend_arrival_factor: float = 1.0
    pool_name_count: int = 0
    start_time: datetime = datetime(2021, 1, 4, tzinfo=timezone.utc)

    def __post_init__(self) -> None:
        if self.lease_minutes <= 0:
            raise ValueError("lease_minutes must be positive")
        if not 0.0 <= self.release_probability <= 1.0:
            raise ValueError("release_probability must be in [0, 1]")
        if self.ptr_policy not in PTR_POLICIES:
            raise ValueError(f"unknown ptr_policy {self.ptr_policy!r}")
        if self.hostname_generator not in (GENERATOR_NAME_DEVICE, GENERATOR_GENERIC, GENERATOR_MIXED):
            raise ValueError(f"unknown hostname_generator {self.hostname_generator!r}")
        if self.start_time.tzinfo is None:
            object.__setattr__(self, "start_time", self.start_time.replace(tzinfo=timezone.utc))


@dataclass
class SessionTruth:
    """Ground truth for one client activity period."""

    client: int
    hostname: str
    ip: str
    join: int
    leave: int
    release_sent: bool
    ptr_added: int | None
    ptr_removed: int | None


def pool_addresses(config: SimConfig) -> list[str]:
    addresses: list[str] = []
    for cidr in config.address_pool:
        network = ip_network(cidr)
        addresses.extend(str(host) for host in network.hosts())
    return addresses


def seed_name_corpus(config: SimConfig) -> list[str]:
    """Hostname per client: `<name>s-<device>` for leaking clients, fixed-form
    pool names otherwise, both under the configured zone suffix."""
    rng = random.Random(f"{config.seed}:hostnames")
    names = sorted(default_given_names())
    rng.shuffle(names)
    used: set[str] = set()
    labels: list[str] = []
    leaky_index = 0
    for client in range(config.client_population):
        if config.hostname_generator == GENERATOR_NAME_DEVICE:
            leaking = True
        elif config.hostname_generator == GENERATOR_GENERIC:
            leaking = False
        else:
            leaking = rng.random() < config.mixed_name_fraction
        if leaking:
            name = names[leaky_index % len(names)]
            leaky_index += 1
            devices = list(DEVICE_TERMS)
            rng.shuffle(devices)
            label = None
            for device in devices:
                candidate = f"{name}s-{device}"
                if candidate not in used:
                    label = candidate
                    break
            if label is None:
                label = f"{name}s-{devices[0]}{client}"
        else:
            label = f"host{client:04d}"
        used.add(label)
        labels.append(label)
    return [f"{label}.{config.zone_suffix}" for label in labels]


def _lease_expiry(join: int, leave: int, lease: int) -> int:
    # Leases renew at their boundary while the client is still present; the
    # record survives until the first boundary at or after the client left.
    periods = max(1, math.ceil((leave - join) / lease))
    return join + periods * lease


class SimResult:
    """Completed simulation: ground truth plus virtual ICMP/rDNS endpoints."""

    def __init__(
        self,
        config: SimConfig,
        horizon_minutes: int,
        sessions: list[SessionTruth],
        hostnames: list[str],
        static_zone: dict[str, str],
    ) -> None:
        self.config = config
        self.horizon_minutes = horizon_minutes
        self.sessions = sessions
        self.hostnames = hostnames
        self.static_zone = static_zone
        self._icmp_index = self._build_index(
            (s.ip, s.join, s.leave, None) for s in sessions
        )
        self._ptr_index = self._build_index(
            (s.ip, s.ptr_added, s.ptr_removed, s.hostname)
            for s in sessions
            if s.ptr_added is not None
        )

    @staticmethod
    def _build_index(entries) -> dict[str, tuple[list[int], list[tuple[int, str | None]]]]:
        raw: dict[str, list[tuple[int, int, str | None]]] = {}
        for ip, start, end, value in entries:
            raw.setdefault(ip, []).append((start, end, value))
        index = {}
        for ip, intervals in raw.items():
            intervals.sort()
            starts = [start for start, _, _ in intervals]
            ends = [(end, value) for _, end, value in intervals]
            index[ip] = (starts, ends)
        return index

    def icmp(self, ip: str, minute: int) -> bool:
        """Virtual ICMP endpoint: does ``ip`` answer an echo at ``minute``?"""
        entry = self._icmp_index.get(ip)
        if entry is None:
            return False
        starts, ends = entry
        pos = bisect_right(starts, minute) - 1
        return pos >= 0 and minute < ends[pos][0]

    def ptr(self, ip: str, minute: int) -> str | None:
        """Virtual authoritative zone: PTR value for ``ip`` at ``minute``."""
        if self.config.ptr_policy == PTR_NONE:
            return None
        if self.config.ptr_policy == PTR_STATIC_POOL:
            return self.static_zone.get(ip)
        entry = self._ptr_index.get(ip)
        if entry is None:
            return None
        starts, ends = entry
        pos = bisect_right(starts, minute) - 1
        if pos >= 0 and minute < ends[pos][0]:
            return ends[pos][1]
        return None

    def zone_at(self, minute: int) -> list[tuple[str, str]]:
        if self.config.ptr_policy == PTR_NONE:
            return []
        if self.config.ptr_policy == PTR_STATIC_POOL:
            return sorted(self.static_zone.items(), key=lambda kv: _ip_key(kv[0]))
        records = [
            (s.ip, s.hostname)
            for s in self.sessions
            if s.ptr_added is not None and s.ptr_added <= minute < (s.ptr_removed or minute + 1)
        ]
        return sorted(records, key=lambda kv: _ip_key(kv[0]))

    def at(self, minute: int) -> datetime:
        return self.config.start_time + timedelta(minutes=minute)


def _ip_key(ip: str) -> tuple[int, ...]:
    return tuple(int(part) for part in ip.split("."))


def run_simulation(config: SimConfig, horizon_minutes: int) -> SimResult:
    """Run the client join/active/leave model for ``horizon_minutes``.

    Arrivals stop at the horizon; departures and record removals already in
    flight are carried to completion so ground truth is complete.
    """
    rng = random.Random(f"{config.seed}:events")
    hostnames = seed_name_corpus(config)
    addresses = pool_addresses(config)
    static_zone: dict[str, str] = {}
    if config.ptr_policy == PTR_STATIC_POOL:
        for index, ip in enumerate(addresses[: config.pool_name_count]):
            static_zone[ip] = f"host{index:04d}.{config.zone_suffix}"

    free: deque[str] = deque(addresses)
    idle: deque[int] = deque(range(config.client_population))
    sessions: list[SessionTruth] = []
    heap: list[tuple[int, int, str, object]] = []
    seq = 0

    def push(minute: int, kind: str, payload: object) -> None:
        nonlocal seq
        heapq.heappush(heap, (minute, seq, kind, payload))
        seq += 1

    def draw_interarrival() -> int:
        return max(1, round(rng.expovariate(1.0 / config.arrival_mean_minutes)))

    def is_weekend(minute: int) -> bool:
        weekday = (config.start_time.weekday() + minute // MINUTES_PER_DAY) % 7
        return weekday >= 5

    if config.client_population > 0 and config.arrival_mean_minutes > 0:
        push(draw_interarrival(), "arrival", None)

    removes_ptr = config.ptr_policy in (PTR_REMOVE_ON_EXPIRY, PTR_REMOVE_ON_RELEASE)

    while heap:
        minute, _, kind, payload = heapq.heappop(heap)
        if kind == "arrival":
            if minute >= horizon_minutes:
                continue
            push(minute + draw_interarrival(), "arrival", None)
            suppressed = is_weekend(minute) and rng.random() >= config.weekend_arrival_factor
            duration = rng.lognormvariate(math.log(config.session_median_minutes), config.session_sigma)
            if config.session_max_minutes is not None:
                duration = min(duration, config.session_max_minutes)
            duration_minutes = max(1, round(duration))
            if suppressed or not idle:
                continue
            if not free:
                raise SimulationError(
                    f"address pool exhausted at minute {minute} "
                    f"({len(sessions)} sessions started)"
                )
            client = idle.popleft()
            ip = free.popleft()
            session = SessionTruth(
                client=client,
                hostname=hostnames[client],
                ip=ip,
                join=minute,
                leave=minute + duration_minutes,
                release_sent=False,
                ptr_added=minute if removes_ptr else None,
                ptr_removed=None,
            )
            sessions.append(session)
            push(session.leave, "leave", session)
        elif kind == "leave":
            session = payload
            session.release_sent = rng.random() < config.release_probability
            if session.release_sent and config.ptr_policy == PTR_REMOVE_ON_RELEASE:
                freed = session.leave + EPSILON_MINUTES
            else:
                freed = _lease_expiry(session.join, session.leave, config.lease_minutes)
            if removes_ptr:
                session.ptr_removed = freed
            idle.append(session.client)
            push(freed, "free", session.ip)
        elif kind == "free":
            free.append(payload)

    sessions.sort(key=lambda s: (s.join, _ip_key(s.ip)))
    return SimResult(config, horizon_minutes, sessions, hostnames, static_zone)


def snapshot_observations(result: SimResult, minute: int) -> list[PtrObservation]:
    """Zone contents at ``minute`` in the snapshot observation shape."""
    when = result.at(minute)
    return [
        PtrObservation(timestamp=when, ip=ip, outcome="ok", hostname=hostname)
        for ip, hostname in result.zone_at(minute)
    ]


def emit_snapshots(
    result: SimResult,
    out_dir: str | Path,
    cadence: str = "daily",
    sample_minute: int = 720,
) -> list[Path]:
    """Write one snapshot CSV per cadence tick, sampling the zone state once
    per tick at ``sample_minute`` past midnight."""
    if cadence not in ("daily", "weekly"):
        raise ValueError(f"unknown cadence {cadence!r}")
    step_days = 1 if cadence == "daily" else 7
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    day = 0
    while day * MINUTES_PER_DAY + sample_minute <= result.horizon_minutes:
        minute = day * MINUTES_PER_DAY + sample_minute
        stamp = result.at(minute).date().isoformat()
        path = out_dir / f"snapshot-{stamp}.csv"
        write_snapshot_csv(path, snapshot_observations(result, minute))
        paths.append(path)
        day += step_days
    return paths


def write_ground_truth_csv(path: str | Path, result: SimResult) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["client", "hostname", "ip", "join_min", "leave_min", "release_sent", "ptr_added_min", "ptr_removed_min"]
        )
        for s in result.sessions:
            writer.writerow(
                [
                    s.client,
                    s.hostname,
                    s.ip,
                    s.join,
                    s.leave,
                    int(s.release_sent),
                    "" if s.ptr_added is None else s.ptr_added,
                    "" if s.ptr_removed is None else s.ptr_removed,
                ]
            )
