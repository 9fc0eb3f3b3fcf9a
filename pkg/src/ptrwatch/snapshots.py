"""Bulk rDNS snapshot parsing and IPv4 <-> reverse-zone name conversion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

OUTCOMES = ("ok", "nxdomain", "servfail", "timeout")

REVERSE_ZONE = "in-addr.arpa"

CSV_COLUMNS = ("timestamp", "ip", "outcome", "hostname")


class SnapshotFormatError(ValueError):
    """Raised when a snapshot file does not look like the selected format."""


def normalize_hostname(hostname: str) -> str:
    return hostname.strip().rstrip(".").lower()


def parse_ipv4(ip: str) -> str:
    parts = ip.strip().split(".")
    if len(parts) != 4:
        raise ValueError(f"not a dotted-quad IPv4 address: {ip!r}")
    octets = []
    for part in parts:
        if not part.isdigit():
            raise ValueError(f"non-numeric octet in {ip!r}")
        value = int(part)
        if value > 255:
            raise ValueError(f"octet out of range in {ip!r}")
        octets.append(value)
    return ".".join(str(o) for o in octets)


def ip_to_reverse_name(ip: str) -> str:
    octets = parse_ipv4(ip).split(".")
    return ".".join(reversed(octets)) + f".{REVERSE_ZONE}."


def reverse_name_to_ip(name: str) -> str:
    stripped = name.strip().rstrip(".").lower()
    suffix = f".{REVERSE_ZONE}"
    if not stripped.endswith(suffix):
        raise ValueError(f"not an IPv4 reverse-zone name: {name!r}")
    labels = stripped[: -len(suffix)].split(".")
    if len(labels) != 4:
        raise ValueError(f"expected four leading labels in {name!r}")
    return parse_ipv4(".".join(reversed(labels)))


def format_ts(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_ts(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class PtrObservation:
    """One timestamped PTR lookup result for one IPv4 address."""

    timestamp: datetime
    ip: str
    outcome: str
    hostname: str | None = None

    def __post_init__(self) -> None:
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome == "ok":
            if not self.hostname:
                raise ValueError("ok outcome requires a hostname")
        elif self.hostname:
            raise ValueError(f"{self.outcome} outcome must not carry a hostname")

    @property
    def day(self) -> date:
        return self.timestamp.astimezone(timezone.utc).date()


@dataclass
class SnapshotDay:
    """All deduplicated observations for one UTC calendar day."""

    date: date
    observations: list[PtrObservation]


def _dedupe_key(obs: PtrObservation) -> tuple:
    # Values sort before errors; ties between values break on the
    # lexicographically smallest hostname.
    if obs.outcome == "ok":
        return (0, obs.hostname)
    return (1, obs.outcome)


def dedupe_day(observations: list[PtrObservation]) -> list[PtrObservation]:
    best: dict[str, PtrObservation] = {}
    for obs in observations:
        current = best.get(obs.ip)
        if current is None or _dedupe_key(obs) < _dedupe_key(current):
            best[obs.ip] = obs
    return [best[ip] for ip in sorted(best, key=lambda s: tuple(map(int, s.split("."))))]


def group_by_day(observations: list[PtrObservation]) -> list[SnapshotDay]:
    by_day: dict[date, list[PtrObservation]] = {}
    for obs in observations:
        by_day.setdefault(obs.day, []).append(obs)
    return [SnapshotDay(day, dedupe_day(rows)) for day, rows in sorted(by_day.items())]


def _observation_from_fields(raw_ts: str, raw_ip: str, raw_outcome: str, raw_hostname: str) -> PtrObservation:
    outcome = raw_outcome.strip().lower()
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {raw_outcome!r}")
    hostname = normalize_hostname(raw_hostname or "")
    return PtrObservation(
        timestamp=parse_ts(raw_ts),
        ip=parse_ipv4(raw_ip),
        outcome=outcome,
        hostname=hostname if outcome == "ok" else None,
    )


@dataclass
class SnapshotParseResult:
    """Parsed snapshot days plus row-level bookkeeping."""

    days: list[SnapshotDay]
    total_rows: int
    malformed_rows: int

    def __iter__(self):
        return iter(self.days)


def parse_snapshot_file(path: str | Path, fmt: str = "csv") -> SnapshotParseResult:
    """Parse a snapshot file into per-day observation sets.

    Malformed rows are counted and skipped; more than 50% malformed rows
    raises SnapshotFormatError since that signals a wrong format choice.
    """
    if fmt not in ("csv", "ndjson"):
        raise ValueError(f"unknown snapshot format {fmt!r}")
    observations: list[PtrObservation] = []
    total = 0
    malformed = 0
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        if fmt == "csv":
            reader = csv.DictReader(handle)
            for row in reader:
                total += 1
                try:
                    observations.append(
                        _observation_from_fields(
                            row.get("timestamp") or "",
                            row.get("ip") or "",
                            row.get("outcome") or "",
                            row.get("hostname") or "",
                        )
                    )
                except (ValueError, KeyError):
                    malformed += 1
        else:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                total += 1
                try:
                    row = json.loads(line)
                    observations.append(
                        _observation_from_fields(
                            str(row.get("timestamp") or ""),
                            str(row.get("ip") or ""),
                            str(row.get("outcome") or ""),
                            str(row.get("hostname") or ""),
                        )
                    )
                except (ValueError, KeyError, TypeError, AttributeError):
                    malformed += 1
    if total and malformed * 2 > total:
        raise SnapshotFormatError(
            f"{path}: {malformed}/{total} rows malformed; wrong format selected?"
        )
    return SnapshotParseResult(group_by_day(observations), total, malformed)


def write_snapshot_csv(path: str | Path, observations: list[PtrObservation]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for obs in observations:
            writer.writerow([format_ts(obs.timestamp), obs.ip, obs.outcome, obs.hostname or ""])


def observation_to_json(obs: PtrObservation) -> str:
    return json.dumps(
        {
            "timestamp": format_ts(obs.timestamp),
            "ip": obs.ip,
            "outcome": obs.outcome,
            "hostname": obs.hostname or "",
        },
        sort_keys=True,
    )
