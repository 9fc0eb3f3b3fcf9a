"""Day-over-day /24 PTR population churn detection and per-prefix summaries."""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

from .snapshots import SnapshotDay

LABEL_DYNAMIC = "dynamic"
LABEL_STATIC = "static"

UNANNOUNCED = "unannounced"


@dataclass(frozen=True)
class DynamicityParams:
    window_days: int = 90
    min_daily_addresses: int = 10
    change_pct_threshold: float = 10.0
    min_qualifying_days: int = 7

    def __post_init__(self) -> None:
        if self.window_days <= 0 or self.min_daily_addresses <= 0 or self.min_qualifying_days <= 0:
            raise ValueError("all thresholds must be strictly positive")
        if not 0.0 < self.change_pct_threshold <= 100.0:
            raise ValueError("change_pct_threshold must be in (0, 100]")


@dataclass
class PrefixDailySeries:
    """Per-/24 unique-address counts over the analysis window.

    Days absent from ``counts`` carry an implicit count of zero.
    """

    prefix: str
    counts: dict[date, int]
    window_start: date
    window_end: date
    max_daily: int


@dataclass
class DynamicityVerdict:
    prefix: str
    label: str
    qualifying_days: int
    change_pcts: list[float] = field(repr=False)
    max_daily: int = 0

    @property
    def is_dynamic(self) -> bool:
        return self.label == LABEL_DYNAMIC


def prefix_of(ip: str) -> str:
    octets = ip.split(".")
    return f"{octets[0]}.{octets[1]}.{octets[2]}.0/24"


def build_daily_series(
    days: Iterable[SnapshotDay], params: DynamicityParams
) -> list[PrefixDailySeries]:
    """Group observed PTR addresses by /24 and day, dropping quiet prefixes.

    Prefixes whose daily maximum never exceeds ``min_daily_addresses`` are
    discarded. Multiple SnapshotDay inputs for the same date are merged.
    """
    per_day_ips: dict[str, dict[date, set[str]]] = {}
    dates: set[date] = set()
    for day in days:
        dates.add(day.date)
        for obs in day.observations:
            if obs.outcome != "ok":
                continue
            per_day_ips.setdefault(prefix_of(obs.ip), {}).setdefault(day.date, set()).add(obs.ip)
    if not per_day_ips:
        return []
    window_start, window_end = min(dates), max(dates)
    series = []
    for prefix in sorted(per_day_ips, key=lambda p: tuple(map(int, p[:-3].split(".")))):
        counts = {d: len(ips) for d, ips in sorted(per_day_ips[prefix].items())}
        max_daily = max(counts.values())
        if max_daily <= params.min_daily_addresses:
            continue
        series.append(PrefixDailySeries(prefix, counts, window_start, window_end, max_daily))
    return series


def change_percentages(series: PrefixDailySeries) -> list[float]:
    """Absolute day-over-day count change as a percentage of the window maximum.

    One value per consecutive calendar-day pair across the whole window;
    missing days count as zero addresses.
    """
    if series.max_daily <= 0:
        raise ValueError("series must have at least one observed address")
    pcts = []
    day = series.window_start
    while day < series.window_end:
        before = series.counts.get(day, 0)
        after = series.counts.get(day + timedelta(days=1), 0)
        pcts.append(abs(after - before) / series.max_daily * 100.0)
        day += timedelta(days=1)
    return pcts


def classify_prefix(series: PrefixDailySeries, params: DynamicityParams) -> DynamicityVerdict:
    pcts = change_percentages(series)
    qualifying = sum(1 for pct in pcts if pct > params.change_pct_threshold)
    label = LABEL_DYNAMIC if qualifying >= params.min_qualifying_days else LABEL_STATIC
    return DynamicityVerdict(series.prefix, label, qualifying, pcts, series.max_daily)


def classify_all(days: Iterable[SnapshotDay], params: DynamicityParams) -> list[DynamicityVerdict]:
    return [classify_prefix(series, params) for series in build_daily_series(days, params)]


@dataclass
class CoveringPrefixStats:
    prefix: str
    total: int = 0
    dynamic: int = 0

    @property
    def fraction(self) -> float:
        return self.dynamic / self.total if self.total else 0.0


def load_prefix_table(path: str | Path) -> list[ipaddress.IPv4Network]:
    networks = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        networks.append(_parse_table_entry(line))
    return networks


def _parse_table_entry(entry: str | ipaddress.IPv4Network) -> ipaddress.IPv4Network:
    if isinstance(entry, ipaddress.IPv4Network):
        network = entry
    else:
        try:
            network = ipaddress.ip_network(entry, strict=False)
        except ValueError as exc:
            raise ValueError(f"malformed CIDR in prefix table: {entry!r}") from exc
        if network.version != 4:
            raise ValueError(f"prefix table entries must be IPv4: {entry!r}")
    if network.prefixlen > 24:
        raise ValueError(f"prefix table entries must be /24 or shorter: {entry}")
    return network


def dynamic_fraction_per_covering_prefix(
    verdicts: Iterable[DynamicityVerdict],
    prefix_table: Iterable[str | ipaddress.IPv4Network],
) -> dict[str, CoveringPrefixStats]:
    """Attribute each observed /24 to its most-specific covering announced prefix.

    /24s with no covering table entry land in the ``unannounced`` bucket.
    """
    table = [_parse_table_entry(entry) for entry in prefix_table]
    stats: dict[str, CoveringPrefixStats] = {}
    for verdict in verdicts:
        network = ipaddress.ip_network(verdict.prefix)
        best: ipaddress.IPv4Network | None = None
        for candidate in table:
            if network.network_address in candidate:
                if best is None or candidate.prefixlen > best.prefixlen:
                    best = candidate
        key = str(best) if best is not None else UNANNOUNCED
        bucket = stats.setdefault(key, CoveringPrefixStats(key))
        bucket.total += 1
        if verdict.is_dynamic:
            bucket.dynamic += 1
    return stats


def write_verdicts_csv(path: str | Path, verdicts: Iterable[DynamicityVerdict]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["prefix", "label", "qualifying_days", "max_daily"])
        for verdict in verdicts:
            writer.writerow([verdict.prefix, verdict.label, verdict.qualifying_days, verdict.max_daily])


def read_verdicts_csv(path: str | Path) -> list[DynamicityVerdict]:
    verdicts = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            verdicts.append(
                DynamicityVerdict(
                    prefix=row["prefix"],
                    label=row["label"],
                    qualifying_days=int(row["qualifying_days"]),
                    change_pcts=[],
                    max_daily=int(row["max_daily"]),
                )
            )
    return verdicts


def write_fractions_csv(path: str | Path, stats: dict[str, CoveringPrefixStats]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["prefix", "observed_24s", "dynamic_24s", "fraction"])
        for key in sorted(stats):
            bucket = stats[key]
            writer.writerow([bucket.prefix, bucket.total, bucket.dynamic, f"{bucket.fraction:.6f}"])
