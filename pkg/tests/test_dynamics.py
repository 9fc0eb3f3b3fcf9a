import random
from datetime import date, timedelta

import pytest

from ptrwatch.dynamics import (
    DynamicityParams,
    PrefixDailySeries,
    build_daily_series,
    change_percentages,
    classify_all,
    classify_prefix,
    dynamic_fraction_per_covering_prefix,
    load_prefix_table,
    read_verdicts_csv,
    write_verdicts_csv,
)
from ptrwatch.simulator import SimConfig, run_simulation, snapshot_observations
from ptrwatch.snapshots import PtrObservation, SnapshotDay, group_by_day, parse_ts

DAY0 = date(2021, 3, 1)


def _series(counts: list[int], start: date = DAY0) -> PrefixDailySeries:
    by_day = {start + timedelta(days=i): c for i, c in enumerate(counts) if c}
    return PrefixDailySeries(
        "10.0.0.0/24", by_day, start, start + timedelta(days=len(counts) - 1), max(counts)
    )


def _days_from_counts(prefix_counts: dict[str, list[int]], start: date = DAY0) -> list[SnapshotDay]:
    n_days = max(len(v) for v in prefix_counts.values())
    days = []
    for i in range(n_days):
        ts = parse_ts(f"{start + timedelta(days=i)}T12:00:00Z")
        observations = []
        for prefix, counts in prefix_counts.items():
            base = prefix.rsplit(".", 1)[0]
            for host in range(counts[i] if i < len(counts) else 0):
                observations.append(
                    PtrObservation(ts, f"{base}.{host + 1}", "ok", f"h{host}.example.com")
                )
        days.append(SnapshotDay(start + timedelta(days=i), observations))
    return days


def test_quiet_prefix_discarded():
    days = _days_from_counts({"10.0.0.0/24": [8] * 90})
    assert build_daily_series(days, DynamicityParams()) == []


def test_boundary_above_min_daily_retained():
    days = _days_from_counts({"10.0.0.0/24": [11] + [0] * 10})
    (series,) = build_daily_series(days, DynamicityParams())
    assert series.max_daily == 11


def test_boundary_at_min_daily_discarded():
    days = _days_from_counts({"10.0.0.0/24": [10] * 30})
    assert build_daily_series(days, DynamicityParams()) == []


def test_series_counts_match_simulator_zone():
    config = SimConfig(
        seed=11,
        address_pool=("10.44.0.0/24",),
        client_population=60,
        arrival_mean_minutes=10.0,
        session_median_minutes=300.0,
        session_sigma=0.4,
        zone_suffix="sim.example.org",
    )
    sim = run_simulation(config, 10 * 1440)
    observations = []
    truth = {}
    for day in range(10):
        minute = day * 1440 + 720
        zone = sim.zone_at(minute)
        truth[config.start_time.date() + timedelta(days=day)] = len(zone)
        observations.extend(snapshot_observations(sim, minute))
    days = group_by_day(observations)
    (series,) = build_daily_series(days, DynamicityParams(min_daily_addresses=1))
    for day, count in truth.items():
        assert series.counts.get(day, 0) == count


def test_change_percentages_constant_series():
    assert change_percentages(_series([20, 20, 20])) == [0.0, 0.0]


def test_change_percentages_direct_arithmetic():
    assert change_percentages(_series([20, 15])) == [25.0]


def test_change_percentages_full_turnover():
    assert change_percentages(_series([0, 10, 0])) == [100.0, 100.0]


def test_change_percentages_missing_days_count_as_zero():
    series = PrefixDailySeries(
        "10.0.0.0/24",
        {DAY0: 20, DAY0 + timedelta(days=2): 20},
        DAY0,
        DAY0 + timedelta(days=2),
        20,
    )
    assert change_percentages(series) == [100.0, 100.0]


def test_classify_alternating_series_dynamic():
    counts = [20 if i % 2 == 0 else 15 for i in range(90)]
    verdict = classify_prefix(_series(counts), DynamicityParams())
    assert verdict.qualifying_days == 89
    assert verdict.label == "dynamic"


def test_classify_constant_static():
    verdict = classify_prefix(_series([30] * 90), DynamicityParams())
    assert verdict.label == "static"
    assert verdict.qualifying_days == 0


def test_exceeds_threshold_is_strict():
    # a change of exactly 10% of the maximum must not qualify
    counts = [20, 18] * 10
    verdict = classify_prefix(_series(counts), DynamicityParams(change_pct_threshold=10.0))
    assert verdict.qualifying_days == 0


def test_monotonicity_in_thresholds():
    rng = random.Random(99)
    for _ in range(100):
        counts = [rng.randrange(0, 60) for _ in range(rng.randrange(10, 40))]
        if max(counts) == 0:
            counts[0] = 12
        series = _series(counts)
        base = DynamicityParams(change_pct_threshold=10.0, min_qualifying_days=5)
        stricter_x = DynamicityParams(change_pct_threshold=25.0, min_qualifying_days=5)
        stricter_y = DynamicityParams(change_pct_threshold=10.0, min_qualifying_days=9)
        if classify_prefix(series, base).label == "static":
            assert classify_prefix(series, stricter_x).label == "static"
            assert classify_prefix(series, stricter_y).label == "static"


def test_scale_freeness():
    rng = random.Random(7)
    for _ in range(50):
        counts = [rng.randrange(0, 80) for _ in range(20)]
        if max(counts) == 0:
            counts[0] = 15
        k = rng.choice([2, 3])
        scaled = [min(256, c * k) for c in counts]
        if any(c * k > 256 for c in counts):
            continue
        base = classify_prefix(_series(counts), DynamicityParams(min_daily_addresses=1))
        grown = classify_prefix(_series(scaled), DynamicityParams(min_daily_addresses=1))
        assert base.qualifying_days == grown.qualifying_days


def test_verdicts_order_independent():
    prefix_counts = {
        "10.0.0.0/24": [30, 12, 31, 12, 33, 11, 30, 14, 30, 12],
        "10.0.1.0/24": [40] * 10,
    }
    days = _days_from_counts(prefix_counts)
    params = DynamicityParams(min_qualifying_days=4)
    forward = classify_all(days, params)
    backward = classify_all(list(reversed(days)), params)
    assert [(v.prefix, v.label, v.qualifying_days) for v in forward] == [
        (v.prefix, v.label, v.qualifying_days) for v in backward
    ]


def _verdict(prefix, dynamic):
    from ptrwatch.dynamics import DynamicityVerdict

    return DynamicityVerdict(prefix, "dynamic" if dynamic else "static", 9 if dynamic else 0, [], 20)


def test_fraction_direct_ratio():
    verdicts = [
        _verdict("10.0.0.0/24", True),
        _verdict("10.0.1.0/24", False),
        _verdict("10.0.2.0/24", False),
        _verdict("10.0.3.0/24", False),
    ]
    stats = dynamic_fraction_per_covering_prefix(verdicts, ["10.0.0.0/16"])
    assert stats["10.0.0.0/16"].fraction == 0.25


def test_fraction_most_specific_covering_entry():
    verdicts = [_verdict("10.1.2.0/24", True)]
    stats = dynamic_fraction_per_covering_prefix(verdicts, ["10.0.0.0/8", "10.1.0.0/16"])
    assert "10.1.0.0/16" in stats
    assert "10.0.0.0/8" not in stats


def test_fraction_unannounced_bucket():
    verdicts = [_verdict("192.168.9.0/24", True)]
    stats = dynamic_fraction_per_covering_prefix(verdicts, ["10.0.0.0/8"])
    assert stats["unannounced"].dynamic == 1


def test_fraction_matches_brute_force():
    import ipaddress

    rng = random.Random(5)
    table = []
    for _ in range(12):
        a, b = rng.randrange(256), rng.randrange(256)
        length = rng.choice([8, 12, 16, 20, 24])
        table.append(str(ipaddress.ip_network(f"{a}.{b}.0.0/{length}", strict=False)))
    table = sorted(set(table))
    verdicts = [
        _verdict(f"{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(256)}.0/24", rng.random() < 0.4)
        for _ in range(200)
    ]
    stats = dynamic_fraction_per_covering_prefix(verdicts, table)

    networks = [ipaddress.ip_network(t) for t in table]
    expected: dict[str, list[int]] = {}
    for verdict in verdicts:
        address = ipaddress.ip_network(verdict.prefix).network_address
        best = None
        for network in networks:
            if address in network and (best is None or network.prefixlen > best.prefixlen):
                best = network
        key = str(best) if best else "unannounced"
        totals = expected.setdefault(key, [0, 0])
        totals[0] += 1
        totals[1] += verdict.is_dynamic
    assert {k: (s.total, s.dynamic) for k, s in stats.items()} == {
        k: tuple(v) for k, v in expected.items()
    }
    # conservation: bucket dynamic counts sum to the overall dynamic count
    assert sum(s.dynamic for s in stats.values()) == sum(v.is_dynamic for v in verdicts)


def test_prefix_table_rejects_malformed():
    with pytest.raises(ValueError):
        dynamic_fraction_per_covering_prefix([], ["not-a-cidr"])
    with pytest.raises(ValueError):
        dynamic_fraction_per_covering_prefix([], ["10.0.0.0/30"])


def test_load_prefix_table(tmp_path):
    path = tmp_path / "table.txt"
    path.write_text("# announced\n10.0.0.0/16\n192.168.0.0/24  # lab\n\n", encoding="utf-8")
    assert [str(n) for n in load_prefix_table(path)] == ["10.0.0.0/16", "192.168.0.0/24"]


def test_verdict_csv_roundtrip(tmp_path):
    verdicts = [_verdict("10.0.0.0/24", True), _verdict("10.0.1.0/24", False)]
    path = tmp_path / "verdicts.csv"
    write_verdicts_csv(path, verdicts)
    loaded = read_verdicts_csv(path)
    assert [(v.prefix, v.label, v.qualifying_days, v.max_daily) for v in loaded] == [
        (v.prefix, v.label, v.qualifying_days, v.max_daily) for v in verdicts
    ]


def test_params_validation():
    with pytest.raises(ValueError):
        DynamicityParams(change_pct_threshold=0.0)
    with pytest.raises(ValueError):
        DynamicityParams(min_qualifying_days=0)
