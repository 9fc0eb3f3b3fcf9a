"""Operator command line: ingest -> detect -> analyze -> probe/simulate -> group -> report."""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dynamics import (
    DynamicityParams,
    classify_all,
    dynamic_fraction_per_covering_prefix,
    load_prefix_table,
    prefix_of,
    read_verdicts_csv,
    write_fractions_csv,
    write_verdicts_csv,
)
from .leaks import (
    LeakParams,
    cooccurring_terms,
    filter_generic,
    given_name_counts,
    load_type_overrides,
    load_wordlist,
    registrable_suffix,
    select_leaking_suffixes,
    suffix_stats,
    write_stats_csv,
)
from .probing import (
    ProbeEngine,
    TargetSpec,
    TransportUnavailable,
    load_blocklist,
    read_probe_log,
    write_probe_log,
)
from .sessions import (
    GroupBreakdown,
    activity_histogram,
    build_groups,
    daily_presence_series,
    name_session_timeline,
    quietest_buckets,
    read_groups_csv,
    write_activity_csv,
    write_groups_csv,
    write_lingering_cdf_csv,
    write_presence_csv,
    write_timeline_csv,
)
from .simulator import (
    SimConfig,
    SimulationError,
    emit_snapshots,
    run_simulation,
    write_ground_truth_csv,
)
from .snapshots import (
    SnapshotDay,
    SnapshotFormatError,
    dedupe_day,
    observation_to_json,
    parse_snapshot_file,
)

MANIFEST_NAME = "run_manifest.ndjson"

ALIGNMENT_RULE = "reactive probes within 2x scheduled spacing"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _append_manifest(out_dir: Path, command: str, config: dict, inputs: list, outputs: list, started: datetime) -> None:
    entry = {
        "run_id": f"{started:%Y%m%dT%H%M%S}-{uuid.uuid4().hex[:8]}",
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "started": started.isoformat(),
        "finished": _utcnow().isoformat(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / MANIFEST_NAME).open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(entry, sort_keys=True) + "\n")


def _load_cli_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    return parser


def _setting(args, name: str, section: str, cast, fallback):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    config = getattr(args, "_config", None)
    if config is not None and config.has_option(section, name):
        return cast(config.get(section, name))
    return fallback


# -- config file adapters -----------------------------------------------------


def load_sim_config(path: str | Path, seed_override: int | None = None) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as handle:
        parser.read_file(handle)
    section = parser["simulation"]
    kwargs: dict = {}
    for key in ("seed", "lease_minutes", "client_population", "pool_name_count"):
        if key in section:
            kwargs[key] = section.getint(key)
    for key in (
        "release_probability",
        "arrival_mean_minutes",
        "session_median_minutes",
        "session_sigma",
        "session_max_minutes",
        "mixed_name_fraction",
        "weekend_arrival_factor",
    ):
        if key in section:
            kwargs[key] = section.getfloat(key)
    for key in ("ptr_policy", "hostname_generator", "zone_suffix"):
        if key in section:
            kwargs[key] = section.get(key)
    if "address_pool" in section:
        kwargs["address_pool"] = tuple(
            token.strip() for token in section.get("address_pool").split(",") if token.strip()
        )
    if "start_time" in section:
        from .snapshots import parse_ts

        kwargs["start_time"] = parse_ts(section.get("start_time"))
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return SimConfig(**kwargs)


def load_target_spec(path: str | Path) -> tuple[TargetSpec, Path | None]:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as handle:
        parser.read_file(handle)
    section = parser["target"]
    ranges = tuple(token.strip() for token in section.get("ranges", "").split(",") if token.strip())
    if not ranges:
        raise ValueError(f"{path}: target config must list at least one range")
    blocklist_path = section.get("blocklist", "").strip() or None
    blocklist_file = None
    entries: tuple[str, ...] = ()
    if blocklist_path:
        blocklist_file = (Path(path).parent / blocklist_path).resolve()
        if blocklist_file.exists():
            entries = tuple(str(network) for network in load_blocklist(blocklist_file))
    spec = TargetSpec(
        network_label=section.get("label", Path(path).stem),
        cidr_ranges=ranges,
        blocklist=entries,
        icmp_rate_limit=section.getfloat("icmp_rate", 256.0),
        rdns_rate_limit=section.getfloat("rdns_rate", 64.0),
        max_hours=section.getint("max_hours", 12),
        sweep_interval_minutes=section.getint("sweep_interval_minutes", 60),
    )
    return spec, blocklist_file


# -- store helpers ------------------------------------------------------------


def read_store(store_dir: str | Path) -> list[SnapshotDay]:
    partitions = sorted(Path(store_dir).glob("date=*.ndjson"))
    merged: dict = {}
    for partition in partitions:
        for day in parse_snapshot_file(partition, "ndjson").days:
            merged.setdefault(day.date, []).extend(day.observations)
    return [SnapshotDay(day, dedupe_day(observations)) for day, observations in sorted(merged.items())]


# -- subcommands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    merged: dict = {}
    total = malformed = 0
    for path in args.paths:
        result = parse_snapshot_file(path, args.format)
        total += result.total_rows
        malformed += result.malformed_rows
        for day in result.days:
            merged.setdefault(day.date, []).extend(day.observations)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for day, observations in sorted(merged.items()):
        rows = dedupe_day(observations)
        partition = out_dir / f"date={day.isoformat()}.ndjson"
        tmp = out_dir / (partition.name + ".tmp")
        with tmp.open("w", encoding="utf-8") as handle:
            for obs in rows:
                handle.write(observation_to_json(obs) + "\n")
        os.replace(tmp, partition)
        outputs.append(partition)
    print(f"ingest: {total} rows, {malformed} malformed, {len(outputs)} day partitions")
    _append_manifest(
        out_dir,
        "ingest",
        {"format": args.format, "malformed_rows": malformed, "total_rows": total},
        args.paths,
        outputs,
        started,
    )
    return 0


def cmd_detect(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    days = read_store(args.store)
    if not days:
        print("detect: store is empty", file=sys.stderr)
        return 2
    params = DynamicityParams(
        window_days=_setting(args, "window-days", "detect", int, 90),
        min_daily_addresses=_setting(args, "min-daily", "detect", int, 10),
        change_pct_threshold=_setting(args, "x-pct", "detect", float, 10.0),
        min_qualifying_days=_setting(args, "y-days", "detect", int, 7),
    )
    if len(days) < params.window_days:
        print(
            f"detect: warning: store covers {len(days)} days, fewer than the "
            f"{params.window_days}-day window",
            file=sys.stderr,
        )
    verdicts = classify_all(days, params)
    out_dir.mkdir(parents=True, exist_ok=True)
    verdict_path = out_dir / "verdicts.csv"
    write_verdicts_csv(verdict_path, verdicts)
    outputs = [verdict_path]
    dynamic = sum(1 for v in verdicts if v.is_dynamic)
    print(f"detect: dynamic={dynamic} static={len(verdicts) - dynamic}")
    if args.prefix_table:
        table = load_prefix_table(args.prefix_table)
        fractions = dynamic_fraction_per_covering_prefix(verdicts, table)
        fraction_path = out_dir / "dynamic_fractions.csv"
        write_fractions_csv(fraction_path, fractions)
        outputs.append(fraction_path)
    _append_manifest(
        out_dir,
        "detect",
        {
            "window_days": params.window_days,
            "min_daily_addresses": params.min_daily_addresses,
            "change_pct_threshold": params.change_pct_threshold,
            "min_qualifying_days": params.min_qualifying_days,
        },
        [args.store],
        outputs,
        started,
    )
    return 0


def cmd_analyze(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    params = LeakParams.default(
        **{
            key: value
            for key, value in {
                "given_names": frozenset(load_wordlist(args.names_file)) if args.names_file else None,
                "generic_terms": frozenset(load_wordlist(args.generic_terms_file))
                if args.generic_terms_file
                else None,
            }.items()
            if value is not None
        },
        min_unique_names=_setting(args, "min-names", "analyze", int, 50),
        min_ratio=_setting(args, "min-ratio", "analyze", float, 0.1),
    )
    overrides = load_type_overrides(args.type_overrides) if args.type_overrides else None
    verdicts = read_verdicts_csv(args.verdicts) if Path(args.verdicts).exists() else []
    dynamic_prefixes = {v.prefix for v in verdicts if v.is_dynamic}
    days = read_store(args.store)

    all_records = []
    record_stream = []
    for day in days:
        for obs in day.observations:
            if obs.outcome != "ok":
                continue
            all_records.append(obs.hostname)
            if prefix_of(obs.ip) in dynamic_prefixes:
                record_stream.append(obs.hostname)
    # Selection statistics run on distinct records so churn in address
    # bindings does not inflate per-suffix record counts.
    unique_hostnames = sorted(set(record_stream))
    kept = filter_generic(unique_hostnames, params)
    stats = suffix_stats(kept, params)
    selected = select_leaking_suffixes(stats, params)
    terms = cooccurring_terms(filter_generic(record_stream, params), params, args.term_floor)
    total_names = given_name_counts(all_records, params)
    selected_suffixes = {entry.suffix for entry in selected}
    selected_names = given_name_counts(
        [h for h in record_stream if registrable_suffix(h) in selected_suffixes], params
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = out_dir / "suffix_stats.csv"
    selected_path = out_dir / "selected_networks.csv"
    terms_path = out_dir / "cooccurring_terms.csv"
    names_path = out_dir / "name_match_counts.csv"
    write_stats_csv(stats_path, stats, params, overrides)
    write_stats_csv(selected_path, selected, params, overrides)
    with terms_path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("term,count\n")
        for term, count in sorted(terms.items(), key=lambda kv: (-kv[1], kv[0])):
            handle.write(f"{term},{count}\n")
    with names_path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("name,total_matches,selected_network_matches\n")
        for name in sorted(total_names):
            handle.write(f"{name},{total_names[name]},{selected_names[name]}\n")
    print(f"analyze: selected={len(selected)} of {len(stats)} suffixes")
    _append_manifest(
        out_dir,
        "analyze",
        {
            "min_unique_names": params.min_unique_names,
            "min_ratio": params.min_ratio,
            "term_floor": args.term_floor,
        },
        [args.store, args.verdicts],
        [stats_path, selected_path, terms_path, names_path],
        started,
    )
    return 0


def cmd_probe(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    target, blocklist_file = load_target_spec(args.target)

    if args.live:
        if not args.i_have_authorization:
            print(
                "probe: refusing to run live measurements without --i-have-authorization; "
                "live probing requires documented permission from the network owner",
                file=sys.stderr,
            )
            return 2
        if blocklist_file is None or not blocklist_file.exists() or not load_blocklist(blocklist_file):
            print(
                "probe: refusing to run live measurements without a non-empty opt-out "
                "blocklist configured in the target file",
                file=sys.stderr,
            )
            return 2
        from .live import LiveIcmpProber, LiveRdnsResolver
        from .probing import WallClockPacer

        prober = LiveIcmpProber()
        resolver = LiveRdnsResolver()
        start_time = started
        pacer = WallClockPacer(started)
        horizon = _setting(args, "horizon-minutes", "probe", int, 2880)
        sim = None
    else:
        seed = args.seed
        sim_config = load_sim_config(args.sim, seed_override=seed)
        horizon = _setting(args, "horizon-minutes", "probe", int, 2880)
        sim = run_simulation(sim_config, horizon)
        prober = sim.icmp
        resolver = sim.ptr
        start_time = sim_config.start_time
        pacer = None

    loader = None
    if blocklist_file is not None:
        path = blocklist_file

        def loader() -> list[str]:
            return [str(network) for network in load_blocklist(path)] if path.exists() else []

    engine = ProbeEngine(
        target,
        prober,
        resolver,
        start_time,
        blocklist_loader=loader,
        phase1_rdns_every_probe=args.dense_phase1,
        pacer=pacer,
    )
    samples = engine.run(horizon + args.drain_minutes)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "probe_log.csv"
    write_probe_log(log_path, samples)
    closures: dict[str, int] = {}
    for closure in engine.closures:
        closures[closure.status] = closures.get(closure.status, 0) + 1
    print(f"probe: {len(samples)} samples, closures={closures}")
    _append_manifest(
        out_dir,
        "probe",
        {
            "mode": "live" if args.live else "sim",
            "target": str(args.target),
            "horizon_minutes": horizon,
            "drain_minutes": args.drain_minutes,
            "dense_phase1": args.dense_phase1,
        },
        [args.target] + ([args.sim] if args.sim else []),
        [log_path],
        started,
    )
    return 0


def cmd_group(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    samples = read_probe_log(args.probe_log)
    groups = build_groups(samples)
    breakdown = GroupBreakdown.from_groups(groups)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups_path = out_dir / "groups.csv"
    write_groups_csv(groups_path, groups)
    print(
        f"group: all={breakdown.all} successful={breakdown.successful} "
        f"reverted={breakdown.reverted} aligned={breakdown.aligned}"
    )
    lookup_outcomes: dict[str, int] = {}
    for sample in samples:
        if sample.kind == "rdns":
            lookup_outcomes[sample.outcome] = lookup_outcomes.get(sample.outcome, 0) + 1
    tally = " ".join(f"{key}={lookup_outcomes[key]}" for key in sorted(lookup_outcomes))
    print(f"group: lookup outcomes {tally or 'none'}")
    _append_manifest(
        out_dir,
        "group",
        {"alignment_rule": ALIGNMENT_RULE},
        [args.probe_log],
        [groups_path],
        started,
    )
    return 0


def cmd_report(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs: list = []
    outputs: list = []
    if args.kind == "lingering-cdf":
        groups = read_groups_csv(args.groups)
        inputs.append(args.groups)
        deltas = [g.lingering_min for g in groups if g.timing_aligned and g.lingering_min is not None]
        path = out_dir / "lingering_cdf.csv"
        write_lingering_cdf_csv(path, deltas)
        outputs.append(path)
        within_hour = sum(1 for d in deltas if d <= 60.0)
        share = within_hour / len(deltas) if deltas else 0.0
        print(f"report: {len(deltas)} lingering deltas, {share:.1%} within 60 minutes")
    elif args.kind == "daily-presence":
        days = read_store(args.store)
        inputs.append(args.store)
        series = daily_presence_series(days, suffix=args.suffix, prefix=args.prefix)
        path = out_dir / "daily_presence.csv"
        write_presence_csv(path, series)
        outputs.append(path)
        print(f"report: {len(series)} days")
    elif args.kind == "hourly-activity":
        groups = read_groups_csv(args.groups)
        inputs.append(args.groups)
        histogram = activity_histogram(groups, args.bucket_minutes)
        path = out_dir / "hourly_activity.csv"
        write_activity_csv(path, histogram)
        outputs.append(path)
        quiet = quietest_buckets(histogram)
        for day in sorted(quiet):
            print(f"report: quietest bucket on {day}: {quiet[day]:%H:%M}")
    elif args.kind == "name-timeline":
        if not args.name:
            print("report: name-timeline requires --name", file=sys.stderr)
            return 2
        groups = read_groups_csv(args.groups)
        inputs.append(args.groups)
        timeline = name_session_timeline(groups, args.name)
        path = out_dir / "name_timeline.csv"
        write_timeline_csv(path, timeline)
        outputs.append(path)
        print(f"report: {len(timeline)} hostnames match {args.name!r}")
    else:
        print(f"report: unknown kind {args.kind!r}", file=sys.stderr)
        return 2
    _append_manifest(out_dir, f"report:{args.kind}", {"kind": args.kind}, inputs, outputs, started)
    return 0


def cmd_simulate(args) -> int:
    started = _utcnow()
    out_dir = Path(args.out_dir)
    config = load_sim_config(args.sim, seed_override=args.seed)
    horizon = _setting(args, "horizon-minutes", "simulate", int, 2880)
    result = run_simulation(config, horizon)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.emit_snapshots:
        outputs.extend(emit_snapshots(result, out_dir / "snapshots", cadence=args.emit_snapshots))
    if args.export_ground_truth:
        truth_path = out_dir / "ground_truth.csv"
        write_ground_truth_csv(truth_path, result)
        outputs.append(truth_path)
    print(f"simulate: {len(result.sessions)} sessions over {horizon} minutes")
    _append_manifest(
        out_dir,
        "simulate",
        {"seed": config.seed, "horizon_minutes": horizon, "cadence": args.emit_snapshots},
        [args.sim],
        outputs,
        started,
    )
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptrwatch",
        description="Detect networks leaking client presence through dynamic reverse-DNS records.",
    )
    parser.add_argument("--config", help="INI file with per-command parameter defaults")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", required=True, help="output directory (one manifest per directory)")
    common.add_argument("--seed", type=int, default=None, help="override the simulator seed")

    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", parents=[common], help="normalize snapshot files into a date-partitioned store")
    ingest.add_argument("paths", nargs="+", help="snapshot files to ingest")
    ingest.add_argument("--format", choices=("csv", "ndjson"), default="csv")
    ingest.set_defaults(func=cmd_ingest)

    detect = sub.add_parser("detect", parents=[common], help="label /24 prefixes as dynamic or static")
    detect.add_argument("--store", required=True, help="ingested store directory")
    detect.add_argument("--window-days", type=int, default=None)
    detect.add_argument("--min-daily", type=int, default=None)
    detect.add_argument("--x-pct", type=float, default=None, help="day-over-day change percentage threshold")
    detect.add_argument("--y-days", type=int, default=None, help="minimum qualifying days for a dynamic label")
    detect.add_argument("--prefix-table", default=None, help="announced-prefix table (one CIDR per line)")
    detect.set_defaults(func=cmd_detect)

    analyze = sub.add_parser("analyze", parents=[common], help="find suffixes leaking given names")
    analyze.add_argument("--store", required=True)
    analyze.add_argument("--verdicts", required=True, help="verdicts.csv from detect")
    analyze.add_argument("--min-names", type=int, default=None)
    analyze.add_argument("--min-ratio", type=float, default=None)
    analyze.add_argument("--names-file", default=None)
    analyze.add_argument("--generic-terms-file", default=None)
    analyze.add_argument("--type-overrides", default=None, help="CSV of suffix,network_type")
    analyze.add_argument("--term-floor", type=int, default=100, help="minimum co-occurrence count to report")
    analyze.set_defaults(func=cmd_analyze)

    probe = sub.add_parser("probe", parents=[common], help="run the reactive measurement engine")
    probe.add_argument("--target", required=True, help="target spec INI")
    mode = probe.add_mutually_exclusive_group(required=True)
    mode.add_argument("--sim", default=None, help="simulator config INI (virtual endpoints)")
    mode.add_argument("--live", action="store_true", help="probe the real network (guarded)")
    probe.add_argument("--horizon-minutes", type=int, default=None)
    probe.add_argument("--drain-minutes", type=int, default=960, help="extra runtime past the horizon to close tracks")
    probe.add_argument(
        "--i-have-authorization",
        action="store_true",
        help="acknowledge documented permission to probe the target network",
    )
    probe.add_argument(
        "--dense-phase1",
        action="store_true",
        help="also look up the record at every back-off ping while the client is online",
    )
    probe.set_defaults(func=cmd_probe)

    group = sub.add_parser("group", parents=[common], help="merge a probe log into activity groups")
    group.add_argument("--probe-log", required=True)
    group.set_defaults(func=cmd_group)

    report = sub.add_parser("report", parents=[common], help="produce CSV report tables")
    report.add_argument(
        "--kind",
        required=True,
        choices=("lingering-cdf", "daily-presence", "hourly-activity", "name-timeline"),
    )
    report.add_argument("--groups", default=None, help="groups.csv from group")
    report.add_argument("--store", default=None, help="ingested store directory")
    report.add_argument("--suffix", default=None)
    report.add_argument("--prefix", default=None)
    report.add_argument("--bucket-minutes", type=int, default=60)
    report.add_argument("--name", default=None, help="given name for name-timeline")
    report.set_defaults(func=cmd_report)

    simulate = sub.add_parser("simulate", parents=[common], help="run the network simulator")
    simulate.add_argument("--sim", required=True, help="simulator config INI")
    simulate.add_argument("--horizon-minutes", type=int, default=None)
    simulate.add_argument("--emit-snapshots", choices=("daily", "weekly"), default=None)
    simulate.add_argument("--export-ground-truth", action="store_true")
    simulate.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _load_cli_config(args.config)
    except (OSError, configparser.Error) as exc:
        print(f"ptrwatch: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (
        OSError,
        ValueError,
        SnapshotFormatError,
        SimulationError,
        TransportUnavailable,
        configparser.Error,
        KeyError,
    ) as exc:
        print(f"ptrwatch {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
