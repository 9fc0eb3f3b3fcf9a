import json
from pathlib import Path

import pytest

from ptrwatch.cli import MANIFEST_NAME, main

SIM_INI = """\
[simulation]
seed = 5
address_pool = 10.70.0.0/26
lease_minutes = 60
release_probability = 0.8
ptr_policy = set_on_lease_remove_on_release_or_expiry
client_population = 25
arrival_mean_minutes = 6
session_median_minutes = 70
session_sigma = 0.2
zone_suffix = lab.campus-x.edu
start_time = 2021-11-01T00:00:00Z
"""

TARGET_INI = """\
[target]
label = campus-x
ranges = 10.70.0.0/26
icmp_rate = 256
rdns_rate = 64
max_hours = 6
"""


@pytest.fixture
def sim_ini(tmp_path):
    path = tmp_path / "sim.ini"
    path.write_text(SIM_INI, encoding="utf-8")
    return path


@pytest.fixture
def target_ini(tmp_path):
    path = tmp_path / "target.ini"
    path.write_text(TARGET_INI, encoding="utf-8")
    return path


def _write_snapshot(path, rows):
    path.write_text("timestamp,ip,outcome,hostname\n" + "\n".join(rows) + "\n", encoding="utf-8")


def test_ingest_partitions_by_date(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    _write_snapshot(a, ["2021-03-01T12:00:00Z,10.0.0.1,ok,h1.x.net"])
    _write_snapshot(b, ["2021-03-02T12:00:00Z,10.0.0.2,ok,h2.x.net"])
    out = tmp_path / "store"
    assert main(["ingest", "--out-dir", str(out), str(a), str(b)]) == 0
    partitions = sorted(p.name for p in out.glob("date=*.ndjson"))
    assert partitions == ["date=2021-03-01.ndjson", "date=2021-03-02.ndjson"]
    assert (out / MANIFEST_NAME).exists()
    assert "2 day partitions" in capsys.readouterr().out


def test_ingest_corrupt_file_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    _write_snapshot(bad, ["garbage,garbage,garbage,garbage"] * 5)
    out = tmp_path / "store"
    assert main(["ingest", "--out-dir", str(out), str(bad)]) == 2
    assert not list(out.glob("date=*.ndjson")) if out.exists() else True
    assert not (out / MANIFEST_NAME).exists()


def test_ingest_byte_stable(tmp_path):
    src = tmp_path / "a.csv"
    _write_snapshot(
        src,
        [
            "2021-03-01T12:00:00Z,10.0.0.2,ok,h2.x.net",
            "2021-03-01T12:00:00Z,10.0.0.1,ok,h1.x.net",
        ],
    )
    out_a, out_b = tmp_path / "s1", tmp_path / "s2"
    assert main(["ingest", "--out-dir", str(out_a), str(src)]) == 0
    assert main(["ingest", "--out-dir", str(out_b), str(src)]) == 0
    read = lambda out: (out / "date=2021-03-01.ndjson").read_bytes()
    assert read(out_a) == read(out_b)


def _seed_churny_store(tmp_path) -> Path:
    rows = []
    for day in range(1, 22):
        population = 30 if day % 2 else 14
        for host in range(1, population + 1):
            rows.append(f"2021-03-{day:02d}T12:00:00Z,10.80.1.{host},ok,brians-iphone{host}.leaky.example.edu")
        for host in range(1, 25):
            rows.append(f"2021-03-{day:02d}T12:00:00Z,10.80.2.{host},ok,host{host:04d}.stable.example.net")
    src = tmp_path / "corpus.csv"
    _write_snapshot(src, rows)
    store = tmp_path / "store"
    assert main(["ingest", "--out-dir", str(store), str(src)]) == 0
    return store


def test_detect_counts_and_default_flag_equivalence(tmp_path, capsys):
    store = _seed_churny_store(tmp_path)
    out_default = tmp_path / "d1"
    out_explicit = tmp_path / "d2"
    assert main(["detect", "--store", str(store), "--out-dir", str(out_default), "--window-days", "21"]) == 0
    summary = capsys.readouterr().out
    assert "dynamic=1 static=1" in summary
    assert (
        main(
            [
                "detect", "--store", str(store), "--out-dir", str(out_explicit),
                "--window-days", "21", "--x-pct", "10", "--y-days", "7",
            ]
        )
        == 0
    )
    assert (out_default / "verdicts.csv").read_bytes() == (out_explicit / "verdicts.csv").read_bytes()


def test_detect_empty_store_fails(tmp_path):
    store = tmp_path / "empty-store"
    store.mkdir()
    assert main(["detect", "--store", str(store), "--out-dir", str(tmp_path / "out")]) == 2


def test_detect_global_config_supplies_defaults(tmp_path, capsys):
    store = _seed_churny_store(tmp_path)
    config = tmp_path / "ptrwatch.ini"
    config.write_text("[detect]\nwindow-days = 21\ny-days = 50\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["--config", str(config), "detect", "--store", str(store), "--out-dir", str(out)]) == 0
    # y-days=50 from the config file cannot be met by a 21-day window
    assert "dynamic=0" in capsys.readouterr().out


def test_analyze_selects_leaky_suffix(tmp_path, capsys):
    store = _seed_churny_store(tmp_path)
    detect_out = tmp_path / "det"
    assert main(["detect", "--store", str(store), "--out-dir", str(detect_out), "--window-days", "21"]) == 0
    out = tmp_path / "ana"
    assert (
        main(
            [
                "analyze", "--store", str(store), "--verdicts", str(detect_out / "verdicts.csv"),
                "--out-dir", str(out), "--min-names", "1", "--min-ratio", "0.01",
            ]
        )
        == 0
    )
    selected = (out / "selected_networks.csv").read_text(encoding="utf-8").splitlines()
    assert len(selected) == 2  # header + the leaky suffix at TLD+1
    assert selected[1].startswith("example.edu,")
    assert selected[1].endswith(",academic")
    assert "selected=1" in capsys.readouterr().out


def test_analyze_empty_verdicts_is_empty_selection(tmp_path, capsys):
    store = _seed_churny_store(tmp_path)
    verdicts = tmp_path / "verdicts.csv"
    verdicts.write_text("prefix,label,qualifying_days,max_daily\n", encoding="utf-8")
    out = tmp_path / "ana"
    assert (
        main(["analyze", "--store", str(store), "--verdicts", str(verdicts), "--out-dir", str(out)]) == 0
    )
    assert "selected=0" in capsys.readouterr().out
    assert (out / "selected_networks.csv").read_text(encoding="utf-8").count("\n") == 1


def test_probe_sim_deterministic(tmp_path, sim_ini, target_ini):
    out_a, out_b = tmp_path / "p1", tmp_path / "p2"
    base = [
        "probe", "--sim", str(sim_ini), "--target", str(target_ini),
        "--horizon-minutes", "480", "--drain-minutes", "360",
    ]
    assert main(base + ["--out-dir", str(out_a)]) == 0
    assert main(base + ["--out-dir", str(out_b)]) == 0
    assert (out_a / "probe_log.csv").read_bytes() == (out_b / "probe_log.csv").read_bytes()


def test_probe_live_requires_acknowledgment(tmp_path, target_ini, capsys):
    rc = main(["probe", "--live", "--target", str(target_ini), "--out-dir", str(tmp_path / "out")])
    assert rc == 2
    assert "--i-have-authorization" in capsys.readouterr().err


def test_probe_live_requires_blocklist(tmp_path, target_ini, capsys):
    rc = main(
        [
            "probe", "--live", "--target", str(target_ini),
            "--i-have-authorization", "--out-dir", str(tmp_path / "out"),
        ]
    )
    assert rc == 2
    assert "blocklist" in capsys.readouterr().err


def test_group_and_reports(tmp_path, sim_ini, target_ini, capsys):
    probe_out = tmp_path / "probe"
    assert (
        main(
            [
                "probe", "--sim", str(sim_ini), "--target", str(target_ini),
                "--horizon-minutes", "480", "--drain-minutes", "360",
                "--out-dir", str(probe_out),
            ]
        )
        == 0
    )
    group_out = tmp_path / "groups"
    assert main(["group", "--probe-log", str(probe_out / "probe_log.csv"), "--out-dir", str(group_out)]) == 0
    summary = capsys.readouterr().out
    assert "all=" in summary and "aligned=" in summary

    report_out = tmp_path / "reports"
    groups_csv = str(group_out / "groups.csv")
    assert main(["report", "--kind", "lingering-cdf", "--groups", groups_csv, "--out-dir", str(report_out)]) == 0
    assert main(["report", "--kind", "hourly-activity", "--groups", groups_csv, "--out-dir", str(report_out)]) == 0
    assert main(["report", "--kind", "name-timeline", "--groups", groups_csv, "--name", "brian",
                 "--out-dir", str(report_out)]) == 0
    assert (report_out / "lingering_cdf.csv").exists()
    assert (report_out / "hourly_activity.csv").exists()
    assert (report_out / "name_timeline.csv").exists()
    manifest_lines = (report_out / MANIFEST_NAME).read_text(encoding="utf-8").splitlines()
    assert len(manifest_lines) == 3  # manifests append, never overwrite
    assert all(json.loads(line)["tool_version"] for line in manifest_lines)


def test_report_daily_presence(tmp_path, capsys):
    store = _seed_churny_store(tmp_path)
    out = tmp_path / "rep"
    assert main(["report", "--kind", "daily-presence", "--store", str(store), "--out-dir", str(out)]) == 0
    rows = (out / "daily_presence.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "date,count,fraction_of_max"
    fractions = [float(line.split(",")[2]) for line in rows[1:]]
    assert max(fractions) == 1.0


def test_simulate_emits_snapshots_and_truth(tmp_path, sim_ini, capsys):
    out = tmp_path / "sim-out"
    assert (
        main(
            [
                "simulate", "--sim", str(sim_ini), "--horizon-minutes", str(3 * 1440),
                "--emit-snapshots", "daily", "--export-ground-truth", "--out-dir", str(out),
            ]
        )
        == 0
    )
    assert len(list((out / "snapshots").glob("snapshot-*.csv"))) == 3
    assert (out / "ground_truth.csv").exists()
    assert "sessions" in capsys.readouterr().out


def test_seed_flag_overrides_sim_seed(tmp_path, sim_ini, target_ini):
    out_a, out_b = tmp_path / "s1", tmp_path / "s2"
    base = [
        "probe", "--sim", str(sim_ini), "--target", str(target_ini),
        "--horizon-minutes", "300", "--drain-minutes", "240",
    ]
    assert main(base + ["--out-dir", str(out_a), "--seed", "5"]) == 0
    assert main(base + ["--out-dir", str(out_b), "--seed", "99"]) == 0
    assert (out_a / "probe_log.csv").read_bytes() != (out_b / "probe_log.csv").read_bytes()


RELEASE_MIX_SIM_INI = """\
[simulation]
seed = 7
address_pool = 10.9.0.0/24
lease_minutes = 60
release_probability = 0.9
ptr_policy = set_on_lease_remove_on_release_or_expiry
client_population = 60
arrival_mean_minutes = 3
session_median_minutes = 64
session_sigma = 0.02
session_max_minutes = 600
zone_suffix = campus-a.example.edu
start_time = 2021-11-01T00:00:00Z
"""

RELEASE_MIX_TARGET_INI = """\
[target]
label = campus-a
ranges = 10.9.0.0/24
max_hours = 12
"""


def test_lingering_cdf_report_mass_within_hour(tmp_path, capsys):
    sim_ini = tmp_path / "mix.ini"
    target_ini = tmp_path / "mix-target.ini"
    sim_ini.write_text(RELEASE_MIX_SIM_INI, encoding="utf-8")
    target_ini.write_text(RELEASE_MIX_TARGET_INI, encoding="utf-8")
    probe_out = tmp_path / "probe"
    assert (
        main(
            [
                "probe", "--sim", str(sim_ini), "--target", str(target_ini),
                "--horizon-minutes", "1440", "--drain-minutes", "960",
                "--out-dir", str(probe_out),
            ]
        )
        == 0
    )
    group_out = tmp_path / "groups"
    assert main(["group", "--probe-log", str(probe_out / "probe_log.csv"), "--out-dir", str(group_out)]) == 0
    report_out = tmp_path / "report"
    assert (
        main(
            [
                "report", "--kind", "lingering-cdf",
                "--groups", str(group_out / "groups.csv"), "--out-dir", str(report_out),
            ]
        )
        == 0
    )
    rows = (report_out / "lingering_cdf.csv").read_text(encoding="utf-8").splitlines()[1:]
    deltas = [float(line.split(",")[0]) for line in rows]
    assert len(deltas) >= 200
    within_hour = sum(1 for delta in deltas if delta <= 60.0) / len(deltas)
    assert within_hour >= 0.9


def test_detect_prefix_table_fractions(tmp_path):
    store = _seed_churny_store(tmp_path)
    table = tmp_path / "announced.txt"
    table.write_text("10.80.0.0/16\n# lab space\n10.80.1.0/24\n", encoding="utf-8")
    out = tmp_path / "det"
    assert (
        main(
            [
                "detect", "--store", str(store), "--out-dir", str(out),
                "--window-days", "21", "--prefix-table", str(table),
            ]
        )
        == 0
    )
    rows = (out / "dynamic_fractions.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "prefix,observed_24s,dynamic_24s,fraction"
    by_prefix = {line.split(",")[0]: line.split(",") for line in rows[1:]}
    # the churning /24 maps to its most-specific table entry
    assert by_prefix["10.80.1.0/24"][2] == "1"
    assert by_prefix["10.80.0.0/16"][1] == "1"  # only the stable /24 remains here


def test_analyze_writes_name_match_counts(tmp_path):
    store = _seed_churny_store(tmp_path)
    detect_out = tmp_path / "det"
    assert main(["detect", "--store", str(store), "--out-dir", str(detect_out), "--window-days", "21"]) == 0
    out = tmp_path / "ana"
    assert (
        main(
            [
                "analyze", "--store", str(store), "--verdicts", str(detect_out / "verdicts.csv"),
                "--out-dir", str(out), "--min-names", "1", "--min-ratio", "0.01",
            ]
        )
        == 0
    )
    rows = (out / "name_match_counts.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "name,total_matches,selected_network_matches"
    counts = {line.split(",")[0]: (int(line.split(",")[1]), int(line.split(",")[2])) for line in rows[1:]}
    assert counts["brian"][0] > 0
    assert counts["brian"][1] > 0
    assert counts["brian"][0] >= counts["brian"][1]
