"""Toolkit for detecting client presence and identity leaks in dynamically
updated reverse-DNS records, with a built-in DHCP/DNS network simulator."""

__version__ = "0.1.0"

from .dynamics import (  # noqa: F401
    DynamicityParams,
    DynamicityVerdict,
    PrefixDailySeries,
    build_daily_series,
    change_percentages,
    classify_all,
    classify_prefix,
    dynamic_fraction_per_covering_prefix,
)
from .leaks import (  # noqa: F401
    LeakParams,
    SuffixStats,
    classify_network_type,
    cooccurring_terms,
    extract_terms,
    filter_generic,
    match_given_names,
    registrable_suffix,
    select_leaking_suffixes,
    suffix_stats,
)
from .probing import (  # noqa: F401
    ProbeEngine,
    ProbeSample,
    TargetSpec,
    backoff_offsets,
    hourly_sweep,
    rdns_lookup,
)
from .sessions import (  # noqa: F401
    GroupBreakdown,
    SessionGroup,
    activity_histogram,
    build_groups,
    daily_presence_series,
    infer_sessions,
    label_quality,
    lingering_delta,
    merge_streams,
    name_session_timeline,
)
from .simulator import (  # noqa: F401
    SimConfig,
    SimResult,
    emit_snapshots,
    run_simulation,
    seed_name_corpus,
)
from .snapshots import (  # noqa: F401
    PtrObservation,
    SnapshotDay,
    ip_to_reverse_name,
    parse_snapshot_file,
    reverse_name_to_ip,
)
