"""Shared fixtures for building simulated cohorts and probe logs."""

from __future__ import annotations

from datetime import datetime

from ptrwatch import ProbeEngine, SimConfig, TargetSpec, build_groups, run_simulation
from ptrwatch.simulator import PTR_REMOVE_ON_RELEASE


def release_mix_config(**overrides) -> SimConfig:
    """A /24 cohort with 60-minute leases and a 90% release mix; session
    lengths sit just past one lease so no-release removals land near an hour."""
    fields = dict(
        seed=7,
        address_pool=("10.9.0.0/24",),
        lease_minutes=60,
        release_probability=0.9,
        ptr_policy=PTR_REMOVE_ON_RELEASE,
        client_population=60,
        arrival_mean_minutes=3.0,
        session_median_minutes=64.0,
        session_sigma=0.02,
        session_max_minutes=600.0,
        zone_suffix="campus-a.example.edu",
    )
    fields.update(overrides)
    return SimConfig(**fields)


def churn_config(prefix: str, zone_suffix: str, seed: int, **overrides) -> SimConfig:
    """A /24 whose weekday/weekend load swing makes its PTR population churn."""
    fields = dict(
        seed=seed,
        address_pool=(prefix,),
        client_population=80,
        arrival_mean_minutes=15.0,
        session_median_minutes=600.0,
        session_sigma=0.5,
        session_max_minutes=1400.0,
        weekend_arrival_factor=0.25,
        zone_suffix=zone_suffix,
    )
    fields.update(overrides)
    return SimConfig(**fields)


def run_cohort(
    config: SimConfig,
    horizon_minutes: int,
    drain_minutes: int = 960,
    target_overrides: dict | None = None,
):
    """Simulate, probe, and group one network; returns (sim, samples, groups)."""
    sim = run_simulation(config, horizon_minutes)
    fields = dict(
        network_label=config.zone_suffix,
        cidr_ranges=config.address_pool,
        max_hours=12,
    )
    if target_overrides:
        fields.update(target_overrides)
    target = TargetSpec(**fields)
    engine = ProbeEngine(target, sim.icmp, sim.ptr, config.start_time)
    samples = engine.run(horizon_minutes + drain_minutes)
    return sim, samples, build_groups(samples)


def minutes_since(start: datetime, when: datetime) -> float:
    return (when - start).total_seconds() / 60.0
