"""Hostname drill-down: term extraction, given-name matching, suffix statistics."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

_TERM_RE = re.compile(r"[a-z]+")

NETWORK_TYPES = ("academic", "isp", "enterprise", "government", "other")

NO_SUFFIX = None


def _read_wordlist(text: str) -> frozenset[str]:
    words = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            words.add(line.lower())
    return frozenset(words)


def _bundled(name: str) -> str:
    return resources.files("ptrwatch").joinpath(f"data/{name}").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def default_given_names() -> frozenset[str]:
    return _read_wordlist(_bundled("given_names.txt"))


@lru_cache(maxsize=None)
def default_generic_terms() -> frozenset[str]:
    return _read_wordlist(_bundled("generic_terms.txt"))


@lru_cache(maxsize=None)
def default_public_suffixes() -> frozenset[str]:
    return _read_wordlist(_bundled("public_suffixes.txt"))


def load_wordlist(path: str | Path) -> frozenset[str]:
    return _read_wordlist(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class LeakParams:
    given_names: frozenset[str]
    generic_terms: frozenset[str]
    min_term_len: int = 3
    min_unique_names: int = 50
    min_ratio: float = 0.1

    def __post_init__(self) -> None:
        for label, words in (("given_names", self.given_names), ("generic_terms", self.generic_terms)):
            if not words:
                raise ValueError(f"{label} must not be empty")
            for word in words:
                if not word.isalpha() or word != word.lower():
                    raise ValueError(f"{label} entries must be lowercase alphabetic: {word!r}")
        if self.min_term_len <= 0 or self.min_unique_names <= 0:
            raise ValueError("thresholds must be strictly positive")
        if not 0.0 < self.min_ratio <= 1.0:
            raise ValueError("min_ratio must be in (0, 1]")

    @classmethod
    def default(cls, **overrides) -> "LeakParams":
        fields = {
            "given_names": default_given_names(),
            "generic_terms": default_generic_terms(),
        }
        fields.update(overrides)
        return cls(**fields)


def extract_terms(hostname: str, min_term_len: int = 3) -> list[str]:
    """Maximal alphabetic runs of at least ``min_term_len`` characters, lowercased."""
    return [term for term in _TERM_RE.findall(hostname.lower()) if len(term) >= min_term_len]


def registrable_suffix(hostname: str, suffixes: frozenset[str] | None = None) -> str | None:
    """Registrable domain (public suffix plus one label), or None when undefined.

    Unknown TLDs fall back to the last two labels; single-label names and
    names that are themselves a public suffix have no registrable domain.
    """
    if suffixes is None:
        suffixes = default_public_suffixes()
    name = hostname.strip().rstrip(".").lower()
    if not name:
        return NO_SUFFIX
    labels = name.split(".")
    if len(labels) < 2 or any(not label for label in labels):
        return NO_SUFFIX
    cut = None
    for start in range(len(labels)):
        if ".".join(labels[start:]) in suffixes:
            cut = start
            break
    if cut is None:
        cut = len(labels) - 1
    if cut == 0:
        return NO_SUFFIX
    return ".".join(labels[cut - 1:])


def host_prefix(hostname: str, suffixes: frozenset[str] | None = None) -> str:
    """The host-specific labels in front of the registrable suffix."""
    name = hostname.strip().rstrip(".").lower()
    suffix = registrable_suffix(name, suffixes)
    if suffix is None or suffix == name:
        return name if suffix is None else ""
    return name[: -(len(suffix) + 1)]


def match_given_names(hostname: str, params: LeakParams) -> set[str]:
    """Names whose token (or genitive token, e.g. "brians") appears in the
    host-specific labels. Suffix labels are never searched."""
    terms = set(extract_terms(host_prefix(hostname), params.min_term_len))
    if not terms:
        return set()
    return {name for name in params.given_names if name in terms or name + "s" in terms}


def filter_generic(hostnames: Iterable[str], params: LeakParams) -> list[str]:
    """Drop hostnames carrying router/location-level terms."""
    kept = []
    for hostname in hostnames:
        terms = set(extract_terms(host_prefix(hostname), params.min_term_len))
        if terms & params.generic_terms:
            continue
        kept.append(hostname)
    return kept


@dataclass
class SuffixStats:
    suffix: str
    record_count: int
    unique_names: set[str]

    @property
    def ratio(self) -> float:
        return len(self.unique_names) / self.record_count if self.record_count else 0.0


def suffix_stats(hostnames: Iterable[str], params: LeakParams) -> list[SuffixStats]:
    """Per registrable suffix: record count, unique matched names, and ratio."""
    buckets: dict[str, SuffixStats] = {}
    for hostname in hostnames:
        suffix = registrable_suffix(hostname)
        if suffix is None:
            continue
        bucket = buckets.setdefault(suffix, SuffixStats(suffix, 0, set()))
        bucket.record_count += 1
        bucket.unique_names |= match_given_names(hostname, params)
    return [buckets[suffix] for suffix in sorted(buckets)]


def is_selected(stats: SuffixStats, params: LeakParams) -> bool:
    return len(stats.unique_names) >= params.min_unique_names and stats.ratio >= params.min_ratio


def select_leaking_suffixes(stats: Iterable[SuffixStats], params: LeakParams) -> list[SuffixStats]:
    return [entry for entry in stats if is_selected(entry, params)]


def _is_name_token(term: str, names: frozenset[str]) -> bool:
    return term in names or (term.endswith("s") and term[:-1] in names)


def cooccurring_terms(
    hostnames: Iterable[str], params: LeakParams, min_count: int = 100
) -> dict[str, int]:
    """Counts of non-name prefix terms in records that matched a given name.

    Only terms reaching ``min_count`` occurrences are reported.
    """
    counts: dict[str, int] = {}
    for hostname in hostnames:
        if not match_given_names(hostname, params):
            continue
        for term in extract_terms(host_prefix(hostname), params.min_term_len):
            if _is_name_token(term, params.given_names):
                continue
            counts[term] = counts.get(term, 0) + 1
    return {term: count for term, count in sorted(counts.items()) if count >= min_count}


def given_name_counts(hostnames: Iterable[str], params: LeakParams) -> dict[str, int]:
    """How many records match each configured name (genitive forms included)."""
    counts = {name: 0 for name in sorted(params.given_names)}
    for hostname in hostnames:
        for name in match_given_names(hostname, params):
            counts[name] += 1
    return counts


def classify_network_type(suffix: str, overrides: dict[str, str] | None = None) -> str:
    """Classify a registrable suffix as academic, government, an operator-curated
    type from ``overrides``, or other."""
    labels = suffix.strip().rstrip(".").lower().split(".")
    public_labels = labels[1:]
    if labels[-1] == "edu" or "ac" in public_labels:
        return "academic"
    if labels[-1] == "gov" or "gov" in public_labels:
        return "government"
    if overrides:
        declared = overrides.get(".".join(labels))
        if declared is not None:
            if declared not in NETWORK_TYPES:
                raise ValueError(f"unknown network type {declared!r}")
            return declared
    return "other"


def load_type_overrides(path: str | Path) -> dict[str, str]:
    overrides = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        suffix, _, network_type = line.partition(",")
        network_type = network_type.strip().lower()
        if network_type not in NETWORK_TYPES:
            raise ValueError(f"unknown network type {network_type!r} for {suffix!r}")
        overrides[suffix.strip().lower()] = network_type
    return overrides


def write_stats_csv(
    path: str | Path,
    stats: Iterable[SuffixStats],
    params: LeakParams,
    overrides: dict[str, str] | None = None,
) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["suffix", "record_count", "unique_names", "ratio", "selected", "network_type"])
        for entry in stats:
            writer.writerow(
                [
                    entry.suffix,
                    entry.record_count,
                    len(entry.unique_names),
                    f"{entry.ratio:.6f}",
                    str(is_selected(entry, params)).lower(),
                    classify_network_type(entry.suffix, overrides),
                ]
            )
