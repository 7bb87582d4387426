"""Call-record binning, allocation to clusters, typical profiles, anomalies.

Call volumes are counted per tower and time bin, spread over grid cells via
the tower's coverage weights, then summed per area cluster. A cluster's
typical profile is the per-slot mean and sample standard deviation over all
non-excluded dates; observations outside mean +/- alpha * std are divergent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .geometry import TowerCoverage
from .reports import ParseReport

UNPROFILED = "unprofiled"

ALLOCATION_MODES = ("paper", "conserving")

_EPOCH_DATE = date(1970, 1, 1)
_SECONDS_PER_DAY = 86_400


@dataclass(frozen=True)
class CdrRecord:
    tower_id: str
    timestamp: datetime  # timezone-aware UTC
    duration_s: float


@dataclass
class TowerSeries:
    tower_id: str
    bins: dict[int, int] = field(default_factory=dict)  # bin index -> call count


@dataclass
class ClusterSeries:
    cluster: int | str  # 1..k, or UNPROFILED
    bins: dict[int, float] = field(default_factory=dict)

    def total(self) -> float:
        return float(sum(self.bins.values()))


@dataclass
class TemporalProfile:
    """Per-slot typical envelope for one cluster.

    Slots with fewer than two non-excluded observations carry NaN in all
    four arrays and a support below 2; they are skipped (and counted) by
    anomaly detection rather than guessed at.
    """

    cluster: int | str
    period: str  # "weekly" or "daily"
    bin_width_s: int
    alpha: float
    means: np.ndarray
    stds: np.ndarray
    lows: np.ndarray
    highs: np.ndarray
    support: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.means.size


@dataclass(frozen=True)
class AnomalyEntry:
    cluster: int | str
    day: date
    slot: int
    observed: float
    low: float
    high: float
    direction: str  # "above" or "below"


@dataclass
class AnomalyReport:
    cluster: int | str
    entries: list[AnomalyEntry]
    skipped_slots: int = 0


def check_bin_width(bin_width_s: int) -> int:
    width = int(bin_width_s)
    if width <= 0 or _SECONDS_PER_DAY % width != 0:
        raise InputError(f"bin width {bin_width_s}s must divide 24h evenly")
    return width


def parse_timestamp(raw: str) -> datetime:
    """ISO 8601 timestamp as an aware UTC datetime; naive input is taken as UTC."""
    s = raw.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_cdr(
    path: str, window: tuple[datetime, datetime] | None = None
) -> tuple[list[CdrRecord], ParseReport]:
    """Parse a CDR CSV (header tower_id,timestamp,duration_s).

    Malformed rows are skipped and counted as malformed; well-formed rows
    with a negative duration or a timestamp outside the half-open study
    window [start, end) are skipped and counted as discarded.
    """
    report = ParseReport(label=path)
    records: list[CdrRecord] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read CDR file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tower_id", "timestamp", "duration_s"]:
            raise InputError(f"CDR file {path}: expected header tower_id,timestamp,duration_s")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 3:
                report.malformed += 1
                report.note(f"line {lineno}: expected 3 fields, got {len(row)}")
                continue
            tower_id = row[0].strip()
            if not tower_id:
                report.malformed += 1
                report.note(f"line {lineno}: empty tower id")
                continue
            try:
                ts = parse_timestamp(row[1])
            except ValueError:
                report.malformed += 1
                report.note(f"line {lineno}: bad timestamp {row[1]!r}")
                continue
            try:
                duration = float(row[2])
            except ValueError:
                report.malformed += 1
                report.note(f"line {lineno}: bad duration {row[2]!r}")
                continue
            if not math.isfinite(duration) or duration < 0:
                report.discarded += 1
                report.note(f"line {lineno}: negative or non-finite duration")
                continue
            if window is not None and not window[0] <= ts < window[1]:
                report.discarded += 1
                continue
            records.append(CdrRecord(tower_id, ts, duration))
            report.accepted += 1
    return records, report


def bin_index(ts: datetime, bin_width_s: int) -> int:
    """Index of the half-open bin [start, start + width) containing ts."""
    return math.floor(ts.timestamp()) // bin_width_s


def bin_date(bin_idx: int, bin_width_s: int) -> date:
    day_index = (bin_idx * bin_width_s) // _SECONDS_PER_DAY
    return _EPOCH_DATE + timedelta(days=day_index)


def bin_slot(bin_idx: int, bin_width_s: int, period: str) -> int:
    """Slot of a bin within the daily or weekly cycle (UTC, Monday first)."""
    per_day = _SECONDS_PER_DAY // bin_width_s
    day_slot = bin_idx % per_day
    if period == "daily":
        return day_slot
    if period == "weekly":
        day_index = (bin_idx * bin_width_s) // _SECONDS_PER_DAY
        weekday = (day_index + 3) % 7  # 1970-01-01 was a Thursday
        return weekday * per_day + day_slot
    raise InputError(f"unknown period {period!r}")


def bin_for(day: date, day_slot: int, bin_width_s: int) -> int:
    per_day = _SECONDS_PER_DAY // bin_width_s
    return (day - _EPOCH_DATE).days * per_day + day_slot


def slots_per_period(period: str, bin_width_s: int) -> int:
    per_day = _SECONDS_PER_DAY // bin_width_s
    if period == "daily":
        return per_day
    if period == "weekly":
        return 7 * per_day
    raise InputError(f"unknown period {period!r}")


def bin_counts(records: Sequence[CdrRecord], bin_width_s: int) -> list[TowerSeries]:
    """Call counts per (tower, time bin); durations are parsed but not counted."""
    width = check_bin_width(bin_width_s)
    series: dict[str, TowerSeries] = {}
    for rec in records:
        ts = series.setdefault(rec.tower_id, TowerSeries(rec.tower_id))
        idx = bin_index(rec.timestamp, width)
        ts.bins[idx] = ts.bins.get(idx, 0) + 1
    return [series[tid] for tid in sorted(series)]


def allocate_cells(
    tower_series: Sequence[TowerSeries],
    coverage: Sequence[TowerCoverage],
    mode: str = "conserving",
) -> tuple[dict[int, dict[int, float]], dict[int, float]]:
    """Spread tower call counts over grid cells via coverage weights.

    "paper" mode divides each bin count by the number of intersecting cells
    before weighting (volume is lost whenever a polygon spans 2+ cells);
    "conserving" mode applies the weights directly and routes any polygon
    area not covered by the grid to the unallocated remainder, so per-bin
    totals are preserved exactly.

    Returns (per-cell series, unallocated volume per bin).
    """
    if mode not in ALLOCATION_MODES:
        raise InputError(f"allocation mode must be one of {ALLOCATION_MODES}, got {mode!r}")
    by_tower = {c.tower_id: c for c in coverage}
    cell_series: dict[int, dict[int, float]] = {}
    unallocated: dict[int, float] = {}
    for ts in tower_series:
        cov = by_tower.get(ts.tower_id)
        if cov is None:
            raise InputError(f"tower {ts.tower_id} has no coverage polygon")
        weights = cov.cell_weights
        n_cells = len(weights)
        weight_sum = sum(w for _, w in weights)
        for bin_idx, count in ts.bins.items():
            if count == 0:
                continue
            x = float(count)
            if mode == "paper":
                if n_cells == 0:
                    continue
                share = x / n_cells
                for cell_id, w in weights:
                    bins = cell_series.setdefault(cell_id, {})
                    bins[bin_idx] = bins.get(bin_idx, 0.0) + share * w
            else:
                for cell_id, w in weights:
                    bins = cell_series.setdefault(cell_id, {})
                    bins[bin_idx] = bins.get(bin_idx, 0.0) + x * w
                residual = x * (1.0 - weight_sum)
                if residual > 0.0:
                    unallocated[bin_idx] = unallocated.get(bin_idx, 0.0) + residual
    return cell_series, unallocated


def _label_sort_key(label: int | str) -> tuple[int, int, str]:
    if isinstance(label, int):
        return (0, label, "")
    return (1, 0, str(label))


def allocate(
    tower_series: Sequence[TowerSeries],
    coverage: Sequence[TowerCoverage],
    assignment: Mapping[int, int],
    mode: str = "conserving",
) -> list[ClusterSeries]:
    """Cluster-level call volume series.

    Cells without a cluster label, plus (in conserving mode) polygon area
    outside the grid, are reported under the "unprofiled" pseudo-cluster.
    """
    cell_series, unallocated = allocate_cells(tower_series, coverage, mode)
    by_label: dict[int | str, ClusterSeries] = {}
    for cell_id, bins in cell_series.items():
        label: int | str = assignment.get(cell_id, UNPROFILED)
        cs = by_label.setdefault(label, ClusterSeries(label))
        for bin_idx, volume in bins.items():
            cs.bins[bin_idx] = cs.bins.get(bin_idx, 0.0) + volume
    if unallocated:
        cs = by_label.setdefault(UNPROFILED, ClusterSeries(UNPROFILED))
        for bin_idx, volume in unallocated.items():
            cs.bins[bin_idx] = cs.bins.get(bin_idx, 0.0) + volume
    return [by_label[label] for label in sorted(by_label, key=_label_sort_key)]


def series_span(all_series: Iterable[ClusterSeries]) -> tuple[int, int]:
    """(first bin, last bin) covered by any of the given series."""
    lo: int | None = None
    hi: int | None = None
    for cs in all_series:
        for idx in cs.bins:
            lo = idx if lo is None else min(lo, idx)
            hi = idx if hi is None else max(hi, idx)
    if lo is None or hi is None:
        raise InputError("no observations in any series")
    return lo, hi


def typical_profile(
    series: ClusterSeries,
    period: str,
    exclusions: set[date] | frozenset[date],
    alpha: float,
    bin_width_s: int,
    span: tuple[int, int] | None = None,
) -> TemporalProfile:
    """Slot-wise mean/std envelope over all non-excluded dates in the span.

    Bins absent from the series within the span count as zero volume, so
    quiet periods tighten the envelope instead of vanishing from it. The
    std is the sample (n-1) estimator; the low edge is floored at zero.
    """
    width = check_bin_width(bin_width_s)
    if alpha <= 0:
        raise InputError(f"alpha must be positive, got {alpha}")
    if span is None:
        span = series_span([series])
    first, last = span
    if last < first:
        raise InputError("empty span")

    n_slots = slots_per_period(period, width)
    values: list[list[float]] = [[] for _ in range(n_slots)]
    excluded = frozenset(exclusions)
    any_kept = False
    for bin_idx in range(first, last + 1):
        if bin_date(bin_idx, width) in excluded:
            continue
        any_kept = True
        values[bin_slot(bin_idx, width, period)].append(series.bins.get(bin_idx, 0.0))
    if not any_kept:
        raise InputError("every date in the span is excluded")

    means = np.full(n_slots, np.nan)
    stds = np.full(n_slots, np.nan)
    lows = np.full(n_slots, np.nan)
    highs = np.full(n_slots, np.nan)
    support = np.zeros(n_slots, dtype=np.int64)
    for slot, obs in enumerate(values):
        support[slot] = len(obs)
        if len(obs) < 2:
            continue
        arr = np.asarray(obs)
        mu = float(arr.mean())
        sigma = float(arr.std(ddof=1))
        means[slot] = mu
        stds[slot] = sigma
        lows[slot] = max(0.0, mu - alpha * sigma)
        highs[slot] = mu + alpha * sigma
    return TemporalProfile(
        cluster=series.cluster,
        period=period,
        bin_width_s=width,
        alpha=alpha,
        means=means,
        stds=stds,
        lows=lows,
        highs=highs,
        support=support,
    )


def detect_anomalies(
    series: ClusterSeries,
    profile: TemporalProfile,
    days: Iterable[date],
) -> AnomalyReport:
    """Envelope violations over the given dates.

    Every (date, slot) whose observed volume falls strictly outside
    [low, high] is reported; slots with an insufficient-data profile are
    skipped and counted. Boundary equality is typical, not anomalous.
    """
    width = profile.bin_width_s
    per_day = _SECONDS_PER_DAY // width
    entries: list[AnomalyEntry] = []
    skipped = 0
    for day in sorted(set(days)):
        for day_slot in range(per_day):
            bin_idx = bin_for(day, day_slot, width)
            slot = bin_slot(bin_idx, width, profile.period)
            low = profile.lows[slot]
            high = profile.highs[slot]
            if np.isnan(low) or np.isnan(high):
                skipped += 1
                continue
            observed = series.bins.get(bin_idx, 0.0)
            if observed > high:
                direction = "above"
            elif observed < low:
                direction = "below"
            else:
                continue
            entries.append(
                AnomalyEntry(series.cluster, day, slot, observed, float(low), float(high), direction)
            )
    return AnomalyReport(cluster=series.cluster, entries=entries, skipped_slots=skipped)


def merge_anomalies(reports: Sequence[AnomalyReport]) -> list[AnomalyEntry]:
    entries = [e for r in reports for e in r.entries]
    entries.sort(key=lambda e: (e.day, _label_sort_key(e.cluster), e.slot))
    return entries


@dataclass(frozen=True)
class ProfileStats:
    cluster: int | str
    mean_daily_volume: float
    weekend_share: float  # NaN when the cluster has no volume
    distance_to_average: float  # NaN when undefined


def profile_stats(
    profiles: Mapping[int | str, TemporalProfile],
    series: Mapping[int | str, ClusterSeries],
    span: tuple[int, int],
    bin_width_s: int,
) -> list[ProfileStats]:
    """Per-cluster volume and shape statistics from weekly profiles.

    Weekend share is the Saturday+Sunday fraction of the typical weekly
    pattern; distance is the Euclidean gap between a cluster's unit-sum
    weekly pattern and the average unit-sum pattern over all clusters.
    Insufficient-data slots contribute zero to both.
    """
    width = check_bin_width(bin_width_s)
    per_day = _SECONDS_PER_DAY // width
    first, last = span
    n_days = (last - first + 1) / per_day

    labels = sorted(profiles, key=_label_sort_key)
    patterns: dict[int | str, np.ndarray | None] = {}
    for label in labels:
        prof = profiles[label]
        if prof.period != "weekly":
            raise InputError("profile_stats needs weekly profiles")
        means = np.nan_to_num(prof.means, nan=0.0)
        total = means.sum()
        patterns[label] = means / total if total > 0 else None

    defined = [p for p in patterns.values() if p is not None]
    average = np.mean(defined, axis=0) if defined else None

    out: list[ProfileStats] = []
    for label in labels:
        prof = profiles[label]
        cs = series.get(label)
        total_volume = cs.total() if cs is not None else 0.0
        mean_daily = total_volume / n_days if n_days > 0 else float("nan")
        pattern = patterns[label]
        if pattern is None:
            out.append(ProfileStats(label, mean_daily, float("nan"), float("nan")))
            continue
        weekend = pattern[5 * per_day : 7 * per_day].sum()
        share = float(weekend)  # pattern already sums to 1
        dist = float(np.linalg.norm(pattern - average)) if average is not None else float("nan")
        out.append(ProfileStats(label, mean_daily, share, dist))
    return out
