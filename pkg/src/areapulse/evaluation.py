"""Intrinsic cluster quality via silhouette coefficients.

Objects are areas (grid cells); their features are temporal call-volume
patterns compared under Euclidean distance. A cluster's quality fraction is
the share of its members with a strictly positive silhouette.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError
from .temporal import bin_slot, check_bin_width, slots_per_period

FEATURE_MODES = ("weekly", "full")


@dataclass(frozen=True)
class PatternPoint:
    point_id: int
    cluster: int
    features: np.ndarray


@dataclass(frozen=True)
class ClusterQuality:
    mean_s: float
    positive_fraction: float
    size: int


@dataclass
class SilhouetteResult:
    point_ids: list[int]
    clusters: list[int]
    a: np.ndarray  # NaN for singleton clusters
    b: np.ndarray
    s: np.ndarray  # in [-1, 1]; 0 for singletons by convention
    per_cluster: dict[int, ClusterQuality]
    mean_s: float


def silhouette(points: Sequence[PatternPoint]) -> SilhouetteResult:
    """Silhouette coefficients of every point under Euclidean distance.

    a(o) averages distances within o's cluster (excluding o), b(o) is the
    smallest average distance to any other cluster, s(o) = (b - a) / max(a, b).
    Points in singleton clusters get s(o) = 0 since a(o) is undefined there.
    """
    if len(points) < 2:
        raise InputError("silhouette needs at least 2 points")
    dims = {p.features.shape for p in points}
    if len(dims) != 1:
        raise InputError(f"inconsistent feature dimensions: {sorted(dims)}")
    labels = np.asarray([p.cluster for p in points])
    unique = np.unique(labels)
    if unique.size < 2:
        raise InputError("silhouette needs at least 2 clusters")

    feats = np.stack([np.asarray(p.features, dtype=np.float64) for p in points])
    if not np.all(np.isfinite(feats)):
        raise InputError("non-finite feature values")
    dist = cdist(feats, feats)

    n = len(points)
    sums = np.empty((n, unique.size))
    sizes = np.empty(unique.size, dtype=np.int64)
    for ci, label in enumerate(unique):
        mask = labels == label
        sizes[ci] = mask.sum()
        sums[:, ci] = dist[:, mask].sum(axis=1)

    label_pos = {label: ci for ci, label in enumerate(unique)}
    a = np.full(n, np.nan)
    b = np.empty(n)
    s = np.zeros(n)
    for i in range(n):
        ci = label_pos[labels[i]]
        other = [cj for cj in range(unique.size) if cj != ci]
        b[i] = min(sums[i, cj] / sizes[cj] for cj in other)
        if sizes[ci] > 1:
            a[i] = sums[i, ci] / (sizes[ci] - 1)
            denom = max(a[i], b[i])
            s[i] = (b[i] - a[i]) / denom if denom > 0 else 0.0

    per_cluster: dict[int, ClusterQuality] = {}
    for label in unique:
        mask = labels == label
        per_cluster[int(label)] = ClusterQuality(
            mean_s=float(s[mask].mean()),
            positive_fraction=float((s[mask] > 0).mean()),
            size=int(mask.sum()),
        )
    return SilhouetteResult(
        point_ids=[p.point_id for p in points],
        clusters=[int(p.cluster) for p in points],
        a=a,
        b=b,
        s=s,
        per_cluster=per_cluster,
        mean_s=float(s.mean()),
    )


def quality_fraction(result: SilhouetteResult, cluster: int) -> float:
    """Share of a cluster's points with strictly positive silhouette."""
    if cluster not in result.per_cluster:
        raise InputError(f"unknown cluster {cluster}")
    return result.per_cluster[cluster].positive_fraction


def pattern_features(
    cell_series: Mapping[int, Mapping[int, float]],
    assignment: Mapping[int, int],
    span: tuple[int, int],
    bin_width_s: int,
    mode: str = "weekly",
) -> tuple[list[PatternPoint], int]:
    """Unit-sum temporal pattern features for every clustered cell.

    "weekly" folds the cell's allocated volume onto the weekly cycle
    (168 slots at hourly bins); "full" uses the whole binned span as one
    vector. Cells with zero allocated volume have no pattern and are
    dropped; the drop count is returned alongside the points.
    """
    if mode not in FEATURE_MODES:
        raise InputError(f"feature mode must be one of {FEATURE_MODES}, got {mode!r}")
    width = check_bin_width(bin_width_s)
    first, last = span
    if last < first:
        raise InputError("empty span")
    n_dims = slots_per_period("weekly", width) if mode == "weekly" else last - first + 1

    points: list[PatternPoint] = []
    dropped = 0
    for cell_id in sorted(assignment):
        bins = cell_series.get(cell_id, {})
        vec = np.zeros(n_dims)
        for bin_idx, volume in bins.items():
            if not first <= bin_idx <= last:
                continue
            if mode == "weekly":
                vec[bin_slot(bin_idx, width, "weekly")] += volume
            else:
                vec[bin_idx - first] += volume
        total = vec.sum()
        if total <= 0:
            dropped += 1
            continue
        points.append(PatternPoint(cell_id, int(assignment[cell_id]), vec / total))
    return points, dropped
