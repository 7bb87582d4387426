"""POI parsing, activity taxonomy, grid population, and TF-IDF profiles.

A study area is a grid of square cells; every POI contributes one count to
its cell under one of ten top-level activity categories. Cell profiles are
TF-IDF weighted so that categories present everywhere stop dominating the
similarity structure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .geometry import EquirectangularProjection, Grid, _check_lonlat
from .reports import ParseReport

CATEGORIES: tuple[str, ...] = (
    "eating",
    "shopping",
    "health_medicine",
    "entertainment",
    "education",
    "transport",
    "outdoor",
    "sporting",
    "working",
    "residential",
)
CATEGORY_INDEX = {name: i for i, name in enumerate(CATEGORIES)}
N_CATEGORIES = len(CATEGORIES)

DISCARD = "DISCARD"

# Seed mapping: exemplar POI types per category. Real deployments extend this
# via the taxonomy CSV; completeness is configuration, not code.
_DEFAULT_MAPPING: dict[str, str] = {
    "fast_food": "eating",
    "food_court": "eating",
    "restaurant": "eating",
    "cafe": "eating",
    "grocery": "shopping",
    "general_store": "shopping",
    "hospital": "health_medicine",
    "pharmacy": "health_medicine",
    "bar": "entertainment",
    "casino": "entertainment",
    "movie": "entertainment",
    "theater": "entertainment",
    "library": "education",
    "university": "education",
    "school": "education",
    "airplane": "transport",
    "bus": "transport",
    "car": "transport",
    "train": "transport",
    "sightseeing": "outdoor",
    "personal_care": "outdoor",
    "religious_place": "outdoor",
    "car_racing": "sporting",
    "summer_sports": "sporting",
    "winter_sports": "sporting",
    "professional_workplace": "working",
    "industrial_place": "working",
    "guest_house": "residential",
    "hotel": "residential",
    "hostel": "residential",
    "residential_building": "residential",
}
_DEFAULT_DISCARD = frozenset({"bench", "waste_basket", "survey_point"})


@dataclass(frozen=True)
class Taxonomy:
    """Mapping from raw POI type tags to activity categories.

    Types in the discard set are dropped silently (counted); types missing
    from both the mapping and the discard set are dropped with a warning
    count, so an incomplete taxonomy degrades loudly rather than fatally.
    """

    mapping: dict[str, str]
    discard: frozenset[str]

    @classmethod
    def default(cls) -> "Taxonomy":
        return cls(dict(_DEFAULT_MAPPING), _DEFAULT_DISCARD)

    @classmethod
    def from_csv(cls, path: str) -> "Taxonomy":
        mapping: dict[str, str] = {}
        discard: set[str] = set()
        try:
            fh = open(path, newline="", encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read taxonomy file {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["poi_type", "category"]:
                raise InputError(f"taxonomy file {path}: expected header poi_type,category")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not f.strip() for f in row):
                    continue
                if len(row) != 2:
                    raise InputError(f"taxonomy file {path}:{lineno}: expected 2 fields")
                poi_type, category = row[0].strip(), row[1].strip()
                if not poi_type:
                    raise InputError(f"taxonomy file {path}:{lineno}: empty poi_type")
                if poi_type in mapping or poi_type in discard:
                    raise InputError(f"taxonomy file {path}:{lineno}: duplicate type {poi_type}")
                if category == DISCARD:
                    discard.add(poi_type)
                elif category in CATEGORY_INDEX:
                    mapping[poi_type] = category
                else:
                    raise InputError(
                        f"taxonomy file {path}:{lineno}: unknown category {category}"
                    )
        return cls(mapping, frozenset(discard))

    def to_csv(self, path: str) -> None:
        from .reports import write_csv

        rows = [(t, c) for t, c in sorted(self.mapping.items())]
        rows.extend((t, DISCARD) for t in sorted(self.discard))
        write_csv(path, ["poi_type", "category"], rows)

    def categorize(self, poi_type: str) -> str | None:
        """Category for a POI type, or None when discarded/unknown."""
        return self.mapping.get(poi_type)

    def is_discarded(self, poi_type: str) -> bool:
        return poi_type in self.discard


@dataclass(frozen=True)
class PoiRecord:
    poi_id: str
    lon: float
    lat: float
    poi_type: str


@dataclass
class ActivityVector:
    """TF-IDF weights over the activity categories for one grid cell."""

    cell_id: int
    weights: np.ndarray  # shape (N_CATEGORIES,), non-negative, not all zero


def parse_pois(path: str, taxonomy: Taxonomy) -> tuple[list[PoiRecord], ParseReport]:
    """Parse a POI CSV (header id,lon,lat,poi_type) against a taxonomy.

    Rows whose type is discarded or unknown are skipped and counted;
    malformed rows are skipped and reported. Accepted records keep file
    order.
    """
    report = ParseReport(label=path)
    records: list[PoiRecord] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read POI file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "lon", "lat", "poi_type"]:
            raise InputError(f"POI file {path}: expected header id,lon,lat,poi_type")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 4:
                report.malformed += 1
                report.note(f"line {lineno}: expected 4 fields, got {len(row)}")
                continue
            poi_id, poi_type = row[0].strip(), row[3].strip()
            try:
                lon, lat = float(row[1]), float(row[2])
                _check_lonlat(lon, lat)
            except (ValueError, InputError):
                report.malformed += 1
                report.note(f"line {lineno}: bad coordinates")
                continue
            if not poi_type:
                report.malformed += 1
                report.note(f"line {lineno}: empty poi_type")
                continue
            if taxonomy.categorize(poi_type) is None:
                report.discarded += 1
                if not taxonomy.is_discarded(poi_type):
                    report.note(f"line {lineno}: unknown poi_type {poi_type!r}")
                continue
            records.append(PoiRecord(poi_id, lon, lat, poi_type))
            report.accepted += 1
    return records, report


def populate_grid(
    pois: Sequence[PoiRecord],
    grid: Grid,
    taxonomy: Taxonomy,
    proj: EquirectangularProjection,
) -> tuple[np.ndarray, int]:
    """Raw (cell x category) POI counts plus the number of out-of-grid POIs.

    Points on a shared cell edge go to the cell whose half-open bounds
    contain them, so every in-grid POI lands in exactly one cell.
    """
    counts = np.zeros((grid.n_cells, N_CATEGORIES), dtype=np.int64)
    outside = 0
    for rec in pois:
        category = taxonomy.categorize(rec.poi_type)
        if category is None:
            raise InputError(f"POI {rec.poi_id}: type {rec.poi_type!r} not in taxonomy")
        cell = grid.locate(proj.to_plane(rec.lon, rec.lat))
        if cell is None:
            outside += 1
            continue
        counts[cell, CATEGORY_INDEX[category]] += 1
    return counts, outside


def tfidf(counts: np.ndarray) -> list[ActivityVector]:
    """TF-IDF activity vectors for every cell that ends up non-zero.

    tf(i,j) is the category share within the cell, idf(j) = ln(|L| / df_j)
    over the |L| non-empty cells. Cells whose weighted vector is all zero
    (no POIs, or a degenerate corpus where every category is ubiquitous)
    are dropped because they carry no profile.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[1] != N_CATEGORIES:
        raise InputError(f"counts must be (n_cells, {N_CATEGORIES})")
    if np.any(counts < 0):
        raise InputError("counts must be non-negative")
    row_sums = counts.sum(axis=1)
    nonempty = np.flatnonzero(row_sums > 0)
    if nonempty.size == 0:
        raise InputError("all cells empty: no activity to profile")

    tf = counts[nonempty] / row_sums[nonempty, None]
    df = (counts[nonempty] > 0).sum(axis=0)
    idf = np.zeros(N_CATEGORIES)
    present = df > 0
    idf[present] = np.log(nonempty.size / df[present])
    weights = tf * idf

    vectors = []
    for row, cell_id in enumerate(nonempty):
        w = weights[row]
        if np.any(w > 0):
            vectors.append(ActivityVector(cell_id=int(cell_id), weights=w.copy()))
    return vectors
