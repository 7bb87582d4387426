"""Planar geometry for the study area.

Everything downstream works in a local planar frame: lon/lat gets projected
once per run with an equirectangular mapping scaled at the study area's mean
latitude, and all polygon work (tower coverage cells, grid intersection
weights) happens in meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .errors import GeometryError, InputError

EARTH_RADIUS_M = 6_371_000.0

# Area below which a clipped polygon is treated as empty (square meters).
_MIN_AREA = 1e-9
# Distance below which two vertices are considered coincident (meters).
_VERTEX_EPS = 1e-9


class PlanarPoint(NamedTuple):
    """Point in the local planar frame, meters east/north of the origin."""

    x: float
    y: float


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, min/max corners in meters."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise GeometryError(f"empty rectangle: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, p: PlanarPoint) -> bool:
        return self.xmin <= p.x <= self.xmax and self.ymin <= p.y <= self.ymax

    def corners(self) -> list[PlanarPoint]:
        """Counter-clockwise corners starting at the min corner."""
        return [
            PlanarPoint(self.xmin, self.ymin),
            PlanarPoint(self.xmax, self.ymin),
            PlanarPoint(self.xmax, self.ymax),
            PlanarPoint(self.xmin, self.ymax),
        ]


@dataclass(frozen=True)
class EquirectangularProjection:
    """Fixed lon/lat to planar mapping for one run.

    x = R * (lon - lon0) * cos(lat_mean), y = R * (lat - lat0), angles in
    radians. Invertible by construction; at city scale (< 50 km) the
    distortion against true spherical distances is well below 0.5%.
    """

    origin_lon: float
    origin_lat: float
    lat_mean: float

    def __post_init__(self) -> None:
        _check_lonlat(self.origin_lon, self.origin_lat)
        if not -90.0 < self.lat_mean < 90.0:
            raise InputError(f"lat_mean out of range: {self.lat_mean}")

    @property
    def _cos_lat(self) -> float:
        return math.cos(math.radians(self.lat_mean))

    def to_plane(self, lon: float, lat: float) -> PlanarPoint:
        _check_lonlat(lon, lat)
        x = EARTH_RADIUS_M * math.radians(lon - self.origin_lon) * self._cos_lat
        y = EARTH_RADIUS_M * math.radians(lat - self.origin_lat)
        return PlanarPoint(x, y)

    def to_lonlat(self, x: float, y: float) -> tuple[float, float]:
        lon = self.origin_lon + math.degrees(x / (EARTH_RADIUS_M * self._cos_lat))
        lat = self.origin_lat + math.degrees(y / EARTH_RADIUS_M)
        return lon, lat


def _check_lonlat(lon: float, lat: float) -> None:
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise InputError(f"non-finite coordinates: lon={lon} lat={lat}")
    if not -180.0 <= lon <= 180.0:
        raise InputError(f"longitude out of range: {lon}")
    if not -90.0 < lat < 90.0:
        raise InputError(f"latitude out of range: {lat}")


class ConvexPolygon:
    """Convex polygon with counter-clockwise vertices and positive area."""

    __slots__ = ("vertices",)

    def __init__(self, vertices: Sequence[PlanarPoint]):
        verts = _dedupe_ring([PlanarPoint(float(p[0]), float(p[1])) for p in vertices])
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 distinct vertices")
        if _signed_area(verts) < 0:
            verts.reverse()
        if _signed_area(verts) <= _MIN_AREA:
            raise GeometryError("degenerate polygon (collinear or zero area)")
        if not _is_convex(verts):
            raise GeometryError("polygon is not convex")
        self.vertices: tuple[PlanarPoint, ...] = tuple(verts)

    @property
    def area(self) -> float:
        return _signed_area(list(self.vertices))

    def contains(self, p: PlanarPoint, tol: float = 1e-9) -> bool:
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            if (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < -tol:
                return False
        return True

    def bounds(self) -> Rect:
        xs = [v.x for v in self.vertices]
        ys = [v.y for v in self.vertices]
        return Rect(min(xs), min(ys), max(xs), max(ys))

    def __repr__(self) -> str:
        return f"ConvexPolygon({list(self.vertices)!r})"


def _dedupe_ring(verts: list[PlanarPoint]) -> list[PlanarPoint]:
    """Drop repeated consecutive vertices, including a wrap-around repeat."""
    out: list[PlanarPoint] = []
    for v in verts:
        if out and math.hypot(v.x - out[-1].x, v.y - out[-1].y) < _VERTEX_EPS:
            continue
        out.append(v)
    while len(out) >= 2 and math.hypot(out[0].x - out[-1].x, out[0].y - out[-1].y) < _VERTEX_EPS:
        out.pop()
    return out


def _signed_area(verts: list[PlanarPoint]) -> float:
    s = 0.0
    n = len(verts)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        s += a.x * b.y - b.x * a.y
    return 0.5 * s


def _is_convex(verts: list[PlanarPoint], tol: float = 1e-7) -> bool:
    # CCW ring: every cross product must be >= 0 (collinear runs allowed).
    n = len(verts)
    for i in range(n):
        a, b, c = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
        cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x)
        if cross < -tol * max(1.0, abs(b.x - a.x) + abs(b.y - a.y)):
            return False
    return True


def polygon_area(poly: ConvexPolygon) -> float:
    """Shoelace area in square meters, strictly positive for valid polygons."""
    area = poly.area
    if area <= _MIN_AREA:
        raise GeometryError("degenerate polygon")
    return area


def _clip_halfplane(
    verts: Sequence[PlanarPoint], px: float, py: float, nx: float, ny: float
) -> list[PlanarPoint]:
    """Sutherland-Hodgman step: keep the side where (P - p) . n >= 0."""
    out: list[PlanarPoint] = []
    n = len(verts)
    if n == 0:
        return out
    fs = [(v.x - px) * nx + (v.y - py) * ny for v in verts]
    for i in range(n):
        j = (i + 1) % n
        a, b = verts[i], verts[j]
        fa, fb = fs[i], fs[j]
        if fa >= 0.0:
            out.append(a)
            if fb < 0.0:
                t = fa / (fa - fb)
                out.append(PlanarPoint(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)))
        elif fb >= 0.0:
            t = fa / (fa - fb)
            out.append(PlanarPoint(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)))
    return out


def clip_intersection(poly: ConvexPolygon, rect: Rect) -> ConvexPolygon | None:
    """Intersection of a convex polygon with an axis-aligned rectangle.

    Returns None when the intersection is empty or degenerate (a shared edge
    or corner has zero area).
    """
    verts: list[PlanarPoint] = list(poly.vertices)
    verts = _clip_halfplane(verts, rect.xmin, 0.0, 1.0, 0.0)
    verts = _clip_halfplane(verts, rect.xmax, 0.0, -1.0, 0.0)
    verts = _clip_halfplane(verts, 0.0, rect.ymin, 0.0, 1.0)
    verts = _clip_halfplane(verts, 0.0, rect.ymax, 0.0, -1.0)
    verts = _dedupe_ring(verts)
    if len(verts) < 3 or abs(_signed_area(verts)) <= _MIN_AREA:
        return None
    return ConvexPolygon(verts)


def voronoi(sites: Sequence[PlanarPoint], bbox: Rect) -> list[ConvexPolygon]:
    """Voronoi cells of the sites, clipped to the bounding box.

    Each cell is the bbox intersected with all half-planes closer to its site
    than to any other site. O(n^2) half-plane clipping; fine at the tower
    counts this pipeline sees (hundreds to low thousands).
    """
    if len(sites) == 0:
        raise InputError("voronoi needs at least one site")
    pts = [PlanarPoint(float(s[0]), float(s[1])) for s in sites]
    for i, p in enumerate(pts):
        if not bbox.contains(p):
            raise InputError(f"site {i} at {p} lies outside the bounding box")
        for q in pts[i + 1 :]:
            if math.hypot(p.x - q.x, p.y - q.y) < _VERTEX_EPS:
                raise InputError(f"duplicate sites at {p}")

    cells: list[ConvexPolygon] = []
    box = bbox.corners()
    for i, s in enumerate(pts):
        verts: list[PlanarPoint] = list(box)
        for j, t in enumerate(pts):
            if i == j:
                continue
            # Keep the side of the bisector nearer to s: (P - m) . (s - t) >= 0.
            mx, my = 0.5 * (s.x + t.x), 0.5 * (s.y + t.y)
            verts = _clip_halfplane(verts, mx, my, s.x - t.x, s.y - t.y)
            if not verts:
                break
        verts = _dedupe_ring(verts)
        if len(verts) < 3 or abs(_signed_area(verts)) <= _MIN_AREA:
            raise GeometryError(f"degenerate Voronoi cell for site {i} at {s}")
        cells.append(ConvexPolygon(verts))
    return cells


@dataclass(frozen=True)
class Grid:
    """Square-cell tiling of the study area.

    Cells are half-open squares [x, x+side) x [y, y+side); cell ids run
    row-major from the min corner (id = iy * nx + ix).
    """

    x0: float
    y0: float
    side: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.side <= 0 or self.nx < 1 or self.ny < 1:
            raise InputError("grid needs positive side length and dimensions")

    @classmethod
    def from_bbox(cls, bbox: Rect, side: float) -> "Grid":
        nx = max(1, math.ceil(bbox.width / side - 1e-12))
        ny = max(1, math.ceil(bbox.height / side - 1e-12))
        return cls(bbox.xmin, bbox.ymin, side, nx, ny)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> Rect:
        return Rect(self.x0, self.y0, self.x0 + self.nx * self.side, self.y0 + self.ny * self.side)

    def cell_bounds(self, cell_id: int) -> Rect:
        if not 0 <= cell_id < self.n_cells:
            raise InputError(f"cell id {cell_id} out of range")
        iy, ix = divmod(cell_id, self.nx)
        x = self.x0 + ix * self.side
        y = self.y0 + iy * self.side
        return Rect(x, y, x + self.side, y + self.side)

    def locate(self, p: PlanarPoint) -> int | None:
        """Cell containing p under the half-open convention, None if outside."""
        ix = math.floor((p.x - self.x0) / self.side)
        iy = math.floor((p.y - self.y0) / self.side)
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            return iy * self.nx + ix
        return None


@dataclass(frozen=True)
class Tower:
    tower_id: str
    lon: float
    lat: float


@dataclass(frozen=True)
class TowerCoverage:
    """One tower's Voronoi cell plus its share of each overlapped grid cell."""

    tower_id: str
    site: PlanarPoint
    polygon: ConvexPolygon
    cell_weights: tuple[tuple[int, float], ...]


def intersection_weights(poly: ConvexPolygon, grid: Grid) -> list[tuple[int, float]]:
    """Share of the polygon's area falling in each grid cell.

    weight_i = area(cell_i ∩ polygon) / area(polygon). Only cells with a
    positive intersection are listed, ordered by cell id. When the grid
    covers the polygon completely the weights sum to 1 (within 1e-6).
    """
    area = polygon_area(poly)
    pb = poly.bounds()
    ix_lo = max(0, math.floor((pb.xmin - grid.x0) / grid.side))
    ix_hi = min(grid.nx - 1, math.floor((pb.xmax - grid.x0) / grid.side))
    iy_lo = max(0, math.floor((pb.ymin - grid.y0) / grid.side))
    iy_hi = min(grid.ny - 1, math.floor((pb.ymax - grid.y0) / grid.side))

    weights: list[tuple[int, float]] = []
    for iy in range(iy_lo, iy_hi + 1):
        for ix in range(ix_lo, ix_hi + 1):
            cell_id = iy * grid.nx + ix
            piece = clip_intersection(poly, grid.cell_bounds(cell_id))
            if piece is None:
                continue
            w = piece.area / area
            if w > 0.0:
                weights.append((cell_id, min(w, 1.0)))
    return weights


def tower_coverage(
    towers: Sequence[Tower], proj: EquirectangularProjection, bbox: Rect, grid: Grid
) -> list[TowerCoverage]:
    """Voronoi coverage polygons and grid-cell weights for every tower."""
    sites = [proj.to_plane(t.lon, t.lat) for t in towers]
    cells = voronoi(sites, bbox)
    out = []
    for t, site, poly in zip(towers, sites, cells):
        out.append(
            TowerCoverage(
                tower_id=t.tower_id,
                site=site,
                polygon=poly,
                cell_weights=tuple(intersection_weights(poly, grid)),
            )
        )
    return out


def read_towers(path: str) -> list[Tower]:
    """Read a towers CSV with header tower_id,lon,lat (decimal degrees)."""
    towers: list[Tower] = []
    seen: set[str] = set()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read towers file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tower_id", "lon", "lat"]:
            raise InputError(f"towers file {path}: expected header tower_id,lon,lat")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 3:
                raise InputError(f"towers file {path}:{lineno}: expected 3 fields")
            tower_id = row[0].strip()
            try:
                lon, lat = float(row[1]), float(row[2])
            except ValueError as exc:
                raise InputError(f"towers file {path}:{lineno}: bad coordinates") from exc
            if not tower_id:
                raise InputError(f"towers file {path}:{lineno}: empty tower id")
            if tower_id in seen:
                raise InputError(f"towers file {path}:{lineno}: duplicate tower id {tower_id}")
            seen.add(tower_id)
            _check_lonlat(lon, lat)
            towers.append(Tower(tower_id, lon, lat))
    if not towers:
        raise InputError(f"towers file {path}: no towers")
    return towers


def data_extent(lons: Iterable[float], lats: Iterable[float]) -> tuple[float, float, float, float]:
    """(lon_min, lat_min, lon_max, lat_max) over the given coordinates."""
    lons = list(lons)
    lats = list(lats)
    if not lons:
        raise InputError("no coordinates to compute an extent from")
    return min(lons), min(lats), max(lons), max(lats)
