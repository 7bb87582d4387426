"""Row-level parse accounting and deterministic artifact writers.

All output files are byte-deterministic: fixed field order, repr floats,
LF line endings, no timestamps. Re-running a stage with identical inputs
reproduces identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

_MAX_MESSAGES = 50


@dataclass
class ParseReport:
    """Counts of accepted / discarded / malformed rows for one input file."""

    label: str
    accepted: int = 0
    discarded: int = 0
    malformed: int = 0
    messages: list[str] = field(default_factory=list)

    def note(self, message: str) -> None:
        if len(self.messages) < _MAX_MESSAGES:
            self.messages.append(message)

    def lines(self) -> list[str]:
        out = [
            f"source={self.label}",
            f"accepted={self.accepted}",
            f"discarded={self.discarded}",
            f"malformed={self.malformed}",
        ]
        out.extend(self.messages)
        return out


def write_lines(path: str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_keyvalues(path: str, items: Mapping[str, Any]) -> None:
    write_lines(path, [f"{k}={v}" for k, v in items.items()])


def write_geojson(path: str, obj: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def cell_feature_collection(grid, proj, assignment: Mapping[int, int]) -> dict:
    """GeoJSON FeatureCollection of clustered grid cells (RFC 7946).

    Each feature is the cell square back-projected to lon/lat with its
    cluster label in properties. Only cells with an assignment appear.
    """
    features = []
    for cell_id in sorted(assignment):
        b = grid.cell_bounds(cell_id)
        ring = [
            proj.to_lonlat(b.xmin, b.ymin),
            proj.to_lonlat(b.xmax, b.ymin),
            proj.to_lonlat(b.xmax, b.ymax),
            proj.to_lonlat(b.xmin, b.ymax),
            proj.to_lonlat(b.xmin, b.ymin),
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[round(lon, 9), round(lat, 9)] for lon, lat in ring]],
                },
                "properties": {"cell_id": cell_id, "cluster": int(assignment[cell_id])},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def profile_chart_svg(
    title: str,
    means: Sequence[float],
    lows: Sequence[float],
    highs: Sequence[float],
) -> str:
    """Minimal line chart of a temporal profile with its envelope band.

    NaN slots (insufficient data) break the polyline. Output is plain SVG
    with fixed 2-decimal coordinates so charts diff cleanly.
    """
    width, height, pad = 840, 240, 30
    n = len(means)
    finite = [v for seq in (means, lows, highs) for v in seq if v == v]
    vmax = max(finite) if finite else 1.0
    vmax = vmax if vmax > 0 else 1.0

    def sx(i: int) -> float:
        return pad + (width - 2 * pad) * (i / max(1, n - 1))

    def sy(v: float) -> float:
        return height - pad - (height - 2 * pad) * (v / vmax)

    def path_of(values: Sequence[float]) -> str:
        parts = []
        pen_up = True
        for i, v in enumerate(values):
            if v != v:  # NaN
                pen_up = True
                continue
            cmd = "M" if pen_up else "L"
            parts.append(f"{cmd}{sx(i):.2f},{sy(v):.2f}")
            pen_up = False
        return " ".join(parts)

    band_points = []
    for i, v in enumerate(highs):
        if v == v:
            band_points.append(f"{sx(i):.2f},{sy(v):.2f}")
    for i in range(n - 1, -1, -1):
        v = lows[i]
        if v == v:
            band_points.append(f"{sx(i):.2f},{sy(v):.2f}")

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="18" font-family="monospace" font-size="12">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
         'stroke="black" stroke-width="1"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        'stroke="black" stroke-width="1"/>',
        f'<text x="4" y="{pad}" font-family="monospace" font-size="10">{vmax:.1f}</text>',
    ]
    if band_points:
        lines.append(f'<polygon points="{" ".join(band_points)}" fill="#c6dbef" stroke="none"/>')
    mean_path = path_of(means)
    if mean_path:
        lines.append(f'<path d="{mean_path}" fill="none" stroke="#08519c" stroke-width="1.5"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
