"""
Exports for people rather than for the pipeline.

- PGM (binary P5) heatmaps of one SPS frame: azimuth left to right,
  elevation top (north pole row) to bottom (south pole row)
- per-frame peak / estimate CSVs
- plain-text evaluation report with a confusion matrix per row, rendered
  through rich without color so it is byte-stable
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from doanet.errors import ValidationError
from doanet.geometry import DirectionGrid
from doanet.metrics import EvalReport
from doanet.model import Direction
from doanet.storage import write_csv

REPORT_FIELDS = ["label", "frames", "doa_error_deg", "frame_recall_pct", "sps_snr_db"]
UNIFORM_GRAY = 128


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------


def _layout(grid: DirectionGrid) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Row and column of every grid position in the image."""
    rings = list(grid.ring_elevations)
    has_north = any(d.elevation_deg == 90.0 for d in grid)
    has_south = any(d.elevation_deg == -90.0 for d in grid)
    ring_rows = {el: i + int(has_north) for i, el in enumerate(sorted(rings, reverse=True))}
    height = len(rings) + int(has_north) + int(has_south)
    width = grid.n_azimuths
    rows = np.empty(len(grid), dtype=np.int64)
    cols = np.empty(len(grid), dtype=np.int64)
    for i, d in enumerate(grid):
        if d.elevation_deg == 90.0:
            rows[i], cols[i] = 0, -1
        elif d.elevation_deg == -90.0:
            rows[i], cols[i] = height - 1, -1
        else:
            rows[i] = ring_rows[d.elevation_deg]
            cols[i] = int(round(d.azimuth_deg / grid.resolution_deg)) % width
    return rows, cols, height, width


def sps_image(
    values: np.ndarray,
    grid: DirectionGrid,
    markers: Sequence[Direction] = (),
) -> np.ndarray:
    """
    uint8 (height, width) image of one SPS frame, min-max scaled.

    A constant frame renders uniform gray. Each marker direction gets a black
    plus around its cell; the cell itself keeps its value.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(grid),):
        raise ValidationError(f"SPS frame has shape {values.shape}, grid has {len(grid)} directions")
    rows, cols, height, width = _layout(grid)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)
    else:
        scaled = np.full(len(grid), UNIFORM_GRAY, dtype=np.uint8)

    image = np.zeros((height, width), dtype=np.uint8)
    for i in range(len(grid)):
        if cols[i] < 0:
            image[rows[i], :] = scaled[i]
        else:
            image[rows[i], cols[i]] = scaled[i]

    for d in markers:
        k = grid.nearest_index(d)
        r, c = int(rows[k]), int(cols[k])
        if c < 0:
            c = 0
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr = r + dr
            if 0 <= rr < height:
                image[rr, (c + dc) % width] = 0
    return image


def write_pgm(path: str | Path, image: np.ndarray) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    img = np.asarray(image, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    out.write_bytes(header + img.tobytes(order="C"))
    return out


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM file")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=width * height).reshape(height, width)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_direction_sets(
    path: str | Path, frames: Sequence[Sequence[Direction]], first_frame: int = 0
) -> Path:
    """One row per (frame, direction); frames without directions get no row."""
    rows = []
    for t, dirs in enumerate(frames, start=first_frame):
        for rank, d in enumerate(dirs):
            rows.append({
                "frame": t,
                "rank": rank,
                "azimuth_deg": f"{d.azimuth_deg:g}",
                "elevation_deg": f"{d.elevation_deg:g}",
            })
    return write_csv(path, ["frame", "rank", "azimuth_deg", "elevation_deg"], rows)


def write_report_csv(path: str | Path, reports: Sequence[EvalReport]) -> Path:
    return write_csv(path, REPORT_FIELDS, (r.as_row() for r in reports))


# ---------------------------------------------------------------------------
# Text report
# ---------------------------------------------------------------------------


def _fmt(value: Optional[float], digits: int = 2) -> str:
    return "undefined" if value is None else f"{value:.{digits}f}"


def summary_table(reports: Sequence[EvalReport], title: str = "DOA evaluation") -> Table:
    table = Table(title=title)
    table.add_column("Set", style="bold")
    table.add_column("Frames", justify="right")
    table.add_column("DOA error (deg)", justify="right")
    table.add_column("Correct frames (%)", justify="right")
    table.add_column("SPS SNR (dB)", justify="right")
    for r in reports:
        table.add_row(
            r.label,
            str(r.frames_evaluated),
            _fmt(r.doa_error_deg),
            f"{r.frame_recall_pct:.1f}",
            "-" if r.sps_snr_db is None else _fmt(r.sps_snr_db),
        )
    return table


def confusion_table(report: EvalReport) -> Table:
    n = report.confusion.shape[0]
    table = Table(title=f"{report.label}: true (rows) vs estimated (columns) DOA count")
    table.add_column("true")
    for j in range(n):
        table.add_column(f"{j}" if j < n - 1 else f"{j}+", justify="right")
    for i in range(n):
        table.add_row(f"{i}" if i < n - 1 else f"{i}+", *(str(int(v)) for v in report.confusion[i]))
    return table


def render_report(reports: Sequence[EvalReport], title: str = "DOA evaluation") -> str:
    buf = io.StringIO()
    console = Console(file=buf, width=100, color_system=None, force_terminal=False, record=False)
    console.print(summary_table(reports, title))
    for r in reports:
        console.print()
        console.print(confusion_table(r))
    return buf.getvalue()


def write_report(path: str | Path, reports: Sequence[EvalReport], title: str = "DOA evaluation") -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_report(reports, title), encoding="utf-8")
    return out
