"""
Direction grids and spherical distance.

Two grids share one lattice:
- SPS grid: every azimuth x every interior elevation ring, plus the two poles
  (614 directions at 10 degrees)
- DOA grid: the elevation band used for network DOA nodes
  (432 directions at 10 degrees, elevations -60..50 by default)

Ordering is elevation-major ascending, azimuth ascending. The south pole
comes first and the north pole last. Network output node k binds to
grid.directions[k], so this ordering must never change.
"""

from __future__ import annotations

import math
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from doanet.errors import ValidationError
from doanet.model import Direction

SPS = "SPS"
DOA = "DOA"

DEFAULT_RESOLUTION = 10.0
DEFAULT_DOA_ELEVATIONS = (-60.0, 50.0)


def _lattice_count(resolution_deg: float, span: float) -> int:
    """
    Number of resolution steps in `span` degrees; the resolution must divide it.
    """
    if not resolution_deg > 0:
        raise ValidationError(f"Resolution must be positive, got {resolution_deg!r}")
    steps = span / resolution_deg
    n = int(round(steps))
    if n < 1 or abs(n - steps) > 1e-9:
        raise ValidationError(f"Resolution {resolution_deg!r} does not divide {span:g} degrees")
    return n


def _key(azimuth_deg: float, elevation_deg: float) -> tuple[float, float]:
    return (round(azimuth_deg % 360.0, 6) % 360.0, round(elevation_deg, 6))


class DirectionGrid:
    """
    Immutable ordered set of directions on a regular azimuth/elevation lattice.

    Rings are the constant-elevation rows (excluding the poles). Positions
    inside a ring run over all azimuths 0, res, ..., 360 - res.
    """

    def __init__(
        self,
        resolution_deg: float,
        kind: str,
        ring_elevations: Sequence[float],
        south_pole: bool,
        north_pole: bool,
    ) -> None:
        self.resolution_deg = float(resolution_deg)
        self.kind = kind
        self.n_azimuths = _lattice_count(self.resolution_deg, 360.0)
        self.ring_elevations = tuple(float(e) for e in ring_elevations)

        directions: list[Direction] = []
        self._south: Optional[int] = None
        self._north: Optional[int] = None
        if south_pole:
            self._south = 0
            directions.append(Direction(0.0, -90.0))
        self._ring_start: list[int] = []
        for el in self.ring_elevations:
            self._ring_start.append(len(directions))
            for a in range(self.n_azimuths):
                directions.append(Direction(a * self.resolution_deg, el))
        if north_pole:
            self._north = len(directions)
            directions.append(Direction(0.0, 90.0))

        self.directions: tuple[Direction, ...] = tuple(directions)
        self._index = {_key(d.azimuth_deg, d.elevation_deg): i for i, d in enumerate(directions)}

    # -----------------------------------------------------------------------
    # Container protocol
    # -----------------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.directions)

    def __getitem__(self, index: int) -> Direction:
        return self.directions[index]

    def __iter__(self):  # type: ignore[no-untyped-def]
        return iter(self.directions)

    def __contains__(self, direction: object) -> bool:
        if not isinstance(direction, Direction):
            return False
        return _key(direction.azimuth_deg, direction.elevation_deg) in self._index

    def __repr__(self) -> str:
        return f"DirectionGrid(kind={self.kind}, resolution={self.resolution_deg:g}, n={len(self)})"

    def index_of(self, direction: Direction) -> int:
        """Position of a direction; raises ValidationError if it is not on the grid."""
        try:
            return self._index[_key(direction.azimuth_deg, direction.elevation_deg)]
        except KeyError:
            raise ValidationError(f"Direction {direction} is not on the {self.kind} grid") from None

    def nearest_index(self, direction: Direction) -> int:
        """Position of the grid direction with the smallest central angle."""
        cos = self.unit_vectors @ direction.unit_vector()
        return int(np.argmax(cos))

    def is_subset_of(self, other: "DirectionGrid") -> bool:
        return all(d in other for d in self.directions)

    # -----------------------------------------------------------------------
    # Cached array views
    # -----------------------------------------------------------------------

    @cached_property
    def azimuths(self) -> np.ndarray:
        return np.array([d.azimuth_deg for d in self.directions])

    @cached_property
    def elevations(self) -> np.ndarray:
        return np.array([d.elevation_deg for d in self.directions])

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        """(n, 3) Cartesian unit vectors in grid order."""
        return unit_vectors(self.azimuths, self.elevations)

    @cached_property
    def neighbor_table(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(self._neighbors(i)) for i in range(len(self)))

    @cached_property
    def neighbor_matrix(self) -> np.ndarray:
        """
        (n, k_max) neighbor positions padded with -1, for vectorized peak tests.
        """
        k_max = max((len(n) for n in self.neighbor_table), default=0)
        out = np.full((len(self), max(k_max, 1)), -1, dtype=np.int64)
        for i, nbrs in enumerate(self.neighbor_table):
            out[i, : len(nbrs)] = nbrs
        return out

    # -----------------------------------------------------------------------
    # Adjacency
    # -----------------------------------------------------------------------

    def _ring_members(self, ring: int) -> range:
        start = self._ring_start[ring]
        return range(start, start + self.n_azimuths)

    def _neighbors(self, index: int) -> list[int]:
        n_rings = len(self.ring_elevations)
        out: list[int] = []

        if index in (self._south, self._north):
            if n_rings == 0:
                other = self._north if index == self._south else self._south
                return [] if other is None else [other]
            ring = 0 if index == self._south else n_rings - 1
            return list(self._ring_members(ring))

        offset = 0 if self._south is None else 1
        ring, az = divmod(index - offset, self.n_azimuths)
        for dr in (-1, 0, 1):
            rr = ring + dr
            if rr < 0:
                if self._south is not None:
                    out.append(self._south)
                continue
            if rr >= n_rings:
                if self._north is not None:
                    out.append(self._north)
                continue
            for da in (-1, 0, 1):
                if dr == 0 and da == 0:
                    continue
                out.append(self._ring_start[rr] + (az + da) % self.n_azimuths)

        seen: dict[int, None] = {}
        for pos in out:
            if pos != index:
                seen.setdefault(pos, None)
        return list(seen)


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------


def build_sps_grid(resolution_deg: float = DEFAULT_RESOLUTION) -> DirectionGrid:
    """
    Full-sphere grid: azimuths {0..360-res} x elevations {-90+res..90-res} + 2 poles.

    Count = (360/res) * (180/res - 1) + 2, e.g. 614 at 10 degrees.
    """
    _lattice_count(resolution_deg, 360.0)
    n_el = _lattice_count(resolution_deg, 180.0)
    rings = [-90.0 + k * resolution_deg for k in range(1, n_el)]
    return DirectionGrid(resolution_deg, SPS, rings, south_pole=True, north_pole=True)


def build_doa_grid(
    resolution_deg: float = DEFAULT_RESOLUTION,
    elevation_range: tuple[float, float] = DEFAULT_DOA_ELEVATIONS,
) -> DirectionGrid:
    """
    Elevation-limited grid used for DOA output nodes.

    The default band -60..50 (inclusive) gives 36 x 12 = 432 directions at
    10 degrees. Band edges must lie on the lattice strictly between the poles.
    """
    _lattice_count(resolution_deg, 360.0)
    _lattice_count(resolution_deg, 180.0)
    lo, hi = (float(e) for e in elevation_range)
    if lo > hi:
        raise ValidationError(f"Elevation range is reversed: {elevation_range!r}")
    if lo <= -90.0 or hi >= 90.0:
        raise ValidationError(f"DOA elevation range must exclude the poles: {elevation_range!r}")
    for edge in (lo, hi):
        steps = (edge + 90.0) / resolution_deg
        if abs(steps - round(steps)) > 1e-9:
            raise ValidationError(f"Elevation {edge:g} is not on the {resolution_deg:g} degree lattice")
    n = int(round((hi - lo) / resolution_deg)) + 1
    rings = [lo + k * resolution_deg for k in range(n)]
    return DirectionGrid(resolution_deg, DOA, rings, south_pole=False, north_pole=False)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def unit_vectors(azimuth_deg: np.ndarray, elevation_deg: np.ndarray) -> np.ndarray:
    """(..., 3) unit vectors for arrays of azimuth/elevation in degrees."""
    az = np.radians(np.asarray(azimuth_deg, dtype=np.float64))
    el = np.radians(np.asarray(elevation_deg, dtype=np.float64))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def angular_distance(a: Direction, b: Direction) -> float:
    """
    Great-circle central angle in degrees, in [0, 180].

    atan2(|a x b|, a . b) is exactly 0 for identical directions.
    """
    va, vb = a.unit_vector(), b.unit_vector()
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(va, vb))), float(np.dot(va, vb))))


def angular_distance_matrix(a: Iterable[Direction], b: Iterable[Direction]) -> np.ndarray:
    """(len(a), len(b)) matrix of central angles in degrees."""
    va = np.array([d.unit_vector() for d in a]).reshape(-1, 3)
    vb = np.array([d.unit_vector() for d in b]).reshape(-1, 3)
    cross = np.linalg.norm(np.cross(va[:, None, :], vb[None, :, :]), axis=-1)
    return np.degrees(np.arctan2(cross, va @ vb.T))


def grid_neighbors(grid: DirectionGrid, index: int) -> list[int]:
    """
    Positions adjacent to `index` in azimuth/elevation.

    Azimuth wraps modulo 360; a pole neighbors its whole adjacent ring.
    """
    if not 0 <= index < len(grid):
        raise ValidationError(f"Grid index {index} out of range [0, {len(grid)})")
    return list(grid.neighbor_table[index])
