"""
Rectangular-room image-source model (Allen & Berkley) for FOA impulse responses.

- one uniform, frequency-independent reflection coefficient for all six walls,
  solved from the target T60 with Sabine's formula (log form)
- every image contributes gain = beta^order / max(distance, 0.1 m), delayed
  by distance / c and rounded to the nearest sample
- the 4-channel spatial impulse response weights each image by the steering
  vector of its direction as seen from the microphone

Image positions along one axis, for integer n and parity p in {0, 1}:
    x' = (1 - 2p) * x + 2 n L,   reflections = |n - p| + |n|
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from doanet.ambisonics import encode_angles
from doanet.errors import ValidationError
from doanet.model import SAMPLE_RATE, SPEED_OF_SOUND, Direction, ImageSource, RoomSpec, Vector3

logger = logging.getLogger(__name__)

SABINE_CONSTANT = 0.161
MIN_IMAGE_DISTANCE = 0.1

# Training room and the two unmatched test rooms (80% and 60% T60).
ROOM_PRESETS: dict[int, RoomSpec] = {
    1: RoomSpec((10.0, 8.0, 4.0), (5.0, 4.0, 2.0), 0.5),
    2: RoomSpec((8.0, 8.0, 4.0), (4.0, 4.0, 2.0), 0.4),
    3: RoomSpec((8.0, 6.0, 4.0), (4.0, 3.0, 2.0), 0.3),
}


def room_preset(number: int) -> RoomSpec:
    try:
        return ROOM_PRESETS[number]
    except KeyError:
        raise ValidationError(f"Unknown room preset {number!r}; choose from {sorted(ROOM_PRESETS)}") from None


def sabine_absorption(room: RoomSpec) -> float:
    """
    Mean absorption coefficient for the target T60.

    Sabine's relation 0.161 V / (S T60) is solved in its log form,
    alpha = 1 - exp(-0.161 V / (S T60)), which is the decay rate an
    image-source response actually shows (one reflection every 4V / S m).
    """
    sabine = SABINE_CONSTANT * room.volume / (room.surface * room.target_t60)
    alpha = 1.0 - math.exp(-sabine)
    if not 0.0 < alpha < 1.0:
        raise ValidationError(
            f"T60 {room.target_t60} s is unreachable for a {room.dimensions} room (alpha={alpha:.3f})"
        )
    return alpha


def reflection_coefficient(room: RoomSpec) -> float:
    """Pressure reflection coefficient beta = sqrt(1 - alpha)."""
    return math.sqrt(1.0 - sabine_absorption(room))


@dataclass(frozen=True)
class ImageSourceSet:
    """
    Struct-of-arrays view of all image sources of one source.

    Iterating yields ImageSource objects; numeric work uses the arrays.
    """

    positions: np.ndarray  # (K, 3)
    orders: np.ndarray  # (K,)
    delays: np.ndarray  # (K,) seconds
    gains: np.ndarray  # (K,)
    azimuths: np.ndarray  # (K,) degrees
    elevations: np.ndarray  # (K,) degrees

    def __len__(self) -> int:
        return int(self.orders.shape[0])

    def __iter__(self) -> Iterator[ImageSource]:
        for k in range(len(self)):
            yield ImageSource(
                position=tuple(float(v) for v in self.positions[k]),  # type: ignore[arg-type]
                reflection_order=int(self.orders[k]),
                delay=float(self.delays[k]),
                gain=float(self.gains[k]),
                direction=Direction(float(self.azimuths[k]), float(self.elevations[k])),
            )


def _check_inside(room: RoomSpec, point: Vector3, what: str) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    dims = np.asarray(room.dimensions, dtype=np.float64)
    if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
        raise ValidationError(f"{what} {tuple(p)} is not inside room {room.dimensions}")
    return p


def compute_image_sources(
    room: RoomSpec,
    source: Vector3,
    max_time: Optional[float] = None,
    max_order: Optional[int] = None,
    beta: Optional[float] = None,
) -> ImageSourceSet:
    """
    All mirror images of `source` arriving within `max_time` seconds.

    Sorted by delay (ties by reflection order). `beta` overrides the
    Sabine-derived reflection coefficient; `max_order` caps reflections.
    """
    src = _check_inside(room, source, "Source")
    mic = np.asarray(room.microphone_position, dtype=np.float64)
    dims = np.asarray(room.dimensions, dtype=np.float64)
    t_max = room.image_time if max_time is None else float(max_time)
    coeff = reflection_coefficient(room) if beta is None else float(beta)

    reach = SPEED_OF_SOUND * t_max
    n_max = np.ceil(reach / (2.0 * dims)).astype(int) + 1
    if max_order is not None:
        n_max = np.minimum(n_max, max_order)

    axes_pos = []
    axes_ord = []
    for axis in range(3):
        n = np.arange(-n_max[axis], n_max[axis] + 1)
        pos = np.concatenate([src[axis] + 2 * n * dims[axis], -src[axis] + 2 * n * dims[axis]])
        order = np.concatenate([np.abs(n) + np.abs(n), np.abs(n - 1) + np.abs(n)])
        axes_pos.append(pos)
        axes_ord.append(order)

    px, py, pz = np.meshgrid(*axes_pos, indexing="ij")
    ox, oy, oz = np.meshgrid(*axes_ord, indexing="ij")
    positions = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)
    orders = (ox + oy + oz).ravel()

    rel = positions - mic
    dist = np.sqrt(np.sum(rel**2, axis=1))
    delays = dist / SPEED_OF_SOUND
    keep = delays <= t_max + 1e-12
    if max_order is not None:
        keep &= orders <= max_order
    positions, orders, rel, dist, delays = positions[keep], orders[keep], rel[keep], dist[keep], delays[keep]

    idx = np.lexsort((orders, delays))
    positions, orders, rel, dist, delays = positions[idx], orders[idx], rel[idx], dist[idx], delays[idx]

    gains = np.power(coeff, orders) / np.maximum(dist, MIN_IMAGE_DISTANCE)
    safe = np.maximum(dist, 1e-12)
    elevations = np.degrees(np.arcsin(np.clip(rel[:, 2] / safe, -1.0, 1.0)))
    azimuths = np.mod(np.degrees(np.arctan2(rel[:, 1], rel[:, 0])), 360.0)
    return ImageSourceSet(positions, orders.astype(int), delays, gains, azimuths, elevations)


def spatial_impulse_response(
    room: RoomSpec,
    source: Vector3,
    sample_rate: int = SAMPLE_RATE,
    max_time: Optional[float] = None,
    beta: Optional[float] = None,
    max_order: Optional[int] = None,
) -> np.ndarray:
    """
    (4, n) FOA impulse response: sum over images of gain * y(direction)
    at the image's delay rounded to the nearest sample.
    """
    images = compute_image_sources(room, source, max_time=max_time, max_order=max_order, beta=beta)
    t_max = room.image_time if max_time is None else float(max_time)
    n = int(round(t_max * sample_rate)) + 1
    taps = np.rint(images.delays * sample_rate).astype(np.int64)
    keep = taps < n
    taps = taps[keep]
    steering = encode_angles(images.azimuths[keep], images.elevations[keep])
    weights = images.gains[keep][:, None] * steering
    h = np.zeros((4, n))
    for c in range(4):
        h[c] = np.bincount(taps, weights=weights[:, c], minlength=n)
    return h


def schroeder_curve(impulse_response: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalized to 0 dB at t = 0."""
    energy = np.asarray(impulse_response, dtype=np.float64) ** 2
    tail = np.cumsum(energy[::-1])[::-1]
    if tail[0] <= 0:
        raise ValidationError("Impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(tail / tail[0])


def measure_t60(
    impulse_response: np.ndarray,
    sample_rate: int = SAMPLE_RATE,
    fit_range_db: tuple[float, float] = (-5.0, -25.0),
) -> float:
    """
    Reverberation time from a Schroeder decay curve.

    A straight line is fitted to the curve between the two levels in
    `fit_range_db` and extrapolated to -60 dB. Pass the omnidirectional
    (W) channel for FOA responses.
    """
    curve = schroeder_curve(impulse_response)
    hi, lo = fit_range_db
    idx = np.nonzero((curve <= hi) & (curve >= lo))[0]
    if idx.size < 2:
        raise ValidationError(f"Decay curve never spans {hi} to {lo} dB")
    t = idx / sample_rate
    slope, _ = np.polyfit(t, curve[idx], 1)
    if slope >= 0:
        raise ValidationError("Decay curve is not decreasing")
    return float(-60.0 / slope)
