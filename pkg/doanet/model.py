"""
Central data model definitions used across the project.

This module defines the canonical value types so that:
- all modules share the same field names and units (degrees, meters, seconds)
- scene synthesis, feature extraction, MUSIC and the network agree on one layout

Channel order for every 4-channel buffer is ACN: W, Y, Z, X
(= Y_00, Y_1(-1), Y_10, Y_11).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from doanet.errors import ValidationError

SAMPLE_RATE = 44100
SPEED_OF_SOUND = 343.0
CHANNEL_NAMES = ("W", "Y", "Z", "X")

Vector3 = tuple[float, float, float]


@dataclass(frozen=True)
class Direction:
    """
    A direction of arrival in degrees.

    Azimuth is normalized into [0, 360); elevation must lie in [-90, 90]
    (out-of-range elevation is an error, never clamped). Both poles use
    azimuth 0 so that each pole has exactly one representation.
    """

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self) -> None:
        el = float(self.elevation_deg)
        az = float(self.azimuth_deg)
        if not (math.isfinite(el) and math.isfinite(az)):
            raise ValidationError(f"Direction must be finite, got ({az!r}, {el!r})")
        if el < -90.0 or el > 90.0:
            raise ValidationError(f"Elevation out of range [-90, 90]: {el!r}")
        az = az % 360.0
        # float modulo of tiny negatives lands on 360.0
        if az >= 360.0:
            az = 0.0
        if abs(el) == 90.0:
            az = 0.0
        object.__setattr__(self, "azimuth_deg", az + 0.0)
        object.__setattr__(self, "elevation_deg", el + 0.0)

    def unit_vector(self) -> np.ndarray:
        """Cartesian unit vector (x front, y left, z up)."""
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "Direction":
        """Direction of a nonzero 3-D vector."""
        x, y, z = (float(v) for v in vec)
        norm = math.sqrt(x * x + y * y + z * z)
        if norm == 0.0:
            raise ValidationError("Cannot take the direction of a zero vector")
        el = math.degrees(math.asin(max(-1.0, min(1.0, z / norm))))
        az = math.degrees(math.atan2(y, x))
        return cls(az, el)

    def __str__(self) -> str:
        return f"({self.azimuth_deg:g}, {self.elevation_deg:g})"


@dataclass
class AmbisonicBuffer:
    """
    4-channel first-order Ambisonic recording.

    channels has shape (4, length) in ACN order W, Y, Z, X.
    """

    channels: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != 4:
            raise ValidationError(
                f"AmbisonicBuffer needs shape (4, n), got {self.channels.shape}"
            )
        if not np.all(np.isfinite(self.channels)):
            raise ValidationError("AmbisonicBuffer contains non-finite samples")

    @property
    def length(self) -> int:
        return int(self.channels.shape[1])

    @classmethod
    def silent(cls, length: int, sample_rate: int = SAMPLE_RATE) -> "AmbisonicBuffer":
        return cls(np.zeros((4, int(length))), sample_rate)

    def add_at(self, other: "AmbisonicBuffer", offset: int) -> None:
        """
        Mix another buffer into this one starting at sample `offset`.

        Samples falling past the end of this buffer are dropped.
        """
        if other.sample_rate != self.sample_rate:
            raise ValidationError(
                f"Sample rate mismatch: {other.sample_rate} vs {self.sample_rate}"
            )
        if offset < 0:
            raise ValidationError(f"Negative mix offset: {offset}")
        n = min(other.length, self.length - offset)
        if n > 0:
            self.channels[:, offset : offset + n] += other.channels[:, :n]

    def __add__(self, other: "AmbisonicBuffer") -> "AmbisonicBuffer":
        out = AmbisonicBuffer.silent(max(self.length, other.length), self.sample_rate)
        out.add_at(self, 0)
        out.add_at(other, 0)
        return out


@dataclass(frozen=True)
class RoomSpec:
    """
    Rectangular room with one microphone.

    max_image_time defaults to 2 * target_t60 when left as None.
    """

    dimensions: Vector3
    microphone_position: Vector3
    target_t60: float
    max_image_time: Optional[float] = None

    def __post_init__(self) -> None:
        if self.target_t60 <= 0:
            raise ValidationError(f"target_t60 must be > 0, got {self.target_t60}")
        for axis, (size, mic) in enumerate(zip(self.dimensions, self.microphone_position)):
            if size <= 0:
                raise ValidationError(f"Room dimension {axis} must be > 0, got {size}")
            if not 0.0 < mic < size:
                raise ValidationError(
                    f"Microphone must be strictly inside the room (axis {axis}: {mic} of {size})"
                )
        if self.max_image_time is not None and self.max_image_time <= 0:
            raise ValidationError(f"max_image_time must be > 0, got {self.max_image_time}")

    @property
    def image_time(self) -> float:
        return self.max_image_time if self.max_image_time is not None else 2.0 * self.target_t60

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)


@dataclass(frozen=True)
class SoundEvent:
    """
    One corpus example placed in a scene.

    Anechoic events carry a distance; reverberant events carry a 3-D source
    position (and the distance from the microphone for reference).
    """

    event_id: int
    example_id: str
    class_name: str
    onset: float
    duration: float
    direction: Direction
    distance: Optional[float] = None
    source_position: Optional[Vector3] = None

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class SceneSpec:
    """
    Everything needed to render one recording deterministically.
    """

    context: str
    max_overlap: int
    length: float
    sample_rate: int
    events: tuple[SoundEvent, ...]
    rng_seed: int
    room: Optional[RoomSpec] = None

    def __post_init__(self) -> None:
        if self.context not in ("anechoic", "reverberant"):
            raise ValidationError(f"Unknown scene context: {self.context!r}")
        if self.max_overlap not in (1, 2, 3):
            raise ValidationError(f"max_overlap must be 1, 2 or 3, got {self.max_overlap}")
        if self.context == "reverberant" and self.room is None:
            raise ValidationError("Reverberant scene needs a room")

    @property
    def n_samples(self) -> int:
        return int(round(self.length * self.sample_rate))


@dataclass(frozen=True)
class ImageSource:
    """One mirror image of a source (order 0 = direct path)."""

    position: Vector3
    reflection_order: int
    delay: float
    gain: float
    direction: Direction


@dataclass(frozen=True)
class DoaFrameEstimate:
    """Set of DOAs reported for one feature frame (possibly empty)."""

    frame: int
    directions: tuple[Direction, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(set(self.directions)) != len(self.directions):
            raise ValidationError(f"Duplicate directions in frame {self.frame}")
