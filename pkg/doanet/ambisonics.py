"""
First-order Ambisonic encoding (real, orthonormalized / N3D, ACN order).

    Y_00   = 1 / sqrt(4 pi)
    Y_1-1  = sqrt(3 / (4 pi)) * cos(el) * sin(az)
    Y_10   = sqrt(3 / (4 pi)) * sin(el)
    Y_11   = sqrt(3 / (4 pi)) * cos(el) * cos(az)

Elevation (not inclination) is the second angle everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from doanet.errors import ValidationError
from doanet.geometry import DirectionGrid, unit_vectors
from doanet.model import AmbisonicBuffer, Direction, SAMPLE_RATE

Y00 = 1.0 / math.sqrt(4.0 * math.pi)
Y1 = math.sqrt(3.0 / (4.0 * math.pi))

DEFAULT_MAX_DISTANCE = 10.0


def _encode_unit(vectors: np.ndarray) -> np.ndarray:
    # unit vector (x, y, z) -> [W, Y, Z, X]
    vectors = np.asarray(vectors, dtype=np.float64)
    w = np.full(vectors.shape[:-1] + (1,), Y00)
    return np.concatenate([w, Y1 * vectors[..., [1, 2, 0]]], axis=-1)


def encode_direction(direction: Direction) -> np.ndarray:
    """Steering vector [Y_00, Y_1(-1), Y_10, Y_11] for one direction."""
    return _encode_unit(direction.unit_vector())


def encode_angles(azimuth_deg: np.ndarray, elevation_deg: np.ndarray) -> np.ndarray:
    """(..., 4) steering vectors for arrays of angles in degrees."""
    return _encode_unit(unit_vectors(azimuth_deg, elevation_deg))


def steering_matrix(grid: DirectionGrid) -> np.ndarray:
    """(len(grid), 4) steering vectors in grid order."""
    return _encode_unit(grid.unit_vectors)


def distance_gain(distance: float, max_distance: float = DEFAULT_MAX_DISTANCE) -> float:
    """
    Distance attenuation g = sqrt(1 / 10^(d / d_max)) = 10^(-d / (2 d_max)).
    """
    if max_distance <= 0:
        raise ValidationError(f"max_distance must be > 0, got {max_distance!r}")
    if distance < 0 or distance > max_distance:
        raise ValidationError(f"Distance {distance!r} outside [0, {max_distance!r}] m")
    return float(10.0 ** (-distance / (2.0 * max_distance)))


def spatialize(
    signal: np.ndarray,
    direction: Direction,
    gain: float = 1.0,
    sample_rate: int = SAMPLE_RATE,
) -> AmbisonicBuffer:
    """
    Encode a mono signal as a plane wave: channel c = gain * signal * y_c.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValidationError(f"spatialize expects a mono signal, got shape {signal.shape}")
    coeffs = gain * encode_direction(direction)
    return AmbisonicBuffer(coeffs[:, None] * signal[None, :], sample_rate)
