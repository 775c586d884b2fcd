"""
MUSIC spatial pseudo-spectrum.

Per frame:
1. C = mean over all 1024 bins and frames t-h..t+h (clipped) of X X^H
2. C = E diag(lambda) E^H with a cyclic complex Jacobi eigensolver
3. U_n = eigenvectors O+1..4 (eigenvalues sorted descending)
4. S(d) = 1 / max(y(d)^T U_n U_n^H y(d), 1e-9) over the grid

Steering vectors are real, so the quadratic form is real up to rounding;
the imaginary residue is dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from doanet.ambisonics import steering_matrix
from doanet.errors import ValidationError
from doanet.features import ComplexSpectrogram
from doanet.geometry import DirectionGrid, build_sps_grid
from doanet.model import Direction

logger = logging.getLogger(__name__)

DEFAULT_HALF_WINDOW = 2
DENOMINATOR_FLOOR = 1e-9
JACOBI_TOLERANCE = 1e-12
MAX_SWEEPS = 100
HERMITIAN_TOLERANCE = 1e-9
ORACLE_WIDTH_DEG = 10.0


@dataclass(frozen=True)
class SpatialCovariance:
    matrix: np.ndarray
    frame_index: int
    half_window: int
    frames_used: int


@dataclass(frozen=True)
class EigenDecomposition:
    """eigenvalues descending; eigenvectors are the columns of E."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        e = self.eigenvectors
        return (e * self.eigenvalues[None, :]) @ e.conj().T


@dataclass(frozen=True)
class PseudoSpectrum:
    """values has shape (frames, len(grid)), nonnegative."""

    grid: DirectionGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.grid):
            raise ValidationError(
                f"Pseudo-spectrum shape {self.values.shape} does not match a "
                f"{len(self.grid)}-direction grid"
            )

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------


def _bin_averaged(values: np.ndarray) -> np.ndarray:
    # (T, F, C) -> (T, C, C), mean over bins
    return np.einsum("tfi,tfj->tij", values, values.conj()) / values.shape[1]


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2).conj())


def frame_covariance(
    spec: ComplexSpectrogram, t: int, half_window: int = DEFAULT_HALF_WINDOW
) -> SpatialCovariance:
    if not 0 <= t < spec.n_frames:
        raise ValidationError(f"Frame {t} out of range [0, {spec.n_frames})")
    if half_window < 0:
        raise ValidationError(f"half_window must be >= 0, got {half_window}")
    lo = max(0, t - half_window)
    hi = min(spec.n_frames, t + half_window + 1)
    per_frame = _bin_averaged(spec.values[lo:hi])
    return SpatialCovariance(_symmetrize(per_frame.mean(axis=0)), t, half_window, hi - lo)


def covariance_sequence(
    spec: ComplexSpectrogram, half_window: int = DEFAULT_HALF_WINDOW
) -> np.ndarray:
    """
    (T, C, C) covariances for every frame; same values as frame_covariance.
    """
    if half_window < 0:
        raise ValidationError(f"half_window must be >= 0, got {half_window}")
    per_frame = _bin_averaged(spec.values)
    n = per_frame.shape[0]
    csum = np.concatenate([np.zeros((1,) + per_frame.shape[1:], dtype=per_frame.dtype), np.cumsum(per_frame, axis=0)])
    t = np.arange(n)
    lo = np.maximum(0, t - half_window)
    hi = np.minimum(n, t + half_window + 1)
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None, None]
    return _symmetrize(out)


# ---------------------------------------------------------------------------
# Eigendecomposition
# ---------------------------------------------------------------------------


def _off_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2) - np.sum(np.abs(np.diag(a)) ** 2)).real)


def eig_hermitian(matrix: np.ndarray) -> EigenDecomposition:
    """
    Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi rotations.

    Each rotation first removes the phase of a_pq, then applies the real
    symmetric Jacobi rotation that zeroes it. Sweeps stop once the
    off-diagonal Frobenius norm drops below 1e-12 * max(|trace|, ||C||_F).
    """
    a = np.array(matrix, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"eig_hermitian needs a square matrix, got {a.shape}")
    n = a.shape[0]
    norm = float(np.linalg.norm(a))
    asym = float(np.linalg.norm(a - a.conj().T))
    if not np.isfinite(norm) or asym > HERMITIAN_TOLERANCE * max(norm, 1.0):
        raise ValidationError(f"Matrix is not Hermitian (asymmetry {asym:.3g})")
    a = _symmetrize(a)

    scale = max(abs(float(np.trace(a).real)), norm)
    eps = JACOBI_TOLERANCE * scale
    e = np.eye(n, dtype=np.complex128)
    sweeps = 0
    while sweeps < MAX_SWEEPS:
        off = _off_norm(a)
        if off == 0.0 or off < eps:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r == 0.0:
                    continue
                phase = apq / r
                theta = (a[q, q].real - a[p, p].real) / (2.0 * r)
                sign = 1.0 if theta >= 0 else -1.0
                tan = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(1.0 + tan * tan)
                s = tan * c
                g = np.array([[c, s], [-s * phase.conjugate(), c * phase.conjugate()]])
                cols = [p, q]
                a[:, cols] = a[:, cols] @ g
                a[cols, :] = g.conj().T @ a[cols, :]
                e[:, cols] = e[:, cols] @ g
                a[p, q] = a[q, p] = 0.0
    else:
        logger.warning("Jacobi eigensolver hit %d sweeps (off-diagonal %.3g)", MAX_SWEEPS, _off_norm(a))

    values = np.diag(a).real.copy()
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values[order], e[:, order], sweeps)


# ---------------------------------------------------------------------------
# Pseudo-spectrum
# ---------------------------------------------------------------------------


def _check_order(n_sources: int, n_channels: int = 4) -> None:
    if not 0 <= n_sources < n_channels:
        raise ValidationError(
            f"MUSIC source count must be in [0, {n_channels - 1}], got {n_sources}"
        )


def _sps_from_noise_subspace(noise: np.ndarray, steering: np.ndarray) -> np.ndarray:
    # noise (..., C, K), steering (D, C) -> (..., D)
    proj = np.einsum("dc,...ck->...dk", steering, noise)
    denom = np.sum(np.abs(proj) ** 2, axis=-1)
    return 1.0 / np.maximum(denom, DENOMINATOR_FLOOR)


def music_sps(decomp: EigenDecomposition, n_sources: int, grid: DirectionGrid) -> np.ndarray:
    """SPS over `grid` for one frame given its eigendecomposition."""
    _check_order(n_sources, decomp.eigenvectors.shape[0])
    noise = decomp.eigenvectors[:, n_sources:]
    return _sps_from_noise_subspace(noise, steering_matrix(grid))


def music_sps_sequence(
    covariances: np.ndarray,
    source_counts: Sequence[int] | np.ndarray,
    grid: Optional[DirectionGrid] = None,
) -> PseudoSpectrum:
    """
    Frame-by-frame MUSIC over (T, C, C) covariances.

    Frames with zero active sources use one source against the noise field.
    """
    grid = grid if grid is not None else build_sps_grid()
    counts = np.asarray(source_counts, dtype=np.int64)
    if counts.shape != (covariances.shape[0],):
        raise ValidationError(
            f"Need one source count per frame: {counts.shape} vs {covariances.shape[0]} frames"
        )
    steering = steering_matrix(grid)
    values = np.empty((covariances.shape[0], len(grid)))
    for t in range(covariances.shape[0]):
        o = max(1, int(counts[t]))
        _check_order(o, covariances.shape[1])
        decomp = eig_hermitian(covariances[t])
        values[t] = _sps_from_noise_subspace(decomp.eigenvectors[:, o:], steering)
    return PseudoSpectrum(grid, values)


def compute_music_sps(
    spec: ComplexSpectrogram,
    source_counts: Sequence[int] | np.ndarray,
    grid: Optional[DirectionGrid] = None,
    half_window: int = DEFAULT_HALF_WINDOW,
) -> PseudoSpectrum:
    return music_sps_sequence(covariance_sequence(spec, half_window), source_counts, grid)


def oracle_sps(
    frames: Sequence[Sequence[Direction]],
    grid: Optional[DirectionGrid] = None,
    width_deg: float = ORACLE_WIDTH_DEG,
) -> PseudoSpectrum:
    """Sum of Gaussian bumps exp(-angle^2 / (2 w^2)) around each active DOA."""
    grid = grid if grid is not None else build_sps_grid()
    if width_deg <= 0:
        raise ValidationError(f"Oracle width must be > 0, got {width_deg}")
    values = np.zeros((len(frames), len(grid)))
    vecs = grid.unit_vectors
    for t, dirs in enumerate(frames):
        for d in dirs:
            u = d.unit_vector()
            angle = np.degrees(np.arctan2(np.linalg.norm(np.cross(vecs, u), axis=-1), vecs @ u))
            values[t] += np.exp(-(angle**2) / (2.0 * width_deg**2))
    return PseudoSpectrum(grid, values)


# ---------------------------------------------------------------------------
# Peak picking
# ---------------------------------------------------------------------------


def peak_indices(values: np.ndarray, n_peaks: int, grid: DirectionGrid) -> list[int]:
    """
    Grid positions of the `n_peaks` largest strict local maxima.

    Ties in value go to the lower index. Missing peaks are filled with the
    largest remaining non-peak positions.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(grid),):
        raise ValidationError(f"SPS frame has shape {values.shape}, grid has {len(grid)} directions")
    if n_peaks < 1:
        raise ValidationError(f"Number of peaks must be >= 1, got {n_peaks}")
    padded = np.append(values, -np.inf)
    is_peak = np.all(values[:, None] > padded[grid.neighbor_matrix], axis=1)
    index = np.arange(len(grid))
    order = np.lexsort((index, -values))
    peaks = [int(i) for i in order if is_peak[i]]
    if len(peaks) >= n_peaks:
        return peaks[:n_peaks]
    fill = [int(i) for i in order if not is_peak[i]]
    return (peaks + fill)[: min(n_peaks, len(grid))]


def pick_peaks(values: np.ndarray, n_peaks: int, grid: DirectionGrid) -> list[Direction]:
    return [grid[i] for i in peak_indices(values, n_peaks, grid)]
