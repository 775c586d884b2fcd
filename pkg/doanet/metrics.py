"""
Evaluation metrics.

- SPS SNR: 10 log10(sum ref^2 / sum (est - ref)^2), capped to [-140, 140] dB
- DOA error: per frame, minimum-cost matching of estimated and true DOAs
  (Hungarian method on central angles); summed cost divided by the total
  number of estimated DOAs. Unmatched DOAs add no angular cost.
- frame recall: percentage of frames whose estimated DOA count is right
- confusion matrix of true vs estimated DOA counts

FrameTally accumulates all of the above over recordings so that a dataset
report is a fold over per-recording updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from doanet.errors import ValidationError
from doanet.geometry import angular_distance_matrix
from doanet.model import Direction

SNR_CAP_DB = 140.0
DEFAULT_MAX_COUNT = 3

DirectionSet = Sequence[Direction]


# ---------------------------------------------------------------------------
# SPS SNR
# ---------------------------------------------------------------------------


def _snr_db(ref_energy: float, err_energy: float) -> float:
    if err_energy <= 0.0:
        return SNR_CAP_DB if ref_energy > 0.0 else 0.0
    if ref_energy <= 0.0:
        return -SNR_CAP_DB
    db = 10.0 * math.log10(ref_energy / err_energy)
    return float(min(SNR_CAP_DB, max(-SNR_CAP_DB, db)))


def _snr_terms(estimated: np.ndarray, reference: np.ndarray) -> tuple[float, float]:
    est = np.asarray(estimated, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValidationError(f"SPS shape mismatch: {est.shape} vs {ref.shape}")
    return float(np.sum(ref**2)), float(np.sum((est - ref) ** 2))


def sps_snr(estimated: np.ndarray, reference: np.ndarray) -> float:
    """SNR in dB of `estimated` against `reference`, summed over frames and directions."""
    return _snr_db(*_snr_terms(estimated, reference))


# ---------------------------------------------------------------------------
# DOA matching
# ---------------------------------------------------------------------------


def min_cost_assignment(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """
    Minimum total cost pairing for a rectangular cost matrix.

    min(m, n) pairs are returned; surplus rows or columns stay unmatched.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValidationError(f"Cost matrix must be 2-D, got shape {cost.shape}")
    if cost.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return pairs, float(cost[rows, cols].sum())


def match_doas(estimated: DirectionSet, truth: DirectionSet) -> tuple[list[tuple[int, int]], float]:
    """
    Pairs (estimate index, truth index) and their total central angle in degrees.
    """
    if not estimated or not truth:
        return [], 0.0
    return min_cost_assignment(angular_distance_matrix(estimated, truth))


def _check_aligned(estimates: Sequence[DirectionSet], truths: Sequence[DirectionSet]) -> None:
    if len(estimates) != len(truths):
        raise ValidationError(
            f"Estimate and truth frame counts differ: {len(estimates)} vs {len(truths)}"
        )


def doa_error(estimates: Sequence[DirectionSet], truths: Sequence[DirectionSet]) -> Optional[float]:
    """
    Matched angular cost per estimated DOA, in degrees.

    None when there is no estimate at all (undefined, unlike a perfect 0.0).
    """
    _check_aligned(estimates, truths)
    total_cost = 0.0
    total_est = 0
    for est, ref in zip(estimates, truths):
        total_cost += match_doas(est, ref)[1]
        total_est += len(est)
    return total_cost / total_est if total_est else None


def frame_recall(estimates: Sequence[DirectionSet], truths: Sequence[DirectionSet]) -> float:
    """Percentage of frames whose estimated DOA count equals the true count."""
    _check_aligned(estimates, truths)
    if not truths:
        return 0.0
    hits = sum(1 for est, ref in zip(estimates, truths) if len(est) == len(ref))
    return 100.0 * hits / len(truths)


def confusion_matrix(
    estimates: Sequence[DirectionSet],
    truths: Sequence[DirectionSet],
    max_count: int = DEFAULT_MAX_COUNT,
) -> np.ndarray:
    """Entry (i, j): frames with i true and j estimated DOAs (counts clipped to max_count)."""
    _check_aligned(estimates, truths)
    out = np.zeros((max_count + 1, max_count + 1), dtype=np.int64)
    for est, ref in zip(estimates, truths):
        out[min(len(ref), max_count), min(len(est), max_count)] += 1
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    label: str
    frames_evaluated: int
    doa_error_deg: Optional[float]
    frame_recall_pct: float
    confusion: np.ndarray
    sps_snr_db: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.frame_recall_pct <= 100.0:
            raise ValidationError(f"Frame recall out of range: {self.frame_recall_pct}")

    def as_row(self) -> dict[str, str]:
        def fmt(v: Optional[float]) -> str:
            return "undefined" if v is None else f"{v:.4f}"

        return {
            "label": self.label,
            "frames": str(self.frames_evaluated),
            "doa_error_deg": fmt(self.doa_error_deg),
            "frame_recall_pct": f"{self.frame_recall_pct:.4f}",
            "sps_snr_db": "" if self.sps_snr_db is None else f"{self.sps_snr_db:.4f}",
        }


@dataclass
class FrameTally:
    """Running sums behind an EvalReport."""

    max_count: int = DEFAULT_MAX_COUNT
    frames: int = 0
    correct_count: int = 0
    matched_cost: float = 0.0
    estimated: int = 0
    ref_energy: float = 0.0
    err_energy: float = 0.0
    has_sps: bool = False
    confusion: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.confusion = np.zeros((self.max_count + 1, self.max_count + 1), dtype=np.int64)

    def update(self, estimates: Sequence[DirectionSet], truths: Sequence[DirectionSet]) -> None:
        _check_aligned(estimates, truths)
        for est, ref in zip(estimates, truths):
            self.matched_cost += match_doas(est, ref)[1]
            self.estimated += len(est)
            self.correct_count += int(len(est) == len(ref))
        self.frames += len(truths)
        self.confusion += confusion_matrix(estimates, truths, self.max_count)

    def update_sps(self, estimated: np.ndarray, reference: np.ndarray) -> None:
        ref, err = _snr_terms(estimated, reference)
        self.ref_energy += ref
        self.err_energy += err
        self.has_sps = True

    def merge(self, other: FrameTally) -> None:
        if other.max_count != self.max_count:
            raise ValidationError(f"Cannot merge tallies with max_count {self.max_count} and {other.max_count}")
        self.frames += other.frames
        self.correct_count += other.correct_count
        self.matched_cost += other.matched_cost
        self.estimated += other.estimated
        self.ref_energy += other.ref_energy
        self.err_energy += other.err_energy
        self.has_sps = self.has_sps or other.has_sps
        self.confusion += other.confusion

    def report(self, label: str) -> EvalReport:
        return EvalReport(
            label=label,
            frames_evaluated=self.frames,
            doa_error_deg=self.matched_cost / self.estimated if self.estimated else None,
            frame_recall_pct=100.0 * self.correct_count / self.frames if self.frames else 0.0,
            confusion=self.confusion.copy(),
            sps_snr_db=_snr_db(self.ref_energy, self.err_energy) if self.has_sps else None,
        )


def early_stopping_metric(doa_error_deg: Optional[float], recall_pct: float) -> float:
    """Mean of normalized DOA error and frame miss rate; lower is better."""
    err = 180.0 if doa_error_deg is None else doa_error_deg
    return 0.5 * (err / 180.0 + (1.0 - recall_pct / 100.0))
