"""
Scene scheduling and rendering.

Scheduling (per recording, fully seeded):
- events are laid out in `max_overlap` independent layers
- a layer starts uniformly within the first second; each next example starts
  250-500 ms after the previous one ends; the layer stops when the next
  example would run past the recording end
- every event gets a DOA on the DOA grid; temporally overlapping events keep
  at least 10 degrees apart (intervals widened by one analysis window)

Rendering:
- anechoic: plane-wave encoding with distance gain
- reverberant: convolution with image-source FOA impulse responses

Ground truth is frame-aligned with the STFT: frame t covers samples
[t * hop, t * hop + window), and an event is active in every frame its
temporal support overlaps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from doanet.ambisonics import DEFAULT_MAX_DISTANCE, distance_gain, spatialize
from doanet.conflicts import DEFAULT_MIN_SEPARATION, is_separated
from doanet.corpus import CorpusExample
from doanet.errors import ValidationError
from doanet.features import HOP_LENGTH, WINDOW_LENGTH, frame_count
from doanet.geometry import DirectionGrid, build_doa_grid
from doanet.model import (
    SAMPLE_RATE,
    AmbisonicBuffer,
    Direction,
    RoomSpec,
    SceneSpec,
    SoundEvent,
)
from doanet.room import spatial_impulse_response

logger = logging.getLogger(__name__)

RECORDING_LENGTH = 30.0
MIN_GAP = 0.25
MAX_GAP = 0.5
MIN_DISTANCE = 1.0
WALL_CLEARANCE = 0.5
MAX_DRAWS = 1000


@dataclass(frozen=True)
class GroundTruth:
    """Active DOAs per feature frame."""

    frames: tuple[tuple[Direction, ...], ...]

    def __len__(self) -> int:
        return len(self.frames)

    def counts(self) -> np.ndarray:
        return np.array([len(f) for f in self.frames], dtype=np.int64)

    def doa_target(self, grid: DirectionGrid) -> np.ndarray:
        """(frames, len(grid)) 0/1 matrix in grid order."""
        target = np.zeros((len(self.frames), len(grid)), dtype=np.float32)
        for t, dirs in enumerate(self.frames):
            for d in dirs:
                target[t, grid.index_of(d)] = 1.0
        return target


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------


def _draw_anechoic(
    rng: np.random.Generator, grid: DirectionGrid, max_distance: float
) -> tuple[Direction, float, None]:
    direction = grid[int(rng.integers(len(grid)))]
    return direction, float(rng.uniform(MIN_DISTANCE, max_distance)), None


def _draw_reverberant(
    rng: np.random.Generator, grid: DirectionGrid, room: RoomSpec
) -> Optional[tuple[Direction, float, tuple[float, float, float]]]:
    """
    Uniform position with wall clearance, re-placed on the nearest grid ray
    at the same distance. Returns None when the snapped point leaves the
    clearance box (caller redraws).
    """
    dims = np.asarray(room.dimensions)
    mic = np.asarray(room.microphone_position)
    pos = rng.uniform(WALL_CLEARANCE, dims - WALL_CLEARANCE)
    rel = pos - mic
    dist = float(np.linalg.norm(rel))
    if dist < WALL_CLEARANCE:
        return None
    direction = grid[grid.nearest_index(Direction.from_vector(rel))]
    snapped = mic + dist * direction.unit_vector()
    if np.any(snapped < WALL_CLEARANCE) or np.any(snapped > dims - WALL_CLEARANCE):
        return None
    return direction, dist, (float(snapped[0]), float(snapped[1]), float(snapped[2]))


def schedule_events(
    corpus: Sequence[CorpusExample],
    max_overlap: int,
    length: float = RECORDING_LENGTH,
    seed: int = 0,
    context: str = "anechoic",
    room: Optional[RoomSpec] = None,
    grid: Optional[DirectionGrid] = None,
    sample_rate: int = SAMPLE_RATE,
    max_distance: float = DEFAULT_MAX_DISTANCE,
    min_separation: float = DEFAULT_MIN_SEPARATION,
) -> SceneSpec:
    """
    Draw a random scene from `corpus` with at most `max_overlap` concurrent events.

    Identical arguments (including `seed`) always give an identical SceneSpec.
    """
    if not corpus:
        raise ValidationError("Cannot schedule a scene from an empty corpus")
    if max_overlap not in (1, 2, 3):
        raise ValidationError(f"max_overlap must be 1, 2 or 3, got {max_overlap}")
    if context == "reverberant" and room is None:
        raise ValidationError("Reverberant scheduling needs a room")
    grid = grid if grid is not None else build_doa_grid()

    eligible: list[CorpusExample] = []
    for ex in corpus:
        if ex.duration > length:
            logger.warning(
                "Skipping corpus example %s: %.2f s is longer than the %.2f s recording",
                ex.example_id,
                ex.duration,
                length,
            )
        else:
            eligible.append(ex)
    if not eligible:
        raise ValidationError("No corpus example fits into the recording")

    rng = np.random.default_rng(seed)
    guard = WINDOW_LENGTH / SAMPLE_RATE
    placed: list[SoundEvent] = []

    for _layer in range(max_overlap):
        t = round(rng.uniform(0.0, 1.0) * sample_rate) / sample_rate
        while True:
            ex = eligible[int(rng.integers(len(eligible)))]
            if t + ex.duration > length:
                break
            event: Optional[SoundEvent] = None
            for _ in range(MAX_DRAWS):
                if context == "reverberant":
                    assert room is not None
                    drawn = _draw_reverberant(rng, grid, room)
                    if drawn is None:
                        continue
                else:
                    drawn = _draw_anechoic(rng, grid, max_distance)
                direction, distance, position = drawn
                candidate = SoundEvent(
                    event_id=len(placed),
                    example_id=ex.example_id,
                    class_name=ex.class_name,
                    onset=t,
                    duration=ex.duration,
                    direction=direction,
                    distance=distance,
                    source_position=position,
                )
                if is_separated(candidate, placed, min_separation, guard):
                    event = candidate
                    break
            if event is None:
                raise ValidationError(
                    f"Could not place {ex.example_id} at {t:.3f} s with "
                    f"{min_separation:g} degree separation after {MAX_DRAWS} draws"
                )
            placed.append(event)
            gap = rng.uniform(MIN_GAP, MAX_GAP)
            t = round((event.end + gap) * sample_rate) / sample_rate

    ordered = sorted(placed, key=lambda ev: (ev.onset, ev.event_id))
    events = tuple(replace(ev, event_id=i) for i, ev in enumerate(ordered))
    return SceneSpec(
        context=context,
        max_overlap=max_overlap,
        length=length,
        sample_rate=sample_rate,
        events=events,
        rng_seed=seed,
        room=room if context == "reverberant" else None,
    )


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def _event_samples(event: SoundEvent, sample_rate: int) -> tuple[int, int]:
    start = int(round(event.onset * sample_rate))
    return start, start + int(round(event.duration * sample_rate))


def compute_ground_truth(spec: SceneSpec) -> GroundTruth:
    """
    Active direct-path DOAs per STFT frame of the rendered recording.
    """
    n_frames = frame_count(spec.n_samples)
    frames: list[list[Direction]] = [[] for _ in range(n_frames)]
    for ev in sorted(spec.events, key=lambda e: e.event_id):
        start, stop = _event_samples(ev, spec.sample_rate)
        # frames t with t*hop < stop and t*hop + window > start
        first = max(0, -(-(start - WINDOW_LENGTH + 1) // HOP_LENGTH))
        last = min(n_frames - 1, (stop - 1) // HOP_LENGTH)
        for t in range(first, last + 1):
            if ev.direction not in frames[t]:
                frames[t].append(ev.direction)
    return GroundTruth(tuple(tuple(f) for f in frames))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_anechoic(
    spec: SceneSpec,
    corpus: Mapping[str, CorpusExample],
    max_distance: float = DEFAULT_MAX_DISTANCE,
) -> tuple[AmbisonicBuffer, GroundTruth]:
    """x_A = sum_i g_i s_i y(dir_i), each event delayed by its onset."""
    if spec.context != "anechoic":
        raise ValidationError(f"render_anechoic got a {spec.context} scene")
    out = AmbisonicBuffer.silent(spec.n_samples, spec.sample_rate)
    for ev in spec.events:
        ex = corpus[ev.example_id]
        if ev.distance is None:
            raise ValidationError(f"Anechoic event {ev.event_id} has no distance")
        gain = distance_gain(ev.distance, max_distance)
        start, _ = _event_samples(ev, spec.sample_rate)
        out.add_at(spatialize(ex.signal, ev.direction, gain, spec.sample_rate), start)
    return out, compute_ground_truth(spec)


def render_reverberant(
    spec: SceneSpec,
    corpus: Mapping[str, CorpusExample],
    beta: Optional[float] = None,
) -> tuple[AmbisonicBuffer, GroundTruth]:
    """
    x_R = sum_i s_i * h_i with h_i the image-source FOA impulse response.

    Ground truth keeps the direct-path DOA only.
    """
    if spec.context != "reverberant" or spec.room is None:
        raise ValidationError(f"render_reverberant got a {spec.context} scene")
    out = AmbisonicBuffer.silent(spec.n_samples, spec.sample_rate)
    for ev in spec.events:
        ex = corpus[ev.example_id]
        if ev.source_position is None:
            raise ValidationError(f"Reverberant event {ev.event_id} has no source position")
        h = spatial_impulse_response(spec.room, ev.source_position, spec.sample_rate, beta=beta)
        wet = fftconvolve(ex.signal[None, :], h, axes=1)
        start, _ = _event_samples(ev, spec.sample_rate)
        out.add_at(AmbisonicBuffer(wet, spec.sample_rate), start)
    return out, compute_ground_truth(spec)


def render_scene(
    spec: SceneSpec, corpus: Mapping[str, CorpusExample]
) -> tuple[AmbisonicBuffer, GroundTruth]:
    if spec.context == "reverberant":
        return render_reverberant(spec, corpus)
    return render_anechoic(spec, corpus)
