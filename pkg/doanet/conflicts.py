"""
Conflict detection between scheduled sound events.

Two events conflict when they overlap in time AND are closer than the
minimum spatial separation.

The time test pads both events by a guard (the scheduler uses one STFT
window), and the angular test runs only on pairs that pass it.
"""

from __future__ import annotations

from typing import Sequence

from doanet.geometry import angular_distance
from doanet.model import SoundEvent

DEFAULT_MIN_SEPARATION = 10.0


def events_overlap(a: SoundEvent, b: SoundEvent, guard: float = 0.0) -> bool:
    """
    True when the temporal supports of `a` and `b`, each padded by `guard`
    seconds, share a stretch of time. Touching endpoints do not count; a
    guard of one analysis window also catches events that share a frame.
    """
    return a.onset - guard < b.end + guard and a.end + guard > b.onset - guard


def is_separated(
    candidate: SoundEvent,
    placed: Sequence[SoundEvent],
    min_separation: float = DEFAULT_MIN_SEPARATION,
    guard: float = 0.0,
) -> bool:
    """
    True if `candidate` keeps `min_separation` degrees from every placed
    event it overlaps in time.
    """
    for other in placed:
        if not events_overlap(candidate, other, guard):
            continue
        # strictly-below-threshold is a conflict; 10 degrees apart is fine
        if angular_distance(candidate.direction, other.direction) < min_separation - 1e-9:
            return False
    return True


def find_conflicts(
    events: Sequence[SoundEvent],
    min_separation: float = DEFAULT_MIN_SEPARATION,
    guard: float = 0.0,
) -> list[tuple[SoundEvent, SoundEvent]]:
    """
    Find temporally overlapping event pairs closer than `min_separation`.

    Each pair appears once (i < j).
    """
    conflicts: list[tuple[SoundEvent, SoundEvent]] = []
    ordered = sorted(events, key=lambda ev: (ev.onset, ev.event_id))

    # sweep: only events starting before the current one ends can overlap
    for i, ev1 in enumerate(ordered):
        for ev2 in ordered[i + 1 :]:
            if ev2.onset - guard >= ev1.end + guard:
                break
            if not events_overlap(ev1, ev2, guard):
                continue
            if angular_distance(ev1.direction, ev2.direction) < min_separation - 1e-9:
                conflicts.append((ev1, ev2))
    return conflicts


def max_concurrency(events: Sequence[SoundEvent]) -> int:
    """
    Largest number of events active at any instant.
    """
    # at equal times, ends sort before starts (touching is not overlapping)
    marks = sorted([(ev.onset, 1) for ev in events] + [(ev.end, -1) for ev in events])
    active = best = 0
    for _, step in marks:
        active += step
        best = max(best, active)
    return best
