"""
Unit tests for conflict detection between sound events.

Definition used here:
- A conflict exists if two events overlap in time AND are less than
  10 degrees apart.
- Touching endpoints (end == start) is NOT an overlap.
"""

import unittest

from doanet.conflicts import events_overlap, find_conflicts, is_separated, max_concurrency
from doanet.model import Direction, SoundEvent


def _event(event_id: int, onset: float, duration: float, az: float, el: float = 0.0) -> SoundEvent:
    return SoundEvent(event_id, f"ex{event_id}", "noise_burst", onset, duration, Direction(az, el), 2.0)


class TestConflicts(unittest.TestCase):
    def test_overlap_close_directions(self) -> None:
        events = [_event(0, 0.0, 1.0, 0.0), _event(1, 0.5, 1.0, 5.0)]
        confs = find_conflicts(events)
        self.assertEqual(len(confs), 1)

    def test_no_overlap_touching_end(self) -> None:
        # end == start is allowed (no overlap)
        a, b = _event(0, 0.0, 1.0, 0.0), _event(1, 1.0, 1.0, 0.0)
        self.assertFalse(events_overlap(a, b))
        self.assertEqual(len(find_conflicts([a, b])), 0)

    def test_guard_widens_intervals(self) -> None:
        a, b = _event(0, 0.0, 1.0, 0.0), _event(1, 1.0, 1.0, 0.0)
        self.assertTrue(events_overlap(a, b, guard=0.04))
        self.assertEqual(len(find_conflicts([a, b], guard=0.04)), 1)

    def test_ten_degrees_apart_is_fine(self) -> None:
        events = [_event(0, 0.0, 1.0, 0.0), _event(1, 0.5, 1.0, 10.0)]
        self.assertEqual(len(find_conflicts(events)), 0)

    def test_is_separated(self) -> None:
        placed = [_event(0, 0.0, 2.0, 100.0, 20.0)]
        self.assertFalse(is_separated(_event(1, 1.0, 1.0, 100.0, 20.0), placed))
        self.assertTrue(is_separated(_event(1, 3.0, 1.0, 100.0, 20.0), placed))
        self.assertTrue(is_separated(_event(1, 1.0, 1.0, 200.0, 20.0), placed))


class TestConcurrency(unittest.TestCase):
    def test_max_concurrency(self) -> None:
        events = [_event(0, 0.0, 2.0, 0), _event(1, 1.0, 2.0, 90), _event(2, 1.5, 0.2, 180)]
        self.assertEqual(max_concurrency(events), 3)

    def test_touching_events_do_not_stack(self) -> None:
        events = [_event(0, 0.0, 1.0, 0), _event(1, 1.0, 1.0, 90)]
        self.assertEqual(max_concurrency(events), 1)

    def test_empty(self) -> None:
        self.assertEqual(max_concurrency([]), 0)


if __name__ == "__main__":
    unittest.main()
