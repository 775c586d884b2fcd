"""
Tests for evaluation metrics.

- SPS SNR with the +-140 dB cap
- Hungarian DOA matching, checked against exhaustive search
- DOA error normalized by the number of estimates, frame recall, confusion
"""

import itertools
import unittest

import numpy as np
import numpy.testing as npt

from doanet.errors import ValidationError
from doanet.geometry import build_doa_grid
from doanet.metrics import (
    FrameTally,
    confusion_matrix,
    doa_error,
    early_stopping_metric,
    frame_recall,
    match_doas,
    min_cost_assignment,
    sps_snr,
)
from doanet.model import Direction


def _brute_force(cost: np.ndarray) -> float:
    m, n = cost.shape
    if m <= n:
        return min(sum(cost[i, p[i]] for i in range(m)) for p in itertools.permutations(range(n), m))
    return min(sum(cost[p[j], j] for j in range(n)) for p in itertools.permutations(range(m), n))


class TestSnr(unittest.TestCase):
    def test_examples(self) -> None:
        ref = np.random.default_rng(0).random((5, 614))
        self.assertEqual(sps_snr(ref, ref), 140.0)
        self.assertAlmostEqual(sps_snr(2 * ref, ref), 0.0)
        self.assertAlmostEqual(sps_snr(np.zeros_like(ref), ref), 0.0)

    def test_decreases_with_noise(self) -> None:
        rng = np.random.default_rng(1)
        ref = rng.random((4, 100))
        noise = rng.standard_normal(ref.shape)
        values = [sps_snr(ref + s * noise, ref) for s in (0.01, 0.1, 1.0, 10.0)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ValidationError):
            sps_snr(np.zeros((2, 3)), np.zeros((3, 2)))


class TestMatching(unittest.TestCase):
    def test_examples(self) -> None:
        a = [Direction(0, 0), Direction(90, 0)]
        pairs, cost = match_doas(a, a)
        self.assertEqual(cost, 0.0)
        self.assertEqual(pairs, [(0, 0), (1, 1)])
        _, cost = match_doas(a, list(reversed(a)))
        self.assertAlmostEqual(cost, 0.0)
        pairs, cost = match_doas([Direction(0, 0), Direction(50, 0)], [Direction(10, 0), Direction(40, 0)])
        self.assertEqual(pairs, [(0, 0), (1, 1)])
        self.assertAlmostEqual(cost, 20.0)

    def test_empty_sides(self) -> None:
        self.assertEqual(match_doas([], [Direction(0, 0)]), ([], 0.0))
        self.assertEqual(match_doas([Direction(0, 0)], []), ([], 0.0))

    def test_symmetric(self) -> None:
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = [Direction(rng.uniform(0, 360), rng.uniform(-90, 90)) for _ in range(int(rng.integers(1, 4)))]
            b = [Direction(rng.uniform(0, 360), rng.uniform(-90, 90)) for _ in range(int(rng.integers(1, 4)))]
            self.assertAlmostEqual(match_doas(a, b)[1], match_doas(b, a)[1], places=9)

    def test_matches_exhaustive_search(self) -> None:
        rng = np.random.default_rng(3)
        for _ in range(2000):
            m, n = (int(v) for v in rng.integers(1, 6, size=2))
            cost = rng.uniform(0, 180, size=(m, n))
            pairs, total = min_cost_assignment(cost)
            self.assertEqual(len(pairs), min(m, n))
            self.assertAlmostEqual(total, _brute_force(cost), places=9)


class TestFrameMetrics(unittest.TestCase):
    def test_doa_error_examples(self) -> None:
        d = Direction(0, 0)
        self.assertEqual(doa_error([[d]], [[d]]), 0.0)
        self.assertAlmostEqual(doa_error([[Direction(10, 0)]], [[d]]), 10.0)
        frames_est = [[Direction(0, 0), Direction(50, 0)], [Direction(90, 0)]]
        frames_ref = [[Direction(10, 0), Direction(40, 0)], [Direction(90, 0)]]
        self.assertAlmostEqual(doa_error(frames_est, frames_ref), 20.0 / 3.0)

    def test_exact_estimates_cost_nothing(self) -> None:
        grid = build_doa_grid()
        frames = [[grid[i], grid[(i + 97) % len(grid)]] for i in range(0, len(grid), 5)]
        self.assertEqual(doa_error(frames, frames), 0.0)

    def test_doa_error_undefined_without_estimates(self) -> None:
        self.assertIsNone(doa_error([[], []], [[Direction(0, 0)], []]))

    def test_doa_error_ignores_order_within_frames(self) -> None:
        est = [[Direction(0, 0), Direction(50, 10)]]
        ref = [[Direction(45, 0), Direction(5, 0)]]
        self.assertAlmostEqual(doa_error(est, ref), doa_error([list(reversed(est[0]))], ref))

    def test_frame_recall(self) -> None:
        d = Direction(0, 0)
        self.assertEqual(frame_recall([[d], []], [[d], []]), 100.0)
        self.assertEqual(frame_recall([[d], [d]], [[d], []]), 50.0)
        with self.assertRaises(ValidationError):
            frame_recall([[d]], [])

    def test_confusion_matrix(self) -> None:
        d, e = Direction(0, 0), Direction(90, 0)
        truths = [[], [d], [d, e], [d]]
        perfect = confusion_matrix(truths, truths)
        npt.assert_array_equal(perfect, np.diag([1, 2, 1, 0]))
        empty = confusion_matrix([[]] * 4, truths)
        npt.assert_array_equal(empty[:, 1:], 0)
        npt.assert_array_equal(empty.sum(axis=1), [1, 2, 1, 0])

    def test_confusion_clips_counts(self) -> None:
        dirs = [Direction(a, 0) for a in (0, 40, 80, 120, 160)]
        m = confusion_matrix([dirs], [dirs[:1]], max_count=3)
        self.assertEqual(int(m[1, 3]), 1)


class TestTally(unittest.TestCase):
    def test_fold_equals_one_shot(self) -> None:
        rng = np.random.default_rng(4)
        grid_dirs = [Direction(10 * k, 0) for k in range(36)]

        def frame() -> list[Direction]:
            idx = rng.choice(36, size=int(rng.integers(0, 3)), replace=False)
            return [grid_dirs[i] for i in idx]

        est = [frame() for _ in range(40)]
        ref = [frame() for _ in range(40)]
        tally = FrameTally()
        tally.update(est[:25], ref[:25])
        tally.update(est[25:], ref[25:])
        report = tally.report("all")
        self.assertEqual(report.frames_evaluated, 40)
        self.assertAlmostEqual(report.doa_error_deg, doa_error(est, ref))
        self.assertAlmostEqual(report.frame_recall_pct, frame_recall(est, ref))
        npt.assert_array_equal(report.confusion, confusion_matrix(est, ref))

    def test_merge_matches_a_single_tally(self) -> None:
        dirs = [Direction(10 * k, 0) for k in range(6)]
        est = [dirs[:1], dirs[1:3], [], dirs[3:4]]
        ref = [dirs[:1], dirs[1:2], dirs[4:5], dirs[5:6]]
        whole = FrameTally()
        whole.update(est, ref)
        left, right = FrameTally(), FrameTally()
        left.update(est[:2], ref[:2])
        right.update(est[2:], ref[2:])
        left.merge(right)
        self.assertEqual(left.report("x").as_row(), whole.report("x").as_row())
        npt.assert_array_equal(left.confusion, whole.confusion)
        with self.assertRaises(ValidationError):
            left.merge(FrameTally(max_count=5))
        self.assertIsNone(report.sps_snr_db)

    def test_sps_energy_is_accumulated(self) -> None:
        ref = np.ones((4, 10))
        tally = FrameTally()
        tally.update_sps(2 * ref[:2], ref[:2])
        tally.update_sps(2 * ref[2:], ref[2:])
        self.assertAlmostEqual(tally.report("x").sps_snr_db, 0.0)

    def test_report_row(self) -> None:
        row = FrameTally().report("empty").as_row()
        self.assertEqual(row["doa_error_deg"], "undefined")
        self.assertEqual(row["frame_recall_pct"], "0.0000")

    def test_early_stopping_metric(self) -> None:
        self.assertEqual(early_stopping_metric(0.0, 100.0), 0.0)
        self.assertEqual(early_stopping_metric(None, 0.0), 1.0)
        self.assertAlmostEqual(early_stopping_metric(90.0, 50.0), 0.5)


if __name__ == "__main__":
    unittest.main()
