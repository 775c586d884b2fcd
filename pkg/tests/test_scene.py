"""
Tests for the corpus, scene scheduling, ground truth and rendering.

Scheduling contract checked on many seeds:
- never more than max_overlap concurrent events
- temporally overlapping events keep >= 10 degrees apart
- every DOA lies on the DOA grid, every event inside the recording
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import numpy.testing as npt
import soundfile as sf

from doanet.ambisonics import distance_gain, encode_direction
from doanet.conflicts import find_conflicts, max_concurrency
from doanet.corpus import (
    Corpus,
    CorpusExample,
    generate_synthetic_corpus,
    load_corpus_dir,
    split_corpus,
)
from doanet.errors import MissingInputError, ValidationError
from doanet.features import WINDOW_LENGTH, frame_count
from doanet.geometry import build_doa_grid
from doanet.model import Direction, SceneSpec, SoundEvent
from doanet.room import room_preset
from doanet.scene import (
    compute_ground_truth,
    render_anechoic,
    render_reverberant,
    schedule_events,
)

SR = 44100


class TestCorpus(unittest.TestCase):
    def test_synthetic_corpus_is_deterministic(self) -> None:
        a = generate_synthetic_corpus(3, seed=5)
        b = generate_synthetic_corpus(3, seed=5)
        self.assertEqual(len(a), 9)
        self.assertEqual(list(a), list(b))
        for key in a:
            npt.assert_array_equal(a[key].signal, b[key].signal)
            self.assertGreaterEqual(a[key].duration, 0.2)
            self.assertLessEqual(a[key].duration, 4.0)

    def test_missing_example_names_the_id(self) -> None:
        corpus = generate_synthetic_corpus(1)
        with self.assertRaises(MissingInputError) as ctx:
            corpus["nope"]
        self.assertIn("nope", str(ctx.exception))

    def test_split_is_disjoint_and_per_class(self) -> None:
        corpus = generate_synthetic_corpus(6, seed=1)
        train, test = split_corpus(corpus, split=1, test_per_class=2, seed=1)
        self.assertEqual(len(test), 6)
        self.assertEqual(len(train), 12)
        self.assertFalse({e.example_id for e in train} & {e.example_id for e in test})
        other_train, other_test = split_corpus(corpus, split=2, test_per_class=2, seed=1)
        self.assertEqual(len(other_test), 6)

    def test_split_needs_enough_examples(self) -> None:
        with self.assertRaises(ValidationError):
            split_corpus(generate_synthetic_corpus(2), split=1, test_per_class=2)

    def test_load_corpus_dir_resamples(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            root = Path(d)
            (root / "dog").mkdir()
            sf.write(root / "dog" / "bark.wav", np.zeros(22050) + 0.1, 22050, subtype="FLOAT")
            sf.write(root / "door_1.wav", np.zeros(4410) + 0.1, 44100, subtype="FLOAT")
            corpus = load_corpus_dir(root)
            self.assertEqual(corpus.classes(), ["dog", "door"])
            self.assertAlmostEqual(corpus["dog__bark"].duration, 1.0, places=3)

    def test_load_corpus_dir_missing(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            with self.assertRaises(MissingInputError):
                load_corpus_dir(Path(d) / "absent")
            with self.assertRaises(MissingInputError):
                load_corpus_dir(d)


class TestScheduling(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.corpus = generate_synthetic_corpus(4, seed=0).examples()

    def test_constraints_hold_on_many_seeds(self) -> None:
        grid = build_doa_grid()
        guard = WINDOW_LENGTH / SR
        for overlap in (1, 2, 3):
            for seed in range(15):
                spec = schedule_events(self.corpus, overlap, length=12.0, seed=seed)
                self.assertGreater(len(spec.events), 0)
                self.assertLessEqual(max_concurrency(spec.events), overlap)
                self.assertEqual(find_conflicts(spec.events, guard=guard), [])
                for ev in spec.events:
                    self.assertIn(ev.direction, grid)
                    self.assertGreaterEqual(ev.onset, 0.0)
                    self.assertLessEqual(ev.end, 12.0 + 1e-9)
                    self.assertAlmostEqual(ev.onset * SR, round(ev.onset * SR), places=6)
                    self.assertGreaterEqual(ev.distance, 1.0)
                self.assertEqual([ev.event_id for ev in spec.events], list(range(len(spec.events))))

    def test_same_seed_same_scene(self) -> None:
        a = schedule_events(self.corpus, 2, length=10.0, seed=7)
        b = schedule_events(self.corpus, 2, length=10.0, seed=7)
        c = schedule_events(self.corpus, 2, length=10.0, seed=8)
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_too_long_examples_are_skipped_with_warning(self) -> None:
        long_ex = CorpusExample("huge", "noise_burst", np.ones(SR * 3))
        short_ex = CorpusExample("small", "noise_burst", np.ones(SR // 2))
        with self.assertLogs("doanet.scene", level="WARNING") as logs:
            spec = schedule_events([long_ex, short_ex], 1, length=2.5, seed=0)
        self.assertTrue(any("huge" in line for line in logs.output))
        self.assertTrue(all(ev.example_id == "small" for ev in spec.events))

    def test_rejects_bad_arguments(self) -> None:
        with self.assertRaises(ValidationError):
            schedule_events([], 1)
        with self.assertRaises(ValidationError):
            schedule_events(self.corpus, 4)
        with self.assertRaises(ValidationError):
            schedule_events(self.corpus, 1, context="reverberant")

    def test_reverberant_sources_stay_inside_the_room(self) -> None:
        room = room_preset(1)
        grid = build_doa_grid()
        spec = schedule_events(self.corpus, 2, length=10.0, seed=3, context="reverberant", room=room)
        mic = np.asarray(room.microphone_position)
        for ev in spec.events:
            self.assertIsNotNone(ev.source_position)
            pos = np.asarray(ev.source_position)
            self.assertTrue(np.all(pos >= 0.5 - 1e-9))
            self.assertTrue(np.all(pos <= np.asarray(room.dimensions) - 0.5 + 1e-9))
            self.assertIn(ev.direction, grid)
            npt.assert_allclose(Direction.from_vector(pos - mic).unit_vector(), ev.direction.unit_vector(), atol=1e-9)


def _single_event_spec(onset: float, n_samples: int, direction: Direction, length: float = 2.0) -> SceneSpec:
    ev = SoundEvent(0, "ex", "noise_burst", onset, n_samples / SR, direction, 2.0)
    return SceneSpec("anechoic", 1, length, SR, (ev,), 0)


class TestGroundTruth(unittest.TestCase):
    def test_frames_follow_temporal_support(self) -> None:
        d = Direction(30.0, 10.0)
        spec = _single_event_spec(1.0, SR // 2, d)
        truth = compute_ground_truth(spec)
        self.assertEqual(len(truth), frame_count(2 * SR))
        active = [t for t, f in enumerate(truth.frames) if f]
        # frame t covers samples [882 t, 882 t + 1764)
        self.assertEqual(active[0], 49)
        self.assertEqual(active[-1], 74)
        self.assertEqual(len(active), 26)
        self.assertEqual(truth.frames[60], (d,))

    def test_doa_target_and_counts(self) -> None:
        d = Direction(30.0, 10.0)
        truth = compute_ground_truth(_single_event_spec(1.0, SR // 2, d))
        target = truth.doa_target(build_doa_grid())
        self.assertEqual(target.shape, (len(truth), 432))
        npt.assert_array_equal(target.sum(axis=1), truth.counts())
        self.assertEqual(target[60, build_doa_grid().index_of(d)], 1.0)


class TestRendering(unittest.TestCase):
    def test_anechoic_is_gain_times_steering(self) -> None:
        rng = np.random.default_rng(0)
        sig = rng.standard_normal(SR // 4)
        d = Direction(120.0, -20.0)
        corpus = Corpus([CorpusExample("ex", "noise_burst", sig)])
        spec = _single_event_spec(0.5, len(sig), d)
        buf, truth = render_anechoic(spec, corpus)
        self.assertEqual(buf.channels.shape, (4, 2 * SR))
        start = SR // 2
        expected = distance_gain(2.0) * encode_direction(d)[:, None] * sig[None, :]
        npt.assert_allclose(buf.channels[:, start : start + len(sig)], expected, atol=1e-12)
        self.assertEqual(float(np.abs(buf.channels[:, :start]).max()), 0.0)
        self.assertEqual(truth, compute_ground_truth(spec))

    def test_zero_reflection_is_free_field(self) -> None:
        rng = np.random.default_rng(1)
        sig = rng.standard_normal(SR // 10)
        room = room_preset(1)
        d = Direction(30.0, 10.0)
        pos = np.asarray(room.microphone_position) + 2.0 * d.unit_vector()
        ev = SoundEvent(0, "ex", "noise_burst", 0.5, len(sig) / SR, d, 2.0, tuple(float(v) for v in pos))
        spec = SceneSpec("reverberant", 1, 1.0, SR, (ev,), 0, room)
        buf, _ = render_reverberant(spec, Corpus([CorpusExample("ex", "noise_burst", sig)]), beta=0.0)
        tap = int(round(2.0 / 343.0 * SR))
        start = SR // 2 + tap
        expected = 0.5 * encode_direction(d)[:, None] * sig[None, :]
        npt.assert_allclose(buf.channels[:, start : start + len(sig)], expected, atol=1e-9)
        self.assertAlmostEqual(float(np.abs(buf.channels[0, : SR // 2 + tap]).max()), 0.0, places=12)

    def test_render_rejects_wrong_context(self) -> None:
        spec = _single_event_spec(0.5, 100, Direction(0, 0))
        with self.assertRaises(ValidationError):
            render_reverberant(spec, Corpus([]))


if __name__ == "__main__":
    unittest.main()
