"""
Mono sound-event corpus.

Two sources of examples:
- a built-in synthetic generator (enveloped noise bursts, tone complexes and
  chirps of 0.2-4 s) so the tool works without any download
- a directory of mono WAV files laid out as <class>/<name>.wav or as flat
  files named <class>_<n>.wav (e.g. an isolated sound-event collection)

Cross-validation splits choose disjoint train/test example sets per class.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import soundfile as sf
from scipy.signal import chirp, resample_poly

from doanet.errors import MissingInputError, ValidationError
from doanet.model import SAMPLE_RATE

logger = logging.getLogger(__name__)

SYNTHETIC_CLASSES = ("noise_burst", "tone_complex", "chirp")
MIN_DURATION = 0.2
MAX_DURATION = 4.0
PEAK_LEVEL = 0.5


@dataclass(frozen=True)
class CorpusExample:
    """One isolated mono sound example."""

    example_id: str
    class_name: str
    signal: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return len(self.signal) / self.sample_rate


class Corpus(Mapping[str, CorpusExample]):
    """
    Read-only example_id -> CorpusExample lookup.

    Missing ids raise MissingInputError naming the id.
    """

    def __init__(self, examples: Iterable[CorpusExample]) -> None:
        self._by_id: dict[str, CorpusExample] = {}
        for ex in examples:
            if ex.example_id in self._by_id:
                raise ValidationError(f"Duplicate corpus example id: {ex.example_id!r}")
            self._by_id[ex.example_id] = ex

    def __getitem__(self, example_id: str) -> CorpusExample:
        try:
            return self._by_id[example_id]
        except KeyError:
            raise MissingInputError(f"Corpus example not found: {example_id!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def examples(self) -> list[CorpusExample]:
        return list(self._by_id.values())

    def classes(self) -> list[str]:
        return sorted({ex.class_name for ex in self._by_id.values()})


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


def _envelope(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Raised-cosine attack and release around a flat sustain."""
    attack = max(1, int(rng.uniform(0.01, 0.05) * sample_rate))
    release = max(1, int(rng.uniform(0.02, 0.2) * sample_rate))
    attack = min(attack, n // 3)
    release = min(release, n // 3)
    env = np.ones(n)
    if attack > 0:
        env[:attack] = 0.5 - 0.5 * np.cos(np.pi * (np.arange(attack) + 1) / (attack + 1))
    if release > 0:
        env[n - release :] = 0.5 + 0.5 * np.cos(np.pi * (np.arange(release) + 1) / (release + 1))
    return env


def _synth_signal(class_name: str, n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sample_rate
    if class_name == "noise_burst":
        x = rng.standard_normal(n)
    elif class_name == "tone_complex":
        f0 = rng.uniform(150.0, 1200.0)
        n_partials = int(rng.integers(3, 7))
        x = np.zeros(n)
        for k in range(1, n_partials + 1):
            if k * f0 >= 0.45 * sample_rate:
                break
            x += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    elif class_name == "chirp":
        f_start = rng.uniform(200.0, 2000.0)
        f_end = rng.uniform(2000.0, 12000.0)
        if rng.random() < 0.5:
            f_start, f_end = f_end, f_start
        method = "logarithmic" if rng.random() < 0.5 else "linear"
        x = chirp(t, f0=f_start, t1=max(t[-1], 1.0 / sample_rate), f1=f_end, method=method)
    else:
        raise ValidationError(f"Unknown synthetic class: {class_name!r}")

    x = x * _envelope(n, sample_rate, rng)
    peak = float(np.max(np.abs(x)))
    return x * (PEAK_LEVEL / peak) if peak > 0 else x


def generate_synthetic_corpus(
    examples_per_class: int = 20,
    seed: int = 0,
    classes: Sequence[str] = SYNTHETIC_CLASSES,
    sample_rate: int = SAMPLE_RATE,
) -> Corpus:
    """
    Deterministic synthetic corpus: `examples_per_class` examples per class,
    durations uniform in [0.2, 4] s.
    """
    if examples_per_class < 1:
        raise ValidationError(f"examples_per_class must be >= 1, got {examples_per_class}")
    examples: list[CorpusExample] = []
    for c_idx, class_name in enumerate(classes):
        for k in range(examples_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, c_idx, k]))
            n = int(rng.uniform(MIN_DURATION, MAX_DURATION) * sample_rate)
            signal = _synth_signal(class_name, n, sample_rate, rng)
            examples.append(CorpusExample(f"{class_name}_{k:02d}", class_name, signal, sample_rate))
    return Corpus(examples)


# ---------------------------------------------------------------------------
# External WAV corpus
# ---------------------------------------------------------------------------


def _class_of(path: Path, root: Path) -> str:
    if path.parent != root:
        return path.parent.name
    stem = path.stem
    return stem.rsplit("_", 1)[0] if "_" in stem else stem


def load_corpus_dir(root: str | Path, sample_rate: int = SAMPLE_RATE) -> Corpus:
    """
    Load every *.wav below `root` as a mono example, resampled to `sample_rate`.

    Multichannel files are averaged down to mono.
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise MissingInputError(f"Corpus directory not found: {root_path}")

    examples: list[CorpusExample] = []
    for wav in sorted(root_path.rglob("*.wav")):
        data, sr = sf.read(wav, dtype="float64", always_2d=True)
        signal = data.mean(axis=1)
        if sr != sample_rate:
            g = math.gcd(int(sr), int(sample_rate))
            signal = resample_poly(signal, sample_rate // g, int(sr) // g)
        class_name = _class_of(wav, root_path)
        example_id = wav.relative_to(root_path).with_suffix("").as_posix().replace("/", "__")
        examples.append(CorpusExample(example_id, class_name, signal, sample_rate))

    if not examples:
        raise MissingInputError(f"No .wav files found under {root_path}")
    logger.info("Loaded %d corpus examples from %s", len(examples), root_path)
    return Corpus(examples)


# ---------------------------------------------------------------------------
# Cross-validation splits
# ---------------------------------------------------------------------------


def split_corpus(
    corpus: Corpus,
    split: int,
    test_per_class: int,
    seed: int = 0,
) -> tuple[list[CorpusExample], list[CorpusExample]]:
    """
    Disjoint (train, test) example lists for one cross-validation split.

    Per class, a split-specific random permutation puts `test_per_class`
    examples in test and the remaining ones in train.
    """
    train: list[CorpusExample] = []
    test: list[CorpusExample] = []
    for c_idx, class_name in enumerate(corpus.classes()):
        members = sorted(
            (ex for ex in corpus.examples() if ex.class_name == class_name),
            key=lambda ex: ex.example_id,
        )
        if len(members) <= test_per_class:
            raise ValidationError(
                f"Class {class_name!r} has {len(members)} examples; "
                f"need more than {test_per_class} for a train/test split"
            )
        rng = np.random.default_rng(np.random.SeedSequence([seed, split, c_idx]))
        order = rng.permutation(len(members))
        test.extend(members[i] for i in order[:test_per_class])
        train.extend(members[i] for i in order[test_per_class:])
    return train, test
