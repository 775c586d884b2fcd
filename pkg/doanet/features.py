"""
STFT front end and network input tensors.

- 40 ms periodic Hamming window (1764 samples at 44.1 kHz), 50% hop (882)
- each windowed frame is zero-padded to a 2048-point DFT
- bins 1..1024 are kept (DC dropped), so bin b sits at (b + 1) * fs / 2048 Hz
- frames are not centered: frame t covers samples [t * 882, t * 882 + 1764)

Network input layout per sequence: (L, 1024, 2C) with magnitudes of the C
channels first and their phases after.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from doanet.errors import ValidationError
from doanet.model import SAMPLE_RATE, AmbisonicBuffer

WINDOW_LENGTH = 1764
HOP_LENGTH = 882
FFT_SIZE = 2048
N_BINS = FFT_SIZE // 2
SEQUENCE_LENGTH = 100


def frame_count(n_samples: int) -> int:
    """1 + floor((N - window) / hop); 0 when the signal is shorter than a window."""
    if n_samples < WINDOW_LENGTH:
        return 0
    return 1 + (n_samples - WINDOW_LENGTH) // HOP_LENGTH


def bin_frequency(index: int, sample_rate: int = SAMPLE_RATE) -> float:
    return (index + 1) * sample_rate / FFT_SIZE


@dataclass(frozen=True)
class ComplexSpectrogram:
    """values has shape (frames, 1024, channels), complex128."""

    values: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[2])


@dataclass(frozen=True)
class SpectrogramTensor:
    """
    One network input sequence, float32 (L, 1024, 2C).

    Frames at and after `valid_frames` are zero padding.
    """

    data: np.ndarray
    valid_frames: int

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[1] != N_BINS or self.data.shape[2] % 2:
            raise ValidationError(f"Bad spectrogram tensor shape {self.data.shape}")
        if not 0 <= self.valid_frames <= self.data.shape[0]:
            raise ValidationError(
                f"valid_frames {self.valid_frames} outside [0, {self.data.shape[0]}]"
            )

    @property
    def magnitudes(self) -> np.ndarray:
        return self.data[..., : self.data.shape[2] // 2]

    @property
    def phases(self) -> np.ndarray:
        return self.data[..., self.data.shape[2] // 2 :]

    def to_complex(self) -> np.ndarray:
        """Complex (valid frames, 1024, C) spectrogram rebuilt from magnitude and phase."""
        n = self.valid_frames
        return self.magnitudes[:n].astype(np.float64) * np.exp(1j * self.phases[:n].astype(np.float64))


def analysis_window() -> np.ndarray:
    return get_window("hamming", WINDOW_LENGTH, fftbins=True)


def stft(buffer: AmbisonicBuffer) -> ComplexSpectrogram:
    """Complex spectrogram of every channel of `buffer`."""
    if buffer.sample_rate != SAMPLE_RATE:
        raise ValidationError(f"STFT expects {SAMPLE_RATE} Hz, got {buffer.sample_rate}")
    n_frames = frame_count(buffer.length)
    if n_frames == 0:
        raise ValidationError(
            f"Recording of {buffer.length} samples is shorter than one {WINDOW_LENGTH}-sample window"
        )
    x = buffer.channels
    starts = np.arange(n_frames) * HOP_LENGTH
    idx = starts[:, None] + np.arange(WINDOW_LENGTH)[None, :]
    frames = x[:, idx] * analysis_window()  # (C, T, window)
    spectrum = np.fft.rfft(frames, n=FFT_SIZE, axis=-1)[..., 1 : N_BINS + 1]
    return ComplexSpectrogram(np.ascontiguousarray(spectrum.transpose(1, 2, 0)), buffer.sample_rate)


def to_tensor(values: np.ndarray) -> np.ndarray:
    """(T, 1024, C) complex -> (T, 1024, 2C) float32 [magnitudes..., phases...]."""
    return np.concatenate([np.abs(values), np.angle(values)], axis=-1).astype(np.float32)


def assemble_sequences(
    spec: ComplexSpectrogram, length: int = SEQUENCE_LENGTH
) -> list[SpectrogramTensor]:
    """
    Split into consecutive non-overlapping L-frame sequences.

    The last sequence is zero-padded in time; its `valid_frames` marks the
    real content.
    """
    if length < 1:
        raise ValidationError(f"Sequence length must be >= 1, got {length}")
    tensor = to_tensor(spec.values)
    sequences: list[SpectrogramTensor] = []
    for start in range(0, spec.n_frames, length):
        block = tensor[start : start + length]
        valid = block.shape[0]
        if valid < length:
            pad = np.zeros((length - valid,) + block.shape[1:], dtype=np.float32)
            block = np.concatenate([block, pad], axis=0)
        sequences.append(SpectrogramTensor(block, valid))
    return sequences


def sequence_slices(n_frames: int, length: int = SEQUENCE_LENGTH) -> list[slice]:
    """Frame ranges covered by each sequence of `assemble_sequences`."""
    return [slice(s, min(s + length, n_frames)) for s in range(0, n_frames, length)]


def pad_frames(values: np.ndarray, length: int = SEQUENCE_LENGTH) -> list[np.ndarray]:
    """Split a (frames, ...) target array the same way as the features."""
    out: list[np.ndarray] = []
    for sl in sequence_slices(values.shape[0], length):
        block = values[sl]
        if block.shape[0] < length:
            pad = np.zeros((length - block.shape[0],) + block.shape[1:], dtype=block.dtype)
            block = np.concatenate([block, pad], axis=0)
        out.append(block)
    return out
