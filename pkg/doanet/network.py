"""
Two-stage DOA network.

Stage 1 (spectrogram -> SPS):
    [conv 3x3 -> ReLU -> batch norm -> freq max-pool -> dropout] x 4
    reshape (L, 2, N_C) -> (L, 2 N_C)
    [bidirectional GRU -> dropout] x 2
    time-distributed linear FC -> 614 SPS values per frame

Stage 2 (SPS -> DOA probabilities):
    SPS frame as a (614, 1) map, edge-padded to 625 bins
    [conv 3x3 -> ReLU -> batch norm -> freq max-pool -> dropout] x 2
    time-distributed linear FC -> dropout
    bidirectional GRU -> dropout
    time-distributed sigmoid FC -> 432 DOA probabilities per frame
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator, Optional

import numpy as np

from doanet.errors import ValidationError
from doanet.layers import BatchNorm, BiGRU, Conv2D, Dense, Dropout, EdgePadFreq, Layer, MaxPoolFreq

PARAMETER_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    sequence_length: int = 100
    input_bins: int = 1024
    input_channels: int = 8
    conv_filters: int = 64
    conv_pools: tuple[int, ...] = (8, 8, 4, 2)
    gru_units: tuple[int, ...] = (64, 64)
    sps_size: int = 614
    stage2_filters: int = 16
    stage2_pools: tuple[int, ...] = (5, 5)
    stage2_padded: int = 625
    fc_units: int = 32
    stage2_gru_units: tuple[int, ...] = (32,)
    doa_size: int = 432
    dropout: float = 0.25

    def validate(self) -> None:
        for name in ("sequence_length", "input_bins", "input_channels", "conv_filters", "sps_size",
                     "stage2_filters", "stage2_padded", "fc_units", "doa_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"network.{name} must be >= 1, got {getattr(self, name)}")
        if not self.conv_pools or not self.stage2_pools:
            raise ValidationError("Both conv stacks need at least one layer")
        if self.input_bins % math.prod(self.conv_pools):
            raise ValidationError(
                f"Stage-1 pools {self.conv_pools} do not divide {self.input_bins} bins"
            )
        if self.stage2_padded < self.sps_size:
            raise ValidationError(
                f"stage2_padded {self.stage2_padded} is smaller than sps_size {self.sps_size}"
            )
        if self.stage2_padded % math.prod(self.stage2_pools):
            raise ValidationError(
                f"Stage-2 pools {self.stage2_pools} do not divide {self.stage2_padded} bins"
            )
        if not self.gru_units or not self.stage2_gru_units:
            raise ValidationError("Both stages need at least one GRU layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"network.dropout must be in [0, 1), got {self.dropout}")

    @property
    def stage1_features(self) -> int:
        return self.input_bins // math.prod(self.conv_pools) * self.conv_filters

    @property
    def stage2_features(self) -> int:
        return self.stage2_padded // math.prod(self.stage2_pools) * self.stage2_filters

    def parameter_count(self) -> int:
        """Weights, biases and batch-norm statistics (4 values per channel)."""

        def conv(c_in: int, c_out: int) -> int:
            return 9 * c_in * c_out + c_out + 4 * c_out

        def bigru(d: int, h: int) -> int:
            return 2 * (3 * h * (d + h) + 6 * h)

        total = 0
        c_in = self.input_channels
        for _ in self.conv_pools:
            total += conv(c_in, self.conv_filters)
            c_in = self.conv_filters
        d = self.stage1_features
        for h in self.gru_units:
            total += bigru(d, h)
            d = 2 * h
        total += d * self.sps_size + self.sps_size

        c_in = 1
        for _ in self.stage2_pools:
            total += conv(c_in, self.stage2_filters)
            c_in = self.stage2_filters
        total += self.stage2_features * self.fc_units + self.fc_units
        d = self.fc_units
        for h in self.stage2_gru_units:
            total += bigru(d, h)
            d = 2 * h
        total += d * self.doa_size + self.doa_size
        return total

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown network config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kwargs)


@dataclass
class NetworkParameters:
    """All arrays of a network keyed '<layer>.<name>', plus its config."""

    config: NetworkConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = PARAMETER_VERSION

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())


# ---------------------------------------------------------------------------
# Layer stacks
# ---------------------------------------------------------------------------


class Sequential:
    def __init__(self, layers: list[Layer]) -> None:
        self.layers = layers

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def _conv_block(
    prefix: str, index: int, c_in: int, filters: int, pool: int, dropout: float, rng: np.random.Generator,
    drop_rng: np.random.Generator,
) -> list[Layer]:
    return [
        Conv2D(f"{prefix}.conv{index}", c_in, filters, rng, activation="relu"),
        BatchNorm(f"{prefix}.bn{index}", filters),
        MaxPoolFreq(f"{prefix}.pool{index}", pool),
        Dropout(f"{prefix}.conv_drop{index}", dropout, drop_rng),
    ]


class DOANet:
    """
    Stage 1 and stage 2 with a shared forward/backward interface.

    Gradients from both heads meet at the SPS output; with
    `teacher_forcing`, stage 2 reads the given SPS instead and no gradient
    flows from stage 2 into stage 1.
    """

    def __init__(self, config: Optional[NetworkConfig] = None, seed: int = 0) -> None:
        self.config = config if config is not None else NetworkConfig()
        self.config.validate()
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

        s1_conv: list[Layer] = []
        c_in = cfg.input_channels
        for i, pool in enumerate(cfg.conv_pools, start=1):
            s1_conv += _conv_block("s1", i, c_in, cfg.conv_filters, pool, cfg.dropout, rng, drop_rng)
            c_in = cfg.conv_filters
        s1_rnn: list[Layer] = []
        d = cfg.stage1_features
        for i, h in enumerate(cfg.gru_units, start=1):
            s1_rnn += [BiGRU(f"s1.gru{i}", d, h, rng), Dropout(f"s1.gru_drop{i}", cfg.dropout, drop_rng)]
            d = 2 * h
        s1_rnn.append(Dense("s1.fc_sps", d, cfg.sps_size, rng, activation="linear"))

        s2_conv: list[Layer] = [EdgePadFreq("s2.pad", cfg.stage2_padded)]
        c_in = 1
        for i, pool in enumerate(cfg.stage2_pools, start=1):
            s2_conv += _conv_block("s2", i, c_in, cfg.stage2_filters, pool, cfg.dropout, rng, drop_rng)
            c_in = cfg.stage2_filters
        s2_rnn: list[Layer] = [
            Dense("s2.fc_reduce", cfg.stage2_features, cfg.fc_units, rng, activation="linear"),
            Dropout("s2.fc_drop", cfg.dropout, drop_rng),
        ]
        d = cfg.fc_units
        for i, h in enumerate(cfg.stage2_gru_units, start=1):
            s2_rnn += [BiGRU(f"s2.gru{i}", d, h, rng), Dropout(f"s2.gru_drop{i}", cfg.dropout, drop_rng)]
            d = 2 * h
        s2_rnn.append(Dense("s2.fc_doa", d, cfg.doa_size, rng, activation="sigmoid"))

        self.stage1_conv = Sequential(s1_conv)
        self.stage1_rnn = Sequential(s1_rnn)
        self.stage2_conv = Sequential(s2_conv)
        self.stage2_rnn = Sequential(s2_rnn)
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._teacher_forced = False

    # -----------------------------------------------------------------------
    # Parameters
    # -----------------------------------------------------------------------

    def layers(self) -> Iterator[Layer]:
        for stack in (self.stage1_conv, self.stage1_rnn, self.stage2_conv, self.stage2_rnn):
            yield from stack.layers

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers())

    def trainable(self) -> Iterator[tuple[str, Layer, str]]:
        for layer in self.layers():
            for key in layer.params:
                yield f"{layer.name}.{key}", layer, key

    def get_parameters(self) -> NetworkParameters:
        arrays: dict[str, np.ndarray] = {}
        for layer in self.layers():
            for store in (layer.params, layer.buffers):
                for key, value in store.items():
                    arrays[f"{layer.name}.{key}"] = value.copy()
        return NetworkParameters(self.config, arrays)

    def set_parameters(self, params: NetworkParameters) -> None:
        if params.config != self.config:
            raise ValidationError("Parameter file was written for a different network configuration")
        seen: set[str] = set()
        for layer in self.layers():
            for store in (layer.params, layer.buffers):
                for key in store:
                    full = f"{layer.name}.{key}"
                    if full not in params.arrays:
                        raise ValidationError(f"Parameter {full!r} missing from parameter set")
                    value = params.arrays[full]
                    if value.shape != store[key].shape:
                        raise ValidationError(
                            f"Parameter {full!r} has shape {value.shape}, expected {store[key].shape}"
                        )
                    store[key] = value.astype(store[key].dtype, copy=True)
                    seen.add(full)
        extra = set(params.arrays) - seen
        if extra:
            raise ValidationError(f"Unexpected parameters: {sorted(extra)[:5]}")

    def cast(self, dtype: type) -> None:
        for layer in self.layers():
            layer.cast(dtype)

    # -----------------------------------------------------------------------
    # Forward / backward
    # -----------------------------------------------------------------------

    def forward(
        self,
        features: np.ndarray,
        training: bool = False,
        sps_input: Optional[np.ndarray] = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        features (B, L, 1024, 8) -> (sps (B, L, 614), doa_probs (B, L, 432)).

        `sps_input` replaces the predicted SPS as stage-2 input (teacher forcing).
        """
        cfg = self.config
        if features.ndim == 3:
            features = features[None]
        if features.shape[2:] != (cfg.input_bins, cfg.input_channels):
            raise ValidationError(
                f"Input shape {features.shape} does not match ({cfg.input_bins}, {cfg.input_channels}) bins x channels"
            )
        b, t = features.shape[:2]
        h = self.stage1_conv.forward(features, training)
        self._shapes["s1"] = h.shape
        sps = self.stage1_rnn.forward(h.reshape(b, t, -1), training)

        self._teacher_forced = sps_input is not None
        stage2_in = sps if sps_input is None else np.asarray(sps_input, dtype=sps.dtype)
        if stage2_in.shape != sps.shape:
            raise ValidationError(f"Teacher-forced SPS shape {stage2_in.shape} != {sps.shape}")
        h2 = self.stage2_conv.forward(stage2_in[..., None], training)
        self._shapes["s2"] = h2.shape
        probs = self.stage2_rnn.forward(h2.reshape(b, t, -1), training)
        return sps, probs

    def backward(self, d_sps: np.ndarray, d_probs: np.ndarray) -> None:
        """Fill every layer's grads from output gradients of the last forward call."""
        dh2 = self.stage2_rnn.backward(d_probs).reshape(self._shapes["s2"])
        d_stage2_in = self.stage2_conv.backward(dh2)[..., 0]
        total = d_sps if self._teacher_forced else d_sps + d_stage2_in
        dh = self.stage1_rnn.backward(total).reshape(self._shapes["s1"])
        self.stage1_conv.backward(dh)

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer, key in self.trainable():
            out[name] = layer.grads[key]
        return out
