"""
Training loop, Adam optimizer and inference for DOANet.

Training:
- mini-batch Adam on  sps_weight * MSE(SPS) + doa_weight * BCE(DOA)
- padded frames are masked out of both losses
- after each epoch the DOA metric (mean of normalized DOA error and frame
  miss rate, threshold mode) is computed on the validation sequences
- the best-metric parameters are kept; training stops after `patience`
  epochs without improvement or at `max_epochs`

Inference returns the stage-1 SPS and per-frame DOA sets, either
thresholded at 0.5 or as the top-o probabilities for known counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from doanet.errors import NumericError, ValidationError
from doanet.geometry import DirectionGrid, build_doa_grid
from doanet.layers import bce_loss, mse_loss
from doanet.metrics import doa_error, early_stopping_metric, frame_recall
from doanet.model import Direction
from doanet.network import DOANet, NetworkParameters

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
MODES = ("threshold", "top-o")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    sps_loss_weight: float = 1.0
    doa_loss_weight: float = 1.0
    teacher_forcing: bool = False
    sps_target: str = "music"

    def validate(self) -> None:
        if self.max_epochs < 1:
            raise ValidationError(f"training.max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValidationError(
                f"training.patience must be in [0, max_epochs={self.max_epochs}], got {self.patience}"
            )
        if self.batch_size < 1:
            raise ValidationError(f"training.batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValidationError("training.learning_rate and training.epsilon must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("training.beta1 and training.beta2 must be in [0, 1)")
        if self.sps_loss_weight < 0 or self.doa_loss_weight < 0:
            raise ValidationError("Loss weights must be >= 0")
        if self.sps_loss_weight == 0 and self.doa_loss_weight == 0:
            raise ValidationError("At least one loss weight must be > 0")
        if self.sps_target not in ("music", "oracle"):
            raise ValidationError(f"training.sps_target must be 'music' or 'oracle', got {self.sps_target!r}")


@dataclass
class SequenceItem:
    """
    One L-frame training sequence.

    Features are loaded on demand; targets are kept in memory.
    """

    load_features: Callable[[], np.ndarray]
    sps_target: np.ndarray  # (L, 614)
    doa_target: np.ndarray  # (L, 432)
    valid_frames: int


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mse: float
    bce: float
    total: float
    doa_metric: float
    best: bool


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * math.sqrt(1 - b2**self.step_count) / (1 - b1**self.step_count)
        for name in sorted(params):
            p, g = params[name], grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m.") :]] = value.copy()
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v.") :]] = value.copy()
        if "adam.step" in arrays:
            self.step_count = int(arrays["adam.step"][0])


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def select_threshold(probs: np.ndarray, threshold: float = THRESHOLD) -> list[list[int]]:
    """Per frame: indices with probability strictly above `threshold`."""
    return [np.nonzero(row > threshold)[0].tolist() for row in probs]


def select_top_o(probs: np.ndarray, counts: Sequence[int] | np.ndarray) -> list[list[int]]:
    """Per frame: the o largest probabilities (ties to the lower index)."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (probs.shape[0],):
        raise ValidationError(
            f"top-o mode needs one source count per frame: got {counts.shape} for {probs.shape[0]} frames"
        )
    out: list[list[int]] = []
    for row, o in zip(probs, counts):
        order = np.argsort(-row, kind="stable")
        out.append(sorted(order[: int(o)].tolist()))
    return out


def indices_to_directions(frames: Sequence[Sequence[int]], grid: DirectionGrid) -> list[tuple[Direction, ...]]:
    return [tuple(grid[i] for i in idx) for idx in frames]


def target_directions(doa_target: np.ndarray, grid: DirectionGrid) -> list[tuple[Direction, ...]]:
    return indices_to_directions([np.nonzero(row > 0.5)[0].tolist() for row in doa_target], grid)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict(
    net: DOANet, items: Sequence[SequenceItem], batch_size: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated valid frames: (sps (frames, 614), probs (frames, 432))."""
    sps_out: list[np.ndarray] = []
    prob_out: list[np.ndarray] = []
    for start in range(0, len(items), batch_size):
        batch = items[start : start + batch_size]
        x = np.stack([item.load_features() for item in batch])
        sps, probs = net.forward(x, training=False)
        for k, item in enumerate(batch):
            sps_out.append(sps[k, : item.valid_frames])
            prob_out.append(probs[k, : item.valid_frames])
    if not sps_out:
        cfg = net.config
        return np.zeros((0, cfg.sps_size), np.float32), np.zeros((0, cfg.doa_size), np.float32)
    return np.concatenate(sps_out), np.concatenate(prob_out)


def infer(
    net: DOANet,
    items: Sequence[SequenceItem],
    mode: str = "threshold",
    counts: Optional[Sequence[int] | np.ndarray] = None,
    grid: Optional[DirectionGrid] = None,
    batch_size: int = 8,
) -> tuple[np.ndarray, np.ndarray, list[tuple[Direction, ...]]]:
    """
    Returns (sps, probs, per-frame DOA estimates) over the valid frames.
    """
    if mode not in MODES:
        raise ValidationError(f"Unknown inference mode {mode!r}; choose from {MODES}")
    if mode == "top-o" and counts is None:
        raise ValidationError("top-o mode needs per-frame source counts")
    grid = grid if grid is not None else build_doa_grid()
    sps, probs = predict(net, items, batch_size)
    chosen = select_threshold(probs) if mode == "threshold" else select_top_o(probs, counts)  # type: ignore[arg-type]
    return sps, probs, indices_to_directions(chosen, grid)


def evaluate_metric(
    net: DOANet, items: Sequence[SequenceItem], grid: DirectionGrid, batch_size: int = 8
) -> float:
    _, probs = predict(net, items, batch_size)
    estimates = indices_to_directions(select_threshold(probs), grid)
    truths = target_directions(np.concatenate([it.doa_target[: it.valid_frames] for it in items]), grid)
    return early_stopping_metric(doa_error(estimates, truths), frame_recall(estimates, truths))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _frame_mask(batch: Sequence[SequenceItem], length: int) -> np.ndarray:
    mask = np.zeros((len(batch), length), dtype=np.float32)
    for k, item in enumerate(batch):
        mask[k, : item.valid_frames] = 1.0
    return mask


def train_step(
    net: DOANet, optimizer: Adam, batch: Sequence[SequenceItem], config: TrainConfig
) -> tuple[float, float, float]:
    """One optimizer update; returns (mse, bce, total)."""
    x = np.stack([item.load_features() for item in batch])
    sps_t = np.stack([item.sps_target for item in batch])
    doa_t = np.stack([item.doa_target for item in batch])
    mask = _frame_mask(batch, x.shape[1])

    sps, probs = net.forward(x, training=True, sps_input=sps_t if config.teacher_forcing else None)
    mse, d_sps = mse_loss(sps, sps_t, mask)
    bce, d_probs = bce_loss(probs, doa_t, mask)
    total = config.sps_loss_weight * mse + config.doa_loss_weight * bce
    if not math.isfinite(total):
        raise NumericError(f"Non-finite training loss (mse={mse}, bce={bce})")
    net.backward(config.sps_loss_weight * d_sps, config.doa_loss_weight * d_probs)
    params = {name: layer.params[key] for name, layer, key in net.trainable()}
    optimizer.step(params, net.gradients())
    return mse, bce, total


def train(
    net: DOANet,
    train_items: Sequence[SequenceItem],
    config: TrainConfig,
    val_items: Optional[Sequence[SequenceItem]] = None,
    grid: Optional[DirectionGrid] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[NetworkParameters, list[EpochRecord], Adam]:
    """
    Train `net` in place and return the best parameters with the history.

    Without validation items the metric is computed on the training items.
    """
    config.validate()
    if not train_items:
        raise ValidationError("No training sequences")
    grid = grid if grid is not None else build_doa_grid()
    val = val_items if val_items else train_items
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)

    history: list[EpochRecord] = []
    best_metric = math.inf
    best_params = net.get_parameters()
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_items))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_items[i] for i in order[start : start + config.batch_size]]
            sums += train_step(net, optimizer, batch, config)
            n_batches += 1
        mse, bce, total = sums / n_batches
        metric = evaluate_metric(net, val, grid, config.batch_size)
        improved = metric < best_metric
        if improved:
            best_metric = metric
            best_params = net.get_parameters()
            since_best = 0
        else:
            since_best += 1
        record = EpochRecord(epoch, float(mse), float(bce), float(total), metric, improved)
        history.append(record)
        logger.debug(
            "epoch %d: mse=%.5f bce=%.5f total=%.5f metric=%.4f%s",
            epoch, mse, bce, total, metric, " *" if improved else "",
        )
        if on_epoch is not None:
            on_epoch(record)
        if since_best >= config.patience:
            logger.info("Early stop after epoch %d (best metric %.4f)", epoch, best_metric)
            break
    return best_params, history, optimizer
