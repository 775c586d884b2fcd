"""
Differentiable layers in numpy, channels-last.

Every layer keeps what its backward pass needs from the last forward call:
- forward(x, training) -> y
- backward(dy) -> dx, filling `grads` with one entry per `params` entry

Trainable arrays live in `params`; batch-norm running statistics live in
`buffers` (saved with the parameters, never updated by the optimizer).
Arithmetic follows the dtype of the parameters and inputs, so casting a
layer to float64 gives a gradient-checkable copy.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from doanet.errors import ValidationError

ACTIVATIONS = ("linear", "relu", "sigmoid")
BN_MOMENTUM = 0.99
BN_EPSILON = 1e-5
BCE_CLIP = 1e-7


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float) -> np.ndarray:
    limit = np.sqrt(gain / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Layer:
    """Base class: named parameters, gradients and buffers."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values()) + sum(b.size for b in self.buffers.values())

    def cast(self, dtype: type) -> None:
        for store in (self.params, self.buffers):
            for key in store:
                store[key] = store[key].astype(dtype)

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValidationError(f"Unknown activation {activation!r}; choose from {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# Convolution / normalization / pooling
# ---------------------------------------------------------------------------


class Conv2D(Layer):
    """
    3x3 convolution over (time, frequency), stride 1, zero 'same' padding.

    x: (B, T, F, C_in) -> (B, T, F, C_out). Computed as nine shifted
    matrix products, one per kernel tap.
    """

    KERNEL = 3

    def __init__(
        self,
        name: str,
        in_channels: int,
        filters: int,
        rng: np.random.Generator,
        activation: str = "relu",
    ) -> None:
        super().__init__(name)
        _check_activation(activation)
        self.activation = activation
        k = self.KERNEL
        fan_in = k * k * in_channels
        gain = 6.0 if activation == "relu" else 3.0
        self.params["W"] = _uniform(rng, (k, k, in_channels, filters), fan_in, gain)
        self.params["b"] = np.zeros(filters, dtype=np.float32)
        self._xp: Optional[np.ndarray] = None
        self._y: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        w, b = self.params["W"], self.params["b"]
        if x.ndim != 4 or x.shape[-1] != w.shape[2]:
            raise ValidationError(
                f"{self.name}: expected (B, T, F, {w.shape[2]}) input, got {x.shape}"
            )
        _, t, f, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        z = np.zeros(x.shape[:3] + (w.shape[3],), dtype=np.result_type(x, w))
        for di in range(self.KERNEL):
            for dj in range(self.KERNEL):
                z += xp[:, di : di + t, dj : dj + f, :] @ w[di, dj]
        z += b
        y = np.maximum(z, 0) if self.activation == "relu" else (_sigmoid(z) if self.activation == "sigmoid" else z)
        self._xp, self._y = xp, y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        assert self._xp is not None and self._y is not None
        w = self.params["W"]
        xp, y = self._xp, self._y
        if self.activation == "relu":
            dz = dy * (y > 0)
        elif self.activation == "sigmoid":
            dz = dy * y * (1 - y)
        else:
            dz = dy
        _, t, f, _ = dz.shape
        c_in, c_out = w.shape[2], w.shape[3]
        dz_flat = dz.reshape(-1, c_out)
        dw = np.zeros_like(w)
        dxp = np.zeros_like(xp, dtype=np.result_type(xp, dz))
        for di in range(self.KERNEL):
            for dj in range(self.KERNEL):
                window = xp[:, di : di + t, dj : dj + f, :]
                dw[di, dj] = window.reshape(-1, c_in).T @ dz_flat
                dxp[:, di : di + t, dj : dj + f, :] += dz @ w[di, dj].T
        self.grads = {"W": dw, "b": dz.sum(axis=(0, 1, 2))}
        return dxp[:, 1:-1, 1:-1, :]


class BatchNorm(Layer):
    """
    Per-channel batch normalization over all axes but the last.

    Training uses batch statistics and updates running averages
    (momentum 0.99); inference uses the running averages.
    """

    def __init__(self, name: str, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON) -> None:
        super().__init__(name)
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)
        self._cache: Optional[tuple[np.ndarray, np.ndarray, bool]] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.shape[-1] != self.params["gamma"].shape[0]:
            raise ValidationError(f"{self.name}: channel mismatch {x.shape[-1]} vs {self.params['gamma'].shape[0]}")
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(
                self.buffers["running_mean"].dtype
            )
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * var).astype(
                self.buffers["running_var"].dtype
            )
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, training)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        assert self._cache is not None
        xhat, inv_std, training = self._cache
        axes = tuple(range(dy.ndim - 1))
        gamma = self.params["gamma"]
        self.grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * gamma
        if not training:
            return dxhat * inv_std
        n = dy.size // dy.shape[-1]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )


class MaxPoolFreq(Layer):
    """Non-overlapping max pooling along the frequency axis of (B, T, F, C)."""

    def __init__(self, name: str, pool: int) -> None:
        super().__init__(name)
        if pool < 1:
            raise ValidationError(f"{name}: pool size must be >= 1, got {pool}")
        self.pool = pool
        self._arg: Optional[np.ndarray] = None
        self._shape: tuple[int, ...] = ()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        b, t, f, c = x.shape
        if f % self.pool:
            raise ValidationError(f"{self.name}: frequency size {f} not divisible by pool {self.pool}")
        blocks = x.reshape(b, t, f // self.pool, self.pool, c)
        # argmax returns the first maximum, so ties route to the lowest index
        arg = np.argmax(blocks, axis=3)[:, :, :, None, :]
        self._arg, self._shape = arg, blocks.shape
        return np.take_along_axis(blocks, arg, axis=3)[:, :, :, 0, :]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        assert self._arg is not None
        b, t, fp, p, c = self._shape
        dx = np.zeros(self._shape, dtype=dy.dtype)
        np.put_along_axis(dx, self._arg, dy[:, :, :, None, :], axis=3)
        return dx.reshape(b, t, fp * p, c)


class EdgePadFreq(Layer):
    """Repeat the last frequency bin until the axis has `target` bins."""

    def __init__(self, name: str, target: int) -> None:
        super().__init__(name)
        self.target = target
        self._f = 0

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._f = x.shape[2]
        if self._f > self.target:
            raise ValidationError(f"{self.name}: {self._f} bins exceed pad target {self.target}")
        return np.pad(x, ((0, 0), (0, 0), (0, self.target - self._f), (0, 0)), mode="edge")

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = dy[:, :, : self._f, :].copy()
        dx[:, :, -1, :] += dy[:, :, self._f :, :].sum(axis=2)
        return dx


# ---------------------------------------------------------------------------
# Recurrent
# ---------------------------------------------------------------------------


class GRU(Layer):
    """
    Single-direction GRU over (B, T, D) -> (B, T, H), zero initial state.

        z  = sigmoid(x W_z + b_z + h U_z + c_z)
        r  = sigmoid(x W_r + b_r + h U_r + c_r)
        h~ = tanh(x W_h + b_h + r * (h U_h + c_h))
        h' = (1 - z) * h + z * h~

    W is (D, 3H) and U is (H, 3H), gate blocks ordered [z, r, h].
    """

    def __init__(self, name: str, input_size: int, units: int, rng: np.random.Generator) -> None:
        super().__init__(name)
        self.units = units
        self.params["W"] = _uniform(rng, (input_size, 3 * units), input_size, 3.0)
        self.params["U"] = _uniform(rng, (units, 3 * units), units, 3.0)
        self.params["b_in"] = np.zeros(3 * units, dtype=np.float32)
        self.params["b_rec"] = np.zeros(3 * units, dtype=np.float32)
        self._cache: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        w, u = self.params["W"], self.params["U"]
        if x.ndim != 3 or x.shape[-1] != w.shape[0]:
            raise ValidationError(f"{self.name}: expected (B, T, {w.shape[0]}) input, got {x.shape}")
        bsz, steps, _ = x.shape
        hn = self.units
        dtype = np.result_type(x, w)
        xw = x @ w + self.params["b_in"]
        hs = np.zeros((bsz, steps + 1, hn), dtype=dtype)
        zs = np.empty((bsz, steps, hn), dtype=dtype)
        rs = np.empty_like(zs)
        cands = np.empty_like(zs)
        hus = np.empty_like(zs)
        for t in range(steps):
            h_prev = hs[:, t]
            hu = h_prev @ u + self.params["b_rec"]
            z = _sigmoid(xw[:, t, :hn] + hu[:, :hn])
            r = _sigmoid(xw[:, t, hn : 2 * hn] + hu[:, hn : 2 * hn])
            cand = np.tanh(xw[:, t, 2 * hn :] + r * hu[:, 2 * hn :])
            hs[:, t + 1] = (1 - z) * h_prev + z * cand
            zs[:, t], rs[:, t], cands[:, t], hus[:, t] = z, r, cand, hu[:, 2 * hn :]
        self._cache = {"x": x, "hs": hs, "z": zs, "r": rs, "cand": cands, "hu_h": hus}
        return hs[:, 1:]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        c = self._cache
        w, u = self.params["W"], self.params["U"]
        x, hs = c["x"], c["hs"]
        bsz, steps, hn = dy.shape
        dxw = np.zeros((bsz, steps, 3 * hn), dtype=np.result_type(dy, w))
        du = np.zeros_like(u, dtype=dxw.dtype)
        db_rec = np.zeros(3 * hn, dtype=dxw.dtype)
        dh_next = np.zeros((bsz, hn), dtype=dxw.dtype)
        for t in reversed(range(steps)):
            h_prev = hs[:, t]
            z, r, cand, hu_h = c["z"][:, t], c["r"][:, t], c["cand"][:, t], c["hu_h"][:, t]
            dh = dy[:, t] + dh_next
            da_h = dh * z * (1 - cand**2)
            da_z = dh * (cand - h_prev) * z * (1 - z)
            da_r = da_h * hu_h * r * (1 - r)
            dxw[:, t] = np.concatenate([da_z, da_r, da_h], axis=1)
            dhu = np.concatenate([da_z, da_r, da_h * r], axis=1)
            du += h_prev.T @ dhu
            db_rec += dhu.sum(axis=0)
            dh_next = dh * (1 - z) + dhu @ u.T
        flat = dxw.reshape(-1, 3 * hn)
        self.grads = {
            "W": x.reshape(-1, x.shape[-1]).T @ flat,
            "U": du,
            "b_in": flat.sum(axis=0),
            "b_rec": db_rec,
        }
        return dxw @ w.T


class BiGRU(Layer):
    """Forward and time-reversed GRU, outputs concatenated to (B, T, 2H)."""

    def __init__(self, name: str, input_size: int, units: int, rng: np.random.Generator) -> None:
        super().__init__(name)
        self.forward_cell = GRU(f"{name}.fwd", input_size, units, rng)
        self.backward_cell = GRU(f"{name}.bwd", input_size, units, rng)
        self.units = units
        self._sync()

    def _sync(self) -> None:
        self.params = {}
        for tag, cell in (("fwd", self.forward_cell), ("bwd", self.backward_cell)):
            for key, value in cell.params.items():
                self.params[f"{tag}.{key}"] = value

    def _push(self) -> None:
        for key, value in self.params.items():
            tag, sub = key.split(".", 1)
            cell = self.forward_cell if tag == "fwd" else self.backward_cell
            cell.params[sub] = value

    def cast(self, dtype: type) -> None:
        super().cast(dtype)
        self._push()

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._push()
        out_f = self.forward_cell.forward(x, training)
        out_b = self.backward_cell.forward(x[:, ::-1], training)[:, ::-1]
        return np.concatenate([out_f, out_b], axis=-1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        h = self.units
        dx = self.forward_cell.backward(dy[..., :h])
        dx = dx + self.backward_cell.backward(np.ascontiguousarray(dy[:, ::-1, h:]))[:, ::-1]
        self.grads = {}
        for tag, cell in (("fwd", self.forward_cell), ("bwd", self.backward_cell)):
            for key, value in cell.grads.items():
                self.grads[f"{tag}.{key}"] = value
        return dx


# ---------------------------------------------------------------------------
# Dense / dropout
# ---------------------------------------------------------------------------


class Dense(Layer):
    """Time-distributed affine map over the last axis, with activation."""

    def __init__(
        self,
        name: str,
        input_size: int,
        units: int,
        rng: np.random.Generator,
        activation: str = "linear",
    ) -> None:
        super().__init__(name)
        _check_activation(activation)
        self.activation = activation
        gain = 6.0 if activation == "relu" else 3.0
        self.params["W"] = _uniform(rng, (input_size, units), input_size, gain)
        self.params["b"] = np.zeros(units, dtype=np.float32)
        self._x: Optional[np.ndarray] = None
        self._y: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        w = self.params["W"]
        if x.shape[-1] != w.shape[0]:
            raise ValidationError(f"{self.name}: expected last axis {w.shape[0]}, got {x.shape}")
        z = x @ w + self.params["b"]
        if self.activation == "sigmoid":
            y = _sigmoid(z)
        elif self.activation == "relu":
            y = np.maximum(z, 0)
        else:
            y = z
        self._x, self._y = x, y
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        assert self._x is not None and self._y is not None
        if self.activation == "sigmoid":
            dz = dy * self._y * (1 - self._y)
        elif self.activation == "relu":
            dz = dy * (self._y > 0)
        else:
            dz = dy
        w = self.params["W"]
        self.grads = {
            "W": self._x.reshape(-1, w.shape[0]).T @ dz.reshape(-1, w.shape[1]),
            "b": dz.reshape(-1, w.shape[1]).sum(axis=0),
        }
        return dz @ w.T


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, name: str, rate: float, rng: np.random.Generator) -> None:
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"{name}: dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _frame_weights(shape: tuple[int, ...], mask: Optional[np.ndarray]) -> tuple[np.ndarray, float]:
    # mask is (B, T) over frames; broadcast across the last axis
    if mask is None:
        return np.ones(shape[:-1] + (1,)), float(np.prod(shape))
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != shape[:-1]:
        raise ValidationError(f"Frame mask shape {m.shape} does not match {shape[:-1]}")
    return m[..., None], float(m.sum() * shape[-1])


def mse_loss(
    pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Mean squared error over valid elements and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ValidationError(f"MSE shape mismatch: {pred.shape} vs {target.shape}")
    weight, count = _frame_weights(pred.shape, mask)
    if count == 0:
        return 0.0, np.zeros_like(pred)
    diff = (pred - target) * weight
    loss = float(np.sum(diff * diff) / count)
    return loss, (2.0 * diff / count).astype(pred.dtype)


def bce_loss(
    prob: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """
    Binary cross-entropy on probabilities clipped to [1e-7, 1 - 1e-7].

    The gradient is w.r.t. the (unclipped) probabilities and is zero where
    clipping is active.
    """
    if prob.shape != target.shape:
        raise ValidationError(f"BCE shape mismatch: {prob.shape} vs {target.shape}")
    weight, count = _frame_weights(prob.shape, mask)
    if count == 0:
        return 0.0, np.zeros_like(prob)
    p = np.clip(prob, BCE_CLIP, 1.0 - BCE_CLIP)
    elementwise = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    loss = float(np.sum(elementwise * weight) / count)
    inside = (prob >= BCE_CLIP) & (prob <= 1.0 - BCE_CLIP)
    grad = (-(target / p) + (1.0 - target) / (1.0 - p)) * weight * inside / count
    return loss, grad.astype(prob.dtype)
