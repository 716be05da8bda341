"""Dense layers with hand-written backward passes.

Every layer works in float64 and accepts either a single example or a batch
with a leading axis.  Forward functions return ``(output, cache)``; the cache
holds what the paired backward function needs and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.default_rng(seed)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}


def map_activation(kind: str, x) -> np.ndarray:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(np.asarray(x, dtype=np.float64))


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dims, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def dropout_mask(p: float, shape, rng: Rng, training: bool) -> np.ndarray:
    """Inverted-dropout keep mask; all ones at inference or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ValueError(f"expected a {ndim}-d example or {ndim + 1}-d batch, got shape {x.shape}")


# --------------------------------------------------------------------------- GRU

GRU_BLOCKS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruCell:
    input_dim: int
    hidden_dim: int
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: Rng) -> "GruCell":
        F, H = input_dim, hidden_dim
        W = {k: glorot_init(H, F, rng) for k in ("W_z", "W_r", "W_h")}
        U = {k: glorot_init(H, H, rng) for k in ("U_z", "U_r", "U_h")}
        b = {k: np.zeros(H) for k in ("b_z", "b_r", "b_h")}
        return cls(F, H, **W, **U, **b)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruCell":
        F, H = input_dim, hidden_dim
        return cls(
            F, H,
            *(np.zeros((H, F)) for _ in range(3)),
            *(np.zeros((H, H)) for _ in range(3)),
            *(np.zeros(H) for _ in range(3)),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in GRU_BLOCKS}

    def check(self) -> None:
        F, H = self.input_dim, self.hidden_dim
        for k in ("W_z", "W_r", "W_h"):
            _expect_shape(k, getattr(self, k), (H, F))
        for k in ("U_z", "U_r", "U_h"):
            _expect_shape(k, getattr(self, k), (H, H))
        for k in ("b_z", "b_r", "b_h"):
            _expect_shape(k, getattr(self, k), (H,))


def _expect_shape(name: str, arr: np.ndarray, shape: tuple) -> None:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class GruCache:
    cell: GruCell
    x: np.ndarray          # (N, T, F)
    hs: np.ndarray         # (N, T + 1, H); hs[:, 0] is h0
    z: np.ndarray
    r: np.ndarray
    uh: np.ndarray         # U_h h_{t-1}
    cand: np.ndarray       # candidate state
    single: bool


def gru_forward(cell: GruCell, seq, h0=None):
    """Run the GRU over ``seq`` of shape (T, F) or (N, T, F).

    Returns every hidden state, shape (T, H) or (N, T, H), plus a cache for
    :func:`gru_backward`.
    """
    x, single = _batched(seq, 2)
    N, T, F = x.shape
    H = cell.hidden_dim
    if F != cell.input_dim:
        raise ValueError(f"sequence has {F} features, cell expects {cell.input_dim}")
    if h0 is None:
        h = np.zeros((N, H))
    else:
        h0 = np.asarray(h0, dtype=np.float64)
        if h0.shape not in ((H,), (N, H)):
            raise ValueError(f"h0 has shape {h0.shape}, expected ({H},) or ({N}, {H})")
        h = np.broadcast_to(h0, (N, H)).copy()

    xz = x @ cell.W_z.T + cell.b_z
    xr = x @ cell.W_r.T + cell.b_r
    xh = x @ cell.W_h.T + cell.b_h

    hs = np.empty((N, T + 1, H))
    hs[:, 0] = h
    z = np.empty((N, T, H))
    r = np.empty((N, T, H))
    uh = np.empty((N, T, H))
    cand = np.empty((N, T, H))
    for t in range(T):
        z[:, t] = sigmoid(xz[:, t] + h @ cell.U_z.T)
        r[:, t] = sigmoid(xr[:, t] + h @ cell.U_r.T)
        uh[:, t] = h @ cell.U_h.T
        cand[:, t] = np.tanh(xh[:, t] + r[:, t] * uh[:, t])
        h = z[:, t] * h + (1.0 - z[:, t]) * cand[:, t]
        hs[:, t + 1] = h

    cache = GruCache(cell, x, hs, z, r, uh, cand, single)
    states = hs[:, 1:]
    return (states[0] if single else states), cache


def gru_backward(cache: GruCache, grad_states):
    """Exact gradients of the GRU forward map.

    Returns ``(param_grads, grad_seq, grad_h0)`` where ``param_grads`` is keyed
    like :data:`GRU_BLOCKS`.
    """
    cell = cache.cell
    N, T, F = cache.x.shape
    H = cell.hidden_dim
    g = np.asarray(grad_states, dtype=np.float64)
    if cache.single and g.ndim == 2:
        g = g[None]
    if g.shape != (N, T, H):
        raise ValueError(f"grad_states has shape {np.shape(grad_states)}, expected {(N, T, H) if not cache.single else (T, H)}")

    d_az = np.empty((N, T, H))
    d_ar = np.empty((N, T, H))
    d_ah = np.empty((N, T, H))
    dU_z = np.zeros((H, H))
    dU_r = np.zeros((H, H))
    dU_h = np.zeros((H, H))
    dh_next = np.zeros((N, H))
    for t in range(T - 1, -1, -1):
        dh = g[:, t] + dh_next
        h_prev = cache.hs[:, t]
        z, r, uh, cand = cache.z[:, t], cache.r[:, t], cache.uh[:, t], cache.cand[:, t]
        dz = dh * (h_prev - cand)
        ah = dh * (1.0 - z) * (1.0 - cand * cand)
        duh = ah * r
        ar = ah * uh * r * (1.0 - r)
        az = dz * z * (1.0 - z)
        d_az[:, t], d_ar[:, t], d_ah[:, t] = az, ar, ah
        dU_z += az.T @ h_prev
        dU_r += ar.T @ h_prev
        dU_h += duh.T @ h_prev
        dh_next = dh * z + az @ cell.U_z + ar @ cell.U_r + duh @ cell.U_h

    x2 = cache.x.reshape(N * T, F)
    flat = {k: v.reshape(N * T, H) for k, v in (("z", d_az), ("r", d_ar), ("h", d_ah))}
    grads = {
        "W_z": flat["z"].T @ x2,
        "W_r": flat["r"].T @ x2,
        "W_h": flat["h"].T @ x2,
        "U_z": dU_z,
        "U_r": dU_r,
        "U_h": dU_h,
        "b_z": flat["z"].sum(axis=0),
        "b_r": flat["r"].sum(axis=0),
        "b_h": flat["h"].sum(axis=0),
    }
    grad_seq = d_az @ cell.W_z + d_ar @ cell.W_r + d_ah @ cell.W_h
    if cache.single:
        return grads, grad_seq[0], dh_next[0]
    return grads, grad_seq, dh_next


# ------------------------------------------------------------------ convolution

@dataclass
class Conv1dLayer:
    in_channels: int
    out_channels: int
    kernel_size: int
    weights: np.ndarray    # (out, kernel * in), window flattened row-major
    bias: np.ndarray

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel_size: int, rng: Rng) -> "Conv1dLayer":
        w = glorot_init(out_channels, in_channels * kernel_size, rng)
        return cls(in_channels, out_channels, kernel_size, w, np.zeros(out_channels))

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def output_length(self, length: int) -> int:
        return length - self.kernel_size + 1


@dataclass
class ConvCache:
    layer: Conv1dLayer
    cols: np.ndarray       # (N, L_out, kernel * in)
    in_shape: tuple
    single: bool


def conv1d_forward(layer: Conv1dLayer, inp):
    """Valid convolution along the row axis of ``inp`` (L, d) or (N, L, d)."""
    x, single = _batched(inp, 2)
    N, L, d = x.shape
    k = layer.kernel_size
    if d != layer.in_channels:
        raise ValueError(f"input has {d} channels, layer expects {layer.in_channels}")
    if L < k:
        raise ValueError(f"input length {L} is shorter than kernel size {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=1)  # (N, Lo, d, k)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(N, L - k + 1, k * d)
    out = cols @ layer.weights.T + layer.bias
    cache = ConvCache(layer, cols, x.shape, single)
    return (out[0] if single else out), cache


def conv1d_backward(cache: ConvCache, grad_out):
    layer = cache.layer
    N, L, d = cache.in_shape
    k = layer.kernel_size
    Lo = L - k + 1
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single and g.ndim == 2:
        g = g[None]
    if g.shape != (N, Lo, layer.out_channels):
        raise ValueError(f"grad_out has shape {np.shape(grad_out)}, expected {(N, Lo, layer.out_channels)}")
    g2 = g.reshape(N * Lo, layer.out_channels)
    grads = {
        "weights": g2.T @ cache.cols.reshape(N * Lo, k * d),
        "bias": g2.sum(axis=0),
    }
    dcols = (g @ layer.weights).reshape(N, Lo, k, d)
    dx = np.zeros((N, L, d))
    for j in range(k):
        dx[:, j:j + Lo] += dcols[:, :, j]
    return grads, (dx[0] if cache.single else dx)


def global_max_pool(inp):
    """Per-channel maximum over positions; ties resolve to the lowest index."""
    x, single = _batched(inp, 2)
    if x.shape[1] == 0:
        raise ValueError("global_max_pool needs at least one position")
    idx = np.argmax(x, axis=1)                                   # (N, C)
    pooled = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0]
    if single:
        return pooled[0], idx[0]
    return pooled, idx


def global_max_pool_backward(idx, grad_pooled, length: int):
    idx = np.asarray(idx)
    g = np.asarray(grad_pooled, dtype=np.float64)
    single = idx.ndim == 1
    if single:
        idx, g = idx[None], g[None]
    N, C = idx.shape
    dx = np.zeros((N, length, C))
    np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
    return dx[0] if single else dx


# ------------------------------------------------------------------------ dense

@dataclass
class DenseLayer:
    weights: np.ndarray    # (out, in)
    bias: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.bias is None:
            self.bias = np.zeros(self.weights.shape[0])
        self.bias = np.asarray(self.bias, dtype=np.float64)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: Rng) -> "DenseLayer":
        return cls(glorot_init(out_dim, in_dim, rng), np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


def dense_forward(layer: DenseLayer, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input length {x.shape[-1]} does not match layer input {layer.in_dim}")
    return x @ layer.weights.T + layer.bias, x


def dense_backward(layer: DenseLayer, x, grad_out):
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    x2 = x.reshape(-1, layer.in_dim)
    g2 = g.reshape(-1, layer.out_dim)
    grads = {"weights": g2.T @ x2, "bias": g2.sum(axis=0)}
    return grads, g @ layer.weights
