"""Finite-difference oracle and small fixtures shared by the test modules."""

import numpy as np

from entityfusion import nn
from entityfusion.models import Batch, ModelConfig, ModelKind, build

EPS = 1e-5
# below this magnitude both gradients count as zero and the absolute gap is used
FLOOR = 1e-7

TINY = ModelConfig(input_dim=3, hidden_dim=4, fc_dim_baseline=6, fc_dim_proposed=7,
                   conv_filters=(2, 3, 4), kernel_size=3, dropout=0.2, embed_dim=5, k_max=8)


def rel_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x``, perturbed in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def gru_grad_errors(seed: int) -> dict[str, float]:
    """GRU cell over a 5-step sequence with an initial state, against a random upstream."""
    rng = np.random.default_rng(seed)
    cell = nn.GruCell.init(3, 4, rng)
    for p in cell.params().values():
        p += rng.normal(scale=0.3, size=p.shape)
    seq = rng.normal(size=(5, 3))
    h0 = rng.normal(size=4)
    upstream = rng.normal(size=(5, 4))

    def loss():
        s, _ = nn.gru_forward(cell, seq, h0)
        return float(np.sum(s * upstream))

    _, cache = nn.gru_forward(cell, seq, h0)
    grads, g_seq, g_h0 = nn.gru_backward(cache, upstream)
    errs = {k: rel_error(grads[k], numeric_grad(loss, p)) for k, p in cell.params().items()}
    errs["input"] = rel_error(g_seq, numeric_grad(loss, seq))
    errs["h0"] = rel_error(g_h0, numeric_grad(loss, h0))
    return errs


def conv_grad_errors(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    layer = nn.Conv1dLayer.init(3, 4, 3, rng)
    layer.bias += rng.normal(size=4)
    x = rng.normal(size=(2, 7, 3))
    upstream = rng.normal(size=(2, 5, 4))

    def loss():
        out, _ = nn.conv1d_forward(layer, x)
        return float(np.sum(out * upstream))

    _, cache = nn.conv1d_forward(layer, x)
    grads, dx = nn.conv1d_backward(cache, upstream)
    errs = {k: rel_error(grads[k], numeric_grad(loss, p)) for k, p in layer.params().items()}
    errs["input"] = rel_error(dx, numeric_grad(loss, x))
    return errs


def dense_grad_errors(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    layer = nn.DenseLayer(rng.normal(size=(3, 4)), rng.normal(size=3))
    x = rng.normal(size=(5, 4))
    upstream = rng.normal(size=(5, 3))

    def loss():
        y, _ = nn.dense_forward(layer, x)
        return float(np.sum(y * upstream))

    grads, dx = nn.dense_backward(layer, x, upstream)
    errs = {k: rel_error(grads[k], numeric_grad(loss, p)) for k, p in layer.params().items()}
    errs["input"] = rel_error(dx, numeric_grad(loss, x))
    return errs


def tiny_batch(kind, cfg: ModelConfig = TINY, n: int = 3, T: int = 5, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    ts = rng.normal(size=(n, T, cfg.input_dim))
    vector = rng.normal(size=(n, cfg.embed_dim))
    matrix = rng.normal(size=(n, cfg.k_max, cfg.embed_dim))
    matrix[:, cfg.k_max - 2:] = 0.0          # padded rows, as real inputs have
    model_uses = build(kind, cfg, nn.make_rng(0)).uses
    return Batch(ts if model_uses["gru"] else None,
                 vector if model_uses["vector"] else None,
                 matrix if model_uses["cnn"] else None)


def perturbed_model(kind, cfg: ModelConfig = TINY, seed: int = 0):
    """Built model with every array (biases too) jittered off ReLU kinks."""
    model = build(kind, cfg, nn.make_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for p in model.parameters().values():
        p += rng.normal(scale=0.3, size=p.shape)
    return model


def model_grad_errors(kind, cfg: ModelConfig = TINY, seed: int = 0) -> dict[str, float]:
    """Max relative error per parameter block for a weighted sum of logits.

    Dropout is active with a fixed mask so its backward path is covered too.
    """
    model = perturbed_model(kind, cfg, seed)
    batch = tiny_batch(kind, cfg, seed=seed)
    weights = np.random.default_rng(seed + 7).normal(size=len(batch))

    def loss():
        logits, _ = model.forward(batch, training=True, rng=nn.make_rng(42))
        return float(weights @ logits)

    _, cache = model.forward(batch, training=True, rng=nn.make_rng(42))
    grads = model.backward(cache, weights)
    return {name: rel_error(grads[name], numeric_grad(loss, p)) for name, p in model.parameters().items()}


ALL_KINDS = list(ModelKind)
