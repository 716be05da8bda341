"""Loss, Adam, early-stopped training and the multi-seed evaluation protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .features import Dataset
from .metrics import METRICS
from .models import Model, ModelConfig, ModelKind, build

log = logging.getLogger(__name__)

P_CLAMP = 1e-12


def bce_loss(p, y, model: Optional[Model] = None, l2_scale: float = 0.0) -> float:
    """Mean binary cross-entropy plus ``l2_scale`` times the squared dense weights."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"probabilities ({p.size}) and labels ({y.size}) differ in length")
    p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    if model is not None and l2_scale:
        loss += l2_scale * model.l2_penalty()
    return loss


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE evaluated on logits, and its gradient with respect to them."""
    z = np.asarray(logits, dtype=np.float64)
    # softplus(z) - y z, written to stay finite for large |z|
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (nn.sigmoid(z) - y) / z.size
    return float(loss.mean()), grad


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update applied in place, in ``params`` order."""
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for {name}")
        if grads[name].shape != p.shape:
            raise ValueError(f"{name}: gradient shape {grads[name].shape} does not match parameter {p.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class TrainSpec:
    max_epochs: int = 50
    patience: Optional[int] = 5          # None disables early stopping
    batch_size: int = 64
    seeds: tuple[int, ...] = tuple(range(1, 11))
    l2_scale: float = 0.01
    lr: float = 0.001
    threshold: float = 0.5
    restore_best: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience is not None and not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"patience must lie in [1, max_epochs], got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def evaluate_loss(model: Model, data: Dataset, l2_scale: float, batch_size: int = 256) -> float:
    """Inference-mode BCE over ``data`` plus the L2 penalty."""
    total = 0.0
    for start in range(0, len(data), batch_size):
        part = data.take(np.arange(start, min(start + batch_size, len(data))))
        logits, _ = model.forward(part.batch)
        loss, _ = bce_with_logits(logits, part.y)
        total += loss * len(part)
    return total / len(data) + l2_scale * model.l2_penalty()


def train_step(model: Model, batch: Dataset, state: AdamState, l2_scale: float, rng) -> float:
    logits, cache = model.forward(batch.batch, training=True, rng=rng)
    loss, grad = bce_with_logits(logits, batch.y)
    grads = model.backward(cache, grad)
    if l2_scale:
        params = model.parameters()
        for name in model.dense_weight_names():
            grads[name] = grads[name] + 2.0 * l2_scale * params[name]
        loss += l2_scale * model.l2_penalty()
    adam_step(state, model.parameters(), grads)
    return loss


def train(model: Model, train_data: Dataset, val_data: Dataset, spec: TrainSpec, rng) -> tuple[Model, History]:
    """Shuffled mini-batch Adam with early stopping on validation loss.

    The parameters of the best validation epoch are restored at the end.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if val_data is not train_data and set(train_data.ids) & set(val_data.ids):
        raise ValueError("training and validation patients overlap")
    state = AdamState(lr=spec.lr)
    hist = History()
    best_loss = np.inf
    best_params = model.copy_parameters()
    wait = 0
    n = len(train_data)
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            running += train_step(model, train_data.take(idx), state, spec.l2_scale, rng) * idx.size
        hist.train_loss.append(running / n)
        val_loss = evaluate_loss(model, val_data, spec.l2_scale)
        hist.val_loss.append(val_loss)
        hist.stopped_epoch = epoch
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = model.copy_parameters()
            hist.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if spec.patience is not None and wait >= spec.patience:
                log.debug("early stop at epoch %d (best %d)", epoch, hist.best_epoch)
                break
    if spec.restore_best:
        model.load_parameters(best_params)
    return model, hist


def evaluate(model: Model, data: Dataset, threshold: float = 0.5) -> dict[str, float]:
    p = model.predict_proba(data.batch)
    out = {}
    for name, fn in METRICS.items():
        out[name] = fn(p, data.y, threshold) if name == "f1" else fn(p, data.y)
    return out


@dataclass
class MetricsReport:
    task: str
    model: str
    embedding: str
    seeds: list[int]
    values: dict[str, list[float]]          # metric -> one value per seed

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values[metric]))

    def std(self, metric: str) -> float:
        # population std over seeds: a single seed reports 0
        return float(np.std(self.values[metric]))


def run_protocol(kind: ModelKind, cfg: ModelConfig, spec: TrainSpec,
                 split: Sequence[Dataset], task: str, embedding: str = "-",
                 histories: Optional[list] = None) -> MetricsReport:
    """Train one fresh model per seed and score each on the test partition."""
    train_data, val_data, test_data = split
    values: dict[str, list[float]] = {m: [] for m in METRICS}
    for seed in spec.seeds:
        rng = nn.make_rng(seed)
        model = build(kind, cfg, rng)
        model, hist = train(model, train_data, val_data, spec, rng)
        scores = evaluate(model, test_data, spec.threshold)
        for m, v in scores.items():
            values[m].append(v)
        if histories is not None:
            histories.append((seed, hist))
        log.info("%s/%s seed %d: auroc %.4f (epochs %d, best %d)", kind.value, embedding, seed,
                 scores["auroc"], hist.stopped_epoch, hist.best_epoch)
    return MetricsReport(task, kind.value, embedding, list(spec.seeds), values)
