"""The five outcome models.

All of them end in a single sigmoid unit.  Their building blocks:

================  =====  =========  ===========  ==========
kind              GRU    CNN stack  entity vec   FC layer
================  =====  =========  ===========  ==========
gru               yes    -          -            -
averaged          yes    -          mean         256
doc2vec           yes    -          doc vector   256
entities          -      yes        -            512
proposed          yes    yes        -            512
================  =====  =========  ===========  ==========
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import nn
from .entities import EntityMatrix
from .nn import Conv1dLayer, DenseLayer, GruCell, Rng

CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    GRU_BASELINE = "gru"
    AVERAGED = "averaged"
    DOC2VEC = "doc2vec"
    ENTITIES_ONLY = "entities"
    PROPOSED = "proposed"

    @property
    def title(self) -> str:
        return _TITLES[self]

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        key = name.strip().lower()
        for kind in cls:
            if key in (kind.value, kind.name.lower()):
                return kind
        raise ValueError(f"unknown model {name!r}; expected one of {[k.value for k in cls]}")


_TITLES = {
    ModelKind.GRU_BASELINE: "GRU",
    ModelKind.AVERAGED: "Averaged Multimodal",
    ModelKind.DOC2VEC: "Doc2Vec Multimodal",
    ModelKind.ENTITIES_ONLY: "Entities Only",
    ModelKind.PROPOSED: "Proposed Model",
}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 104
    hidden_dim: int = 256
    fc_dim_baseline: int = 256
    fc_dim_proposed: int = 512
    conv_filters: tuple[int, ...] = (32, 64, 96)
    kernel_size: int = 3
    dropout: float = 0.2
    embed_dim: int = 100
    k_max: int = 128
    entities_only_mode: str = "cnn"    # or "average"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        if len(self.conv_filters) != 3:
            raise ValueError(f"conv_filters must have three entries, got {self.conv_filters}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        dims = dict(input_dim=self.input_dim, hidden_dim=self.hidden_dim, fc_dim_baseline=self.fc_dim_baseline,
                    fc_dim_proposed=self.fc_dim_proposed, kernel_size=self.kernel_size,
                    embed_dim=self.embed_dim, k_max=self.k_max)
        for name, v in dims.items():
            if v < 1:
                raise ValueError(f"{name} must be positive, got {v}")
        if any(f < 1 for f in self.conv_filters):
            raise ValueError(f"conv_filters must be positive, got {self.conv_filters}")
        if self.entities_only_mode not in ("cnn", "average"):
            raise ValueError(f"entities_only_mode must be 'cnn' or 'average', got {self.entities_only_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d


def conv_lengths(k_max: int, kernel_size: int, layers: int = 3) -> list[int]:
    lengths, L = [], k_max
    for _ in range(layers):
        L = L - kernel_size + 1
        lengths.append(L)
    return lengths


def modalities(kind: ModelKind, cfg: ModelConfig) -> dict[str, bool]:
    cnn = kind is ModelKind.PROPOSED or (kind is ModelKind.ENTITIES_ONLY and cfg.entities_only_mode == "cnn")
    return {
        "gru": kind is not ModelKind.ENTITIES_ONLY,
        "cnn": cnn,
        "vector": kind in (ModelKind.AVERAGED, ModelKind.DOC2VEC)
                  or (kind is ModelKind.ENTITIES_ONLY and cfg.entities_only_mode == "average"),
        "fc": kind is not ModelKind.GRU_BASELINE,
    }


def fc_width(kind: ModelKind, cfg: ModelConfig) -> int:
    if kind in (ModelKind.AVERAGED, ModelKind.DOC2VEC):
        return cfg.fc_dim_baseline
    return cfg.fc_dim_proposed


def fusion_width(kind: ModelKind, cfg: ModelConfig) -> int:
    use = modalities(kind, cfg)
    return (cfg.hidden_dim if use["gru"] else 0) + (cfg.conv_filters[-1] if use["cnn"] else 0) \
        + (cfg.embed_dim if use["vector"] else 0)


def parameter_count(kind: ModelKind, cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    use = modalities(kind, cfg)
    F, H = cfg.input_dim, cfg.hidden_dim
    total = 0
    if use["gru"]:
        total += 3 * (H * F + H * H + H)
    if use["cnn"]:
        c_in = cfg.embed_dim
        for f in cfg.conv_filters:
            total += f * cfg.kernel_size * c_in + f
            c_in = f
    width = fusion_width(kind, cfg)
    if use["fc"]:
        fc = fc_width(kind, cfg)
        total += fc * width + fc
        width = fc
    return total + width + 1


@dataclass
class Batch:
    """Model inputs for N patients; unused modalities may be ``None``."""

    ts: Optional[np.ndarray] = None         # (N, 24, F)
    vector: Optional[np.ndarray] = None     # (N, d): entity mean or document vector
    matrix: Optional[np.ndarray] = None     # (N, K_max, d)

    def __len__(self) -> int:
        for a in (self.ts, self.vector, self.matrix):
            if a is not None:
                return a.shape[0]
        return 0

    def take(self, idx) -> "Batch":
        return Batch(*(None if a is None else a[idx] for a in (self.ts, self.vector, self.matrix)))


@dataclass
class _Cache:
    batch: Batch
    gru: object = None
    convs: list = field(default_factory=list)
    acts: list = field(default_factory=list)
    pool_idx: object = None
    fused: object = None
    fc_pre: object = None
    mask: object = None
    head_in: object = None


class Model:
    def __init__(self, kind: ModelKind, cfg: ModelConfig, rng: Rng):
        self.kind = ModelKind(kind)
        self.cfg = cfg
        self.uses = modalities(self.kind, cfg)
        if self.uses["cnn"]:
            lengths = conv_lengths(cfg.k_max, cfg.kernel_size)
            if lengths[-1] < 1:
                raise ValueError(
                    f"k_max={cfg.k_max} with kernel {cfg.kernel_size} leaves conv lengths {lengths}; "
                    f"need k_max >= {3 * (cfg.kernel_size - 1) + 1}"
                )
        self.gru = GruCell.init(cfg.input_dim, cfg.hidden_dim, rng) if self.uses["gru"] else None
        self.convs: list[Conv1dLayer] = []
        if self.uses["cnn"]:
            c_in = cfg.embed_dim
            for f in cfg.conv_filters:
                self.convs.append(Conv1dLayer.init(c_in, f, cfg.kernel_size, rng))
                c_in = f
        width = fusion_width(self.kind, cfg)
        self.fc = DenseLayer.init(width, fc_width(self.kind, cfg), rng) if self.uses["fc"] else None
        self.head = DenseLayer.init(self.fc.out_dim if self.fc else width, 1, rng)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array, in a fixed order, keyed ``layer.block``."""
        out: dict[str, np.ndarray] = {}
        if self.gru is not None:
            out.update({f"gru.{k}": v for k, v in self.gru.params().items()})
        for i, conv in enumerate(self.convs, start=1):
            out.update({f"conv{i}.{k}": v for k, v in conv.params().items()})
        if self.fc is not None:
            out.update({f"fc.{k}": v for k, v in self.fc.params().items()})
        out.update({f"head.{k}": v for k, v in self.head.params().items()})
        return out

    def dense_weight_names(self) -> list[str]:
        return [n for n in ("fc.weights", "head.weights") if n in self.parameters()]

    def l2_penalty(self) -> float:
        params = self.parameters()
        return float(sum(np.sum(params[n] ** 2) for n in self.dense_weight_names()))

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ValueError(f"parameter names differ: {sorted(set(values) ^ set(params))}")
        for k, v in values.items():
            if v.shape != params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {params[k].shape}")
            params[k][...] = v

    # -- forward / backward -------------------------------------------------

    def _check(self, batch: Batch) -> None:
        cfg = self.cfg
        if self.uses["gru"]:
            if batch.ts is None or batch.ts.ndim != 3 or batch.ts.shape[2] != cfg.input_dim:
                raise ValueError(f"{self.kind.value} needs time series shaped (N, T, {cfg.input_dim}), "
                                 f"got {None if batch.ts is None else batch.ts.shape}")
        if self.uses["vector"]:
            if batch.vector is None or batch.vector.ndim != 2 or batch.vector.shape[1] != cfg.embed_dim:
                raise ValueError(f"{self.kind.value} needs entity vectors shaped (N, {cfg.embed_dim}), "
                                 f"got {None if batch.vector is None else batch.vector.shape}")
        if self.uses["cnn"]:
            if batch.matrix is None or batch.matrix.shape[1:] != (cfg.k_max, cfg.embed_dim):
                raise ValueError(f"{self.kind.value} needs entity matrices shaped (N, {cfg.k_max}, {cfg.embed_dim}), "
                                 f"got {None if batch.matrix is None else batch.matrix.shape}")

    def forward(self, batch: Batch, training: bool = False, rng: Optional[Rng] = None):
        """Logits of shape (N,) and a cache for :meth:`backward`."""
        self._check(batch)
        cache = _Cache(batch)
        parts = []
        if self.gru is not None:
            states, cache.gru = nn.gru_forward(self.gru, batch.ts)
            parts.append(states[:, -1])
        if self.convs:
            x = batch.matrix
            for conv in self.convs:
                out, c = nn.conv1d_forward(conv, x)
                x = nn.relu(out)
                cache.convs.append(c)
                cache.acts.append(x)
            pooled, cache.pool_idx = nn.global_max_pool(x)
            parts.append(pooled)
        if self.uses["vector"]:
            parts.append(batch.vector)
        fused = np.concatenate(parts, axis=1)
        cache.fused = fused
        if self.fc is not None:
            pre, _ = nn.dense_forward(self.fc, fused)
            cache.fc_pre = pre
            if training and self.cfg.dropout > 0 and rng is None:
                raise ValueError("training with dropout needs an rng")
            cache.mask = nn.dropout_mask(self.cfg.dropout, pre.shape, rng, training)
            head_in = nn.relu(pre) * cache.mask
        else:
            head_in = fused
        cache.head_in = head_in
        logits, _ = nn.dense_forward(self.head, head_in)
        return logits[:, 0], cache

    def backward(self, cache: _Cache, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(grad_logits, dtype=np.float64).reshape(-1, 1)
        hg, d_in = nn.dense_backward(self.head, cache.head_in, g)
        grads.update({f"head.{k}": v for k, v in hg.items()})
        if self.fc is not None:
            d_pre = d_in * cache.mask * (cache.fc_pre > 0)
            fg, d_fused = nn.dense_backward(self.fc, cache.fused, d_pre)
            grads.update({f"fc.{k}": v for k, v in fg.items()})
        else:
            d_fused = d_in

        pos = 0
        if self.gru is not None:
            H = self.cfg.hidden_dim
            d_h = d_fused[:, pos:pos + H]
            pos += H
            N, T, _ = cache.gru.x.shape
            d_states = np.zeros((N, T, H))
            d_states[:, -1] = d_h
            gg, _, _ = nn.gru_backward(cache.gru, d_states)
            grads.update({f"gru.{k}": v for k, v in gg.items()})
        if self.convs:
            C = self.cfg.conv_filters[-1]
            d_pool = d_fused[:, pos:pos + C]
            pos += C
            d_act = nn.global_max_pool_backward(cache.pool_idx, d_pool, cache.acts[-1].shape[1])
            conv_grads = []
            for i in range(len(self.convs) - 1, -1, -1):
                d_out = d_act * (cache.acts[i] > 0)
                cg, d_act = nn.conv1d_backward(cache.convs[i], d_out)
                conv_grads.append((i, cg))
            for i, cg in sorted(conv_grads, key=lambda t: t[0]):
                grads.update({f"conv{i + 1}.{k}": v for k, v in cg.items()})
        # order gradients like parameters()
        return {k: grads[k] for k in self.parameters()}

    def predict_proba(self, batch: Batch, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(batch), batch_size):
            logits, _ = self.forward(batch.take(slice(start, start + batch_size)))
            out.append(nn.sigmoid(logits))
        return np.concatenate(out) if out else np.zeros(0)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "kind": self.kind.value, "config": self.cfg.to_dict()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.parameters())

    @classmethod
    def load(cls, path) -> "Model":
        with np.load(path) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            model = cls(ModelKind(meta["kind"]), ModelConfig(**meta["config"]), np.random.default_rng(0))
            model.load_parameters({k: z[k] for k in model.parameters()})
        return model


def build(kind, cfg: ModelConfig, rng: Rng) -> Model:
    return Model(ModelKind.parse(kind) if isinstance(kind, str) else kind, cfg, rng)


# ------------------------------------------------ single-example entry points

def _prob(model: Model, batch: Batch) -> float:
    logits, _ = model.forward(batch)
    return float(nn.sigmoid(logits)[0])


def _ts(ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 2:
        raise ValueError(f"time series must be (T, F), got {ts.shape}")
    return ts[None]


def _vec(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ValueError(f"entity vector has shape {v.shape}, expected ({dim},)")
    return v[None]


def _mat(m) -> np.ndarray:
    values = m.values if isinstance(m, EntityMatrix) else np.asarray(m, dtype=np.float64)
    return values[None]


def forward_gru_baseline(model: Model, ts) -> float:
    return _prob(model, Batch(ts=_ts(ts)))


def forward_averaged_multimodal(model: Model, ts, avg_entity) -> float:
    return _prob(model, Batch(ts=_ts(ts), vector=_vec(avg_entity, model.cfg.embed_dim)))


def forward_doc2vec_multimodal(model: Model, ts, doc_vec) -> float:
    return _prob(model, Batch(ts=_ts(ts), vector=_vec(doc_vec, model.cfg.embed_dim)))


def forward_proposed(model: Model, ts, matrix) -> float:
    return _prob(model, Batch(ts=_ts(ts), matrix=_mat(matrix)))


def forward_entities_only(model: Model, entities) -> float:
    if model.uses["cnn"]:
        return _prob(model, Batch(matrix=_mat(entities)))
    return _prob(model, Batch(vector=_vec(entities, model.cfg.embed_dim)))
