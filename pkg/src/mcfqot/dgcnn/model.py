"""DGCNN classifier: graph convolutions, SortPooling, 1-D convolutions, dense head.

Everything is float64 numpy with a hand-written reverse pass. Graph
convolutions only touch active connections: inactive ones have zero features
and no edges, so with bias-free layers and tanh their embeddings stay exactly
zero. SortPooling orders the active rows and pads with those zero rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..dataset import N_FEATURES, Pattern

P_CLAMP = 1e-12


@dataclass(frozen=True)
class DgcnnConfig:
    conv_channels: tuple[int, ...] = (32, 32, 32, 1)
    sortpool_k: int | None = None  # None -> min(n, 64)
    conv1_filters: int = 16
    conv2_filters: int = 32
    conv2_kernel: int = 5
    dense_width: int = 128
    dropout_rate: float = 0.5
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 50
    max_epochs: int = 300
    patience: int = 30
    val_fraction: float = 0.0
    ber_floor: float = 1e-15
    seed: int = 0

    def __post_init__(self):
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ValueError("conv_channels must be positive widths")
        for name in ("conv1_filters", "conv2_filters", "conv2_kernel", "dense_width", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    @property
    def total_channels(self) -> int:
        return sum(self.conv_channels)

    def resolve_k(self, n: int) -> int:
        k = min(n, 64) if self.sortpool_k is None else self.sortpool_k
        if not 1 <= k <= n:
            raise ValueError(f"sortpool_k={k} must lie in [1, n={n}]")
        return k

    def layout(self, n: int) -> dict[str, tuple[int, ...]]:
        """Parameter shapes for graphs with ``n`` connections."""
        k = self.resolve_k(n)
        pooled = math.ceil(k / 2)
        conv2_len = pooled - self.conv2_kernel + 1
        if conv2_len < 1:
            raise ValueError(
                f"conv2_kernel={self.conv2_kernel} does not fit {pooled} pooled positions (k={k})"
            )
        shapes: dict[str, tuple[int, ...]] = {}
        width = N_FEATURES
        for t, c in enumerate(self.conv_channels, start=1):
            shapes[f"gc{t}"] = (width, c)
            width = c
        C = self.total_channels
        shapes["conv1_w"] = (C, self.conv1_filters)
        shapes["conv1_b"] = (self.conv1_filters,)
        shapes["conv2_w"] = (self.conv2_kernel, self.conv1_filters, self.conv2_filters)
        shapes["conv2_b"] = (self.conv2_filters,)
        shapes["dense_w"] = (conv2_len * self.conv2_filters, self.dense_width)
        shapes["dense_b"] = (self.dense_width,)
        shapes["out_w"] = (self.dense_width,)
        shapes["out_b"] = (1,)
        return shapes

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class DgcnnModel:
    config: DgcnnConfig
    n: int
    params: dict[str, np.ndarray]
    norm_min: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    norm_max: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    @property
    def k(self) -> int:
        return self.config.resolve_k(self.n)

    def copy(self) -> DgcnnModel:
        return DgcnnModel(
            self.config,
            self.n,
            {name: value.copy() for name, value in self.params.items()},
            self.norm_min.copy(),
            self.norm_max.copy(),
        )


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name == "conv1_w":
        c, f = shape
        return c, f * c
    if name == "conv2_w":
        kernel, fin, fout = shape
        return fin * kernel, fout * kernel
    if name == "out_w":
        return shape[0], 1
    return shape[0], shape[1]


def init_model(config: DgcnnConfig, n: int, seed: int | None = None) -> DgcnnModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(config.seed if seed is None else seed))
    params = {}
    for name, shape in config.layout(n).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            a = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-a, a, size=shape)
    return DgcnnModel(config, n, params)


# --- feature preprocessing -------------------------------------------------


def transform_rows(rows: np.ndarray, ber_floor: float = 1e-15) -> np.ndarray:
    """Map the BER column to ``-log10(max(ber, floor)) / -log10(floor)``.

    A zero BER marks the request being admitted and stays zero.
    """
    out = np.array(rows, dtype=float, copy=True)
    ber = out[:, -1]
    scale = -math.log10(ber_floor)
    nz = ber > 0
    ber[nz] = -np.log10(np.maximum(ber[nz], ber_floor)) / scale
    return out


def fit_normalizer(model: DgcnnModel, patterns: Sequence[Pattern]) -> None:
    """Record per-column min/max over the active rows of ``patterns``."""
    rows = [transform_rows(p.rows, model.config.ber_floor) for p in patterns if p.n_active]
    if not rows:
        return
    stacked = np.vstack(rows)
    model.norm_min = stacked.min(axis=0)
    model.norm_max = stacked.max(axis=0)


def normalize_rows(model: DgcnnModel, rows: np.ndarray) -> np.ndarray:
    span = model.norm_max - model.norm_min
    span = np.where(span > 0, span, 1.0)
    return (transform_rows(rows, model.config.ber_floor) - model.norm_min) / span


@dataclass
class Graph:
    """A pattern prepared for the network: normalized rows and propagation matrix."""

    n: int
    ids: np.ndarray  # connection indices of the active rows
    x: np.ndarray  # active rows x 9
    prop: sp.csr_matrix  # D^-1 (A + I) restricted to active rows
    label: int
    request: int = 0

    @property
    def m(self) -> int:
        return len(self.ids)


def propagation_matrix(m: int, local_edges: np.ndarray) -> sp.csr_matrix:
    """Row-normalized ``A + I`` for ``m`` nodes given undirected local edges."""
    if len(local_edges):
        i, j = local_edges[:, 0], local_edges[:, 1]
        rows = np.concatenate([i, j, np.arange(m)])
        cols = np.concatenate([j, i, np.arange(m)])
    else:
        rows = cols = np.arange(m)
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    degree = np.asarray(a.sum(axis=1)).ravel()
    return sp.diags(1.0 / degree) @ a


def prepare(model: DgcnnModel, pattern: Pattern) -> Graph:
    if pattern.n != model.n:
        raise ValueError(f"pattern has n={pattern.n}, model expects n={model.n}")
    if pattern.rows.shape[1:] != (N_FEATURES,):
        raise ValueError(f"pattern rows must have {N_FEATURES} columns")
    x = normalize_rows(model, pattern.rows) if pattern.n_active else np.zeros((0, N_FEATURES))
    prop = propagation_matrix(pattern.n_active, pattern.local_edges())
    return Graph(pattern.n, pattern.active, x, sp.csr_matrix(prop), pattern.label, pattern.request)


# --- SortPooling ------------------------------------------------------------


def sort_order(z: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the top ``k`` rows of ``z`` in SortPooling order.

    Rows sort descending by the last column, then by the preceding columns
    right to left, then by ascending ``ids``.
    """
    if len(z) == 0:
        return np.zeros(0, dtype=np.int64)
    key = z[:, -1]
    order = np.lexsort((ids, -key))
    sorted_key = key[order]
    tie = np.flatnonzero(sorted_key[1:] == sorted_key[:-1])
    if tie.size:
        # regroup runs of equal keys that reach into the first k positions
        starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
        ends = np.r_[starts[1:], len(order)]
        for a, b in zip(starts, ends):
            if a >= k:
                break
            if b - a < 2:
                continue
            group = order[a:b]
            block = z[group]
            if np.all(block == block[0]):
                continue  # identical rows: id order already holds
            keys = (ids[group],) + tuple(-block[:, c] for c in range(z.shape[1]))
            order[a:b] = group[np.lexsort(keys)]
    return order[:k]


def sort_pooling(z: np.ndarray, k: int, ids: np.ndarray | None = None) -> np.ndarray:
    """Sort rows of ``z`` (n x C), keep the first ``k``, zero-pad when n < k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    z = np.asarray(z, dtype=float)
    ids = np.arange(len(z)) if ids is None else np.asarray(ids)
    out = np.zeros((k, z.shape[1]))
    order = sort_order(z, ids, k)
    out[: len(order)] = z[order]
    return out


def _pool_rows(z: np.ndarray, g: Graph, k: int) -> np.ndarray:
    """Top-k positions into ``z`` (the graph's active rows), -1 for padding.

    Inactive connections carry all-zero rows; they fill the slots after the
    sorted active rows instead of competing with them on the sort key.
    """
    order = sort_order(z, g.ids, k)
    out = np.full(k, -1, dtype=np.int64)
    out[: len(order)] = order
    return out


# --- forward and backward -------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class _Tape:
    """Intermediate values from a batched forward pass."""


def _forward(model: DgcnnModel, graphs: Sequence[Graph], rng: np.random.Generator | None) -> _Tape:
    cfg, params = model.config, model.params
    k = model.k
    T = len(cfg.conv_channels)
    B = len(graphs)
    tape = _Tape()
    tape.B = B
    offsets = np.cumsum([0] + [g.m for g in graphs])
    tape.offsets = offsets
    x = np.vstack([g.x for g in graphs]) if offsets[-1] else np.zeros((0, N_FEATURES))
    prop = sp.block_diag([g.prop for g in graphs], format="csr") if offsets[-1] else None
    tape.prop = prop

    hs, zs = [], []
    z = x
    for t in range(1, T + 1):
        h = prop @ z if prop is not None else z
        z = np.tanh(h @ params[f"gc{t}"])
        hs.append(h)
        zs.append(z)
    zcat = np.hstack(zs)
    tape.hs, tape.zs = hs, zs

    C = cfg.total_channels
    pooled = np.zeros((B, k, C))
    gather_rows, gather_slots = [], []
    for b, g in enumerate(graphs):
        local = _pool_rows(zcat[offsets[b] : offsets[b + 1]], g, k)
        slots = np.flatnonzero(local >= 0)
        gather_rows.append(local[slots] + offsets[b])
        gather_slots.append(slots + b * k)
    rows = np.concatenate(gather_rows).astype(np.int64) if gather_rows else np.zeros(0, np.int64)
    slots = np.concatenate(gather_slots).astype(np.int64) if gather_slots else np.zeros(0, np.int64)
    pooled.reshape(B * k, C)[slots] = zcat[rows]
    tape.gather_rows, tape.gather_slots = rows, slots
    tape.pooled = pooled

    # conv1: kernel C, stride C over the flattened rows == per-row linear map
    a1 = pooled @ params["conv1_w"] + params["conv1_b"]
    r1 = np.maximum(a1, 0.0)
    L1 = math.ceil(k / 2)
    padded = np.full((B, 2 * L1, cfg.conv1_filters), -np.inf)
    padded[:, :k] = r1
    windows = padded.reshape(B, L1, 2, cfg.conv1_filters)
    arg = np.argmax(windows, axis=2)
    m1 = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
    tape.a1, tape.pool_arg, tape.L1 = a1, arg, L1

    K2 = cfg.conv2_kernel
    L2 = L1 - K2 + 1
    cols = np.lib.stride_tricks.sliding_window_view(m1, K2, axis=1)  # B, L2, F1, K2
    cols = cols.transpose(0, 1, 3, 2).reshape(B, L2, K2 * cfg.conv1_filters)
    w2 = params["conv2_w"].reshape(K2 * cfg.conv1_filters, cfg.conv2_filters)
    a2 = cols @ w2 + params["conv2_b"]
    r2 = np.maximum(a2, 0.0)
    flat = r2.reshape(B, L2 * cfg.conv2_filters)
    tape.cols, tape.a2, tape.flat, tape.L2 = cols, a2, flat, L2

    a3 = flat @ params["dense_w"] + params["dense_b"]
    r3 = np.maximum(a3, 0.0)
    if rng is not None and cfg.dropout_rate > 0:
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(r3.shape) < keep) / keep
    else:
        mask = None
    d3 = r3 * mask if mask is not None else r3
    tape.a3, tape.mask, tape.d3 = a3, mask, d3

    logit = d3 @ params["out_w"] + params["out_b"][0]
    tape.logit = logit
    tape.p = _sigmoid(logit)
    return tape


def _backward(model: DgcnnModel, tape: _Tape, dlogit: np.ndarray) -> dict[str, np.ndarray]:
    cfg, params = model.config, model.params
    B, k = tape.B, model.k
    F1, F2, K2 = cfg.conv1_filters, cfg.conv2_filters, cfg.conv2_kernel
    grads: dict[str, np.ndarray] = {}

    grads["out_w"] = tape.d3.T @ dlogit
    grads["out_b"] = np.array([dlogit.sum()])
    dd3 = np.outer(dlogit, params["out_w"])
    dr3 = dd3 * tape.mask if tape.mask is not None else dd3
    da3 = dr3 * (tape.a3 > 0)
    grads["dense_w"] = tape.flat.T @ da3
    grads["dense_b"] = da3.sum(axis=0)
    dflat = da3 @ params["dense_w"].T

    da2 = dflat.reshape(B, tape.L2, F2) * (tape.a2 > 0)
    w2 = params["conv2_w"].reshape(K2 * F1, F2)
    grads["conv2_w"] = (tape.cols.reshape(-1, K2 * F1).T @ da2.reshape(-1, F2)).reshape(K2, F1, F2)
    grads["conv2_b"] = da2.sum(axis=(0, 1))
    dcols = (da2 @ w2.T).reshape(B, tape.L2, K2, F1)
    dm1 = np.zeros((B, tape.L1, F1))
    for j in range(K2):
        dm1[:, j : j + tape.L2] += dcols[:, :, j]

    dwindows = np.zeros((B, tape.L1, 2, F1))
    np.put_along_axis(dwindows, tape.pool_arg[:, :, None, :], dm1[:, :, None, :], axis=2)
    dr1 = dwindows.reshape(B, 2 * tape.L1, F1)[:, :k]
    da1 = dr1 * (tape.a1 > 0)
    C = cfg.total_channels
    grads["conv1_w"] = tape.pooled.reshape(-1, C).T @ da1.reshape(-1, F1)
    grads["conv1_b"] = da1.sum(axis=(0, 1))
    dpooled = da1 @ params["conv1_w"].T

    R = tape.offsets[-1]
    dzcat = np.zeros((R, C))
    dzcat[tape.gather_rows] = dpooled.reshape(B * k, C)[tape.gather_slots]

    T = len(cfg.conv_channels)
    bounds = np.cumsum([0] + list(cfg.conv_channels))
    carry = None
    for t in range(T, 0, -1):
        dz = dzcat[:, bounds[t - 1] : bounds[t]]
        if carry is not None:
            dz = dz + carry
        z = tape.zs[t - 1]
        dpre = dz * (1.0 - z * z)
        grads[f"gc{t}"] = tape.hs[t - 1].T @ dpre
        if t > 1:
            dh = dpre @ params[f"gc{t}"].T
            carry = tape.prop.T @ dh if tape.prop is not None else dh
    return grads


def predict_graphs(model: DgcnnModel, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    scores = []
    for start in range(0, len(graphs), batch_size):
        scores.append(_forward(model, graphs[start : start + batch_size], None).p)
    return np.concatenate(scores) if scores else np.zeros(0)


def forward(
    model: DgcnnModel,
    pattern: Pattern | Graph,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> float:
    """Score in (0, 1) that the pattern's state is feasible."""
    if mode not in ("eval", "train"):
        raise ValueError("mode must be 'eval' or 'train'")
    graph = pattern if isinstance(pattern, Graph) else prepare(model, pattern)
    if mode == "train" and rng is None:
        rng = np.random.default_rng()
    tape = _forward(model, [graph], rng if mode == "train" else None)
    return float(tape.p[0])


def bce(p: np.ndarray, y: np.ndarray) -> float:
    q = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return float(-np.mean(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)))


def loss_and_gradients(
    model: DgcnnModel,
    batch: Sequence[Pattern | Graph],
    labels: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Mean binary cross-entropy, its gradient for every parameter, and the scores.

    Dropout is applied only when ``rng`` is given.
    """
    if not batch:
        raise ValueError("batch must not be empty")
    graphs = [g if isinstance(g, Graph) else prepare(model, g) for g in batch]
    y = np.array([g.label for g in graphs] if labels is None else labels, dtype=float)
    tape = _forward(model, graphs, rng)
    p = tape.p
    loss = bce(p, y)
    inside = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    dlogit = (p - y) * inside / len(graphs)
    return loss, _backward(model, tape, dlogit), p
