"""Dense GCN numerics: normalized propagation, contrastive and CE losses, manual reverse mode, Adam.

Everything runs in float64.  Forward passes return a cache that the matching
backward function consumes; gradients are exact, not approximated.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

CHECKPOINT_FORMAT = "narx-checkpoint"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


# -------------------------------------------------------------- parameters


@dataclass
class GcnParams:
    weights: list[np.ndarray]
    dropout: float = 0.0

    def __post_init__(self):
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer dimensions do not chain")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "GcnParams":
        return GcnParams([w.copy() for w in self.weights], self.dropout)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for w in self.weights:
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()


@dataclass
class ClassifierHead:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.shape[1] < 2:
            raise ValueError("a classifier head needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gcn(in_dim: int, embed_dim: int, layers: int, rng: np.random.Generator, dropout: float = 0.0) -> GcnParams:
    dims = [in_dim] + [embed_dim] * layers
    return GcnParams([glorot(a, b, rng) for a, b in zip(dims, dims[1:])], dropout)


def init_head(embed_dim: int, num_classes: int, rng: np.random.Generator) -> ClassifierHead:
    return ClassifierHead(glorot(embed_dim, num_classes, rng), np.zeros(num_classes))


# ------------------------------------------------------------- propagation


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """``D^-1/2 (S + I) D^-1/2`` with ``S`` the symmetrized adjacency."""
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    sym = np.maximum(adj != 0, (adj != 0).T).astype(float)
    a_hat = sym + np.eye(len(adj))
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d[:, None] * d[None, :]


def _sym_entries(n: int, edges: Sequence[tuple[int, int]], offset: int = 0):
    """Row/col index arrays of ``S + I`` for one graph, shifted by ``offset``."""
    pairs = {(a, b) for a, b in edges if a != b} | {(b, a) for a, b in edges if a != b}
    if pairs:
        e = np.fromiter((x for ab in sorted(pairs) for x in ab), dtype=np.int64).reshape(-1, 2)
        rows, cols = e[:, 0], e[:, 1]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    diag = np.arange(n, dtype=np.int64)
    return np.concatenate([rows, diag]) + offset, np.concatenate([cols, diag]) + offset


def _normalized_from_entries(rows, cols, n: int) -> sp.csr_matrix:
    deg = np.bincount(rows, minlength=n).astype(float)
    d = 1.0 / np.sqrt(deg)
    return sp.csr_matrix((d[rows] * d[cols], (rows, cols)), shape=(n, n))


def _normalize_edges(n: int, edges: Sequence[tuple[int, int]]) -> sp.csr_matrix:
    rows, cols = _sym_entries(n, edges)
    return _normalized_from_entries(rows, cols, n)


@dataclass
class GraphBatch:
    """Several graphs stacked into one block-diagonal propagation problem."""

    features: np.ndarray
    norm_adj: sp.csr_matrix
    pool: sp.csr_matrix  # graphs x nodes, rows average their graph's nodes
    sizes: list[int]

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    @classmethod
    def from_graphs(cls, items: Sequence[tuple[np.ndarray, Sequence[tuple[int, int]]]]) -> "GraphBatch":
        """``items`` are ``(features, edges)`` pairs."""
        feats = [np.asarray(f, dtype=float) for f, _ in items]
        sizes = [len(f) for f in feats]
        if any(s == 0 for s in sizes):
            raise ValueError("graphs in a batch must have at least one node")
        offsets = np.cumsum([0] + sizes)
        parts = [_sym_entries(n, e, int(o)) for n, (_, e), o in zip(sizes, items, offsets)]
        adj = _normalized_from_entries(
            np.concatenate([r for r, _ in parts]), np.concatenate([c for _, c in parts]), int(offsets[-1])
        )
        rows = np.repeat(np.arange(len(sizes)), sizes)
        vals = np.repeat(1.0 / np.asarray(sizes, dtype=float), sizes)
        pool = sp.csr_matrix((vals, (rows, np.arange(offsets[-1]))), shape=(len(sizes), offsets[-1]))
        return cls(np.vstack(feats), adj, pool, sizes)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # H^(l) fed into each layer
    pre: list[np.ndarray] = field(default_factory=list)  # A H W before activation
    masks: list[np.ndarray | None] = field(default_factory=list)
    norm_adj: object = None
    pool: object = None


def _propagate(p: GcnParams, feats, norm_adj, pool, train: bool, rng):
    if feats.shape[1] != p.in_dim:
        raise ValueError(f"features have {feats.shape[1]} columns, encoder expects {p.in_dim}")
    if feats.shape[0] != norm_adj.shape[0]:
        raise ValueError("feature rows do not match adjacency size")
    cache = ForwardCache(norm_adj=norm_adj, pool=pool)
    h = feats
    last = len(p.weights) - 1
    for l, w in enumerate(p.weights):
        cache.inputs.append(h)
        z = norm_adj @ (h @ w)
        cache.pre.append(z)
        if l == last:
            h = z
            cache.masks.append(None)
            break
        h = np.maximum(z, 0.0)
        if train and p.dropout > 0.0:
            keep = (rng.random(h.shape) >= p.dropout) / (1.0 - p.dropout)
            h = h * keep
            cache.masks.append(keep)
        else:
            cache.masks.append(None)
    emb = pool @ h
    return h, np.asarray(emb), cache


def gcn_forward(p: GcnParams, feats, norm_adj, train_mode: bool = False, rng: np.random.Generator | None = None):
    """Single graph: returns final node features and their mean-pooled embedding."""
    feats = np.asarray(feats, dtype=float)
    pool = np.full((1, feats.shape[0]), 1.0 / feats.shape[0])
    h, emb, _ = _propagate(p, feats, np.asarray(norm_adj, dtype=float), pool, train_mode, rng)
    return h, emb[0]


def gcn_forward_batch(p: GcnParams, batch: GraphBatch, train_mode: bool = False, rng=None):
    """Returns ``(embeddings, cache)`` with one embedding row per graph."""
    _, emb, cache = _propagate(p, batch.features, batch.norm_adj, batch.pool, train_mode, rng)
    return emb, cache


def gcn_backward(p: GcnParams, cache: ForwardCache, d_emb: np.ndarray):
    """Reverse pass from embedding gradients to weight and input-feature gradients."""
    dh = np.asarray(cache.pool.T @ d_emb)
    grads = [None] * len(p.weights)
    for l in reversed(range(len(p.weights))):
        if cache.masks[l] is not None:
            dh = dh * cache.masks[l]
        dz = dh if l == len(p.weights) - 1 else dh * (cache.pre[l] > 0.0)
        du = np.asarray(cache.norm_adj.T @ dz)
        grads[l] = cache.inputs[l].T @ du
        dh = du @ p.weights[l].T
    return grads, dh


# ------------------------------------------------------------------ losses


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_grad(u, v) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return np.zeros_like(u), np.zeros_like(v)
    c = u @ v / (nu * nv)
    return v / (nu * nv) - c * u / nu**2, u / (nu * nv) - c * v / nv**2


def _logsumexp(x):
    x = np.asarray(x, dtype=float)
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def motif_contrastive_loss(h_sg, h_pos, h_negs, temperature: float = 1.0) -> float:
    if len(h_negs) < 1:
        raise ValueError("need at least one negative")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    pos = cosine(h_sg, h_pos) / temperature
    negs = [cosine(h_sg, h) / temperature for h in h_negs]
    return float(-pos + _logsumexp([pos] + negs))


def graph_contrastive_loss(h_m, h_pos, h_neg, temperature: float = 1.0) -> float:
    if len(h_pos) < 1 or len(h_neg) < 1:
        raise ValueError("need at least one positive and one negative")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    pos = [cosine(h_m, h) / temperature for h in h_pos]
    neg = [cosine(h_m, h) / temperature for h in h_neg]
    return float(-_logsumexp(pos) + _logsumexp(pos + neg))


def cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=float)
    if not 0 <= label < len(logits):
        raise ValueError("label out of range")
    return float(_logsumexp(logits) - logits[label])


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], safe, norms > 0


def _unit_rows_backward(d_unit, unit, safe, nonzero):
    d = (d_unit - unit * np.sum(unit * d_unit, axis=1, keepdims=True)) / safe[:, None]
    return d * nonzero[:, None]


def contrastive_batch(anchors, cands, pos_mask, neg_mask, temperature: float = 1.0):
    """Mean over anchors of ``-log sum_pos e^z / sum_{pos+neg} e^z``, ``z = cos / temperature``.

    Returns ``(loss, d_anchors, d_cands)``.  With one positive per row this is
    the motif-level loss; with several it is the graph-level loss.
    """
    pos_mask = np.asarray(pos_mask, dtype=bool)
    neg_mask = np.asarray(neg_mask, dtype=bool)
    n = len(anchors)
    if n == 0:
        return 0.0, np.zeros_like(anchors), np.zeros_like(cands)
    if not pos_mask.any(axis=1).all() or not neg_mask.any(axis=1).all():
        raise ValueError("every anchor needs a positive and a negative")
    ua, sa, nza = _unit_rows(np.asarray(anchors, dtype=float))
    uc, sc, nzc = _unit_rows(np.asarray(cands, dtype=float))
    z = (ua @ uc.T) / temperature
    all_mask = pos_mask | neg_mask
    big = np.where(all_mask, z, -np.inf)
    m = big.max(axis=1, keepdims=True)
    e_all = np.where(all_mask, np.exp(z - m), 0.0)
    e_pos = np.where(pos_mask, e_all, 0.0)
    s_all = e_all.sum(axis=1)
    s_pos = e_pos.sum(axis=1)
    loss = float(np.mean(np.log(s_all) - np.log(s_pos)))
    dz = (e_all / s_all[:, None] - e_pos / s_pos[:, None]) / n
    ds = dz / temperature
    d_ua = ds @ uc
    d_uc = ds.T @ ua
    return loss, _unit_rows_backward(d_ua, ua, sa, nza), _unit_rows_backward(d_uc, uc, sc, nzc)


def cross_entropy_batch(emb, head: ClassifierHead, labels):
    """Mean CE of ``emb @ W + b``; returns ``(loss, dW, db, d_emb, logits)``."""
    labels = np.asarray(labels, dtype=int)
    logits = emb @ head.weight + head.bias
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    probs = e / e.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = float(np.mean(np.log(e.sum(axis=1)) + m[:, 0] - logits[np.arange(n), labels]))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, emb.T @ dlogits, dlogits.sum(axis=0), dlogits @ head.weight.T, logits


# --------------------------------------------------------------- optimizer


@dataclass
class TrainState:
    lr: float
    seed: int = 0
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: TrainState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """In-place bias-corrected Adam update."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("gradient shapes do not match parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -------------------------------------------------------------- checkpoints


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> None:
    """Structured-text dump; floats are written with repr so loading is bit-exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": config_fingerprint(config),
        "config": config,
        "tensors": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=float).ravel().tolist()}
            for name, arr in tensors.items()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a narx checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    if doc["fingerprint"] != config_fingerprint(doc["config"]):
        raise ValueError("checkpoint config fingerprint mismatch")
    tensors = {
        name: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for name, t in doc["tensors"].items()
    }
    return tensors, doc["config"], doc.get("extra", {})


def params_to_tensors(prefix: str, p: GcnParams) -> dict[str, np.ndarray]:
    return {f"{prefix}.W{l}": w for l, w in enumerate(p.weights)}


def params_from_tensors(prefix: str, tensors: dict[str, np.ndarray], dropout: float = 0.0) -> GcnParams:
    ws = []
    l = 0
    while f"{prefix}.W{l}" in tensors:
        ws.append(tensors[f"{prefix}.W{l}"])
        l += 1
    if not ws:
        raise KeyError(f"no weights for {prefix} in checkpoint")
    return GcnParams(ws, dropout)
