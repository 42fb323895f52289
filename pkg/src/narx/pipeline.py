"""Two-stage pretraining (motif-level, then graph-level) and the inference embedding."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gcn
from .gcn import ClassifierHead, GcnParams, GraphBatch, TrainState
from .graph import CompGraph, OperatorVocab, one_hot_features
from .macro import MacroGraph, build_macro
from .motifs import MiningConfig, MotifOccurrence, context_graph
from .splitters import make_splitter, splitter_from_dict

log = logging.getLogger(__name__)

LOSS_MODES = ("ce", "cl", "ce+cl")


@dataclass
class StageConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    layers: int = 3
    embed_dim: int = 64
    dropout: float = 0.0
    temperature: float = 1.0
    negatives_per_anchor: int = 15
    positives_per_anchor: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "layers", "embed_dim", "negatives_per_anchor", "positives_per_anchor"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ValueError("learning rate and temperature must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown stage config keys: {sorted(unknown)}")
        return cls(**d)


def motif_stage_defaults(**kw) -> StageConfig:
    base = dict(epochs=5, batch_size=256, learning_rate=1e-2, layers=3, embed_dim=64, dropout=0.0,
                negatives_per_anchor=15, positives_per_anchor=1)
    base.update(kw)
    return StageConfig(**base)


def graph_stage_defaults(**kw) -> StageConfig:
    base = dict(epochs=15, batch_size=512, learning_rate=1e-3, layers=3, embed_dim=64, dropout=0.1,
                negatives_per_anchor=16, positives_per_anchor=4)
    base.update(kw)
    return StageConfig(**base)


@dataclass
class TrainedModels:
    vocab: OperatorVocab
    splitter: object
    f_s: GcnParams
    f_c: GcnParams | None = None
    f_m: GcnParams | None = None
    head: ClassifierHead | None = None
    configs: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path, include_context: bool | None = None) -> None:
        """Stage-1 artifacts keep the context encoder; inference bundles never do."""
        include_context = self.f_m is None if include_context is None else include_context
        tensors = gcn.params_to_tensors("f_s", self.f_s)
        if include_context and self.f_c is not None:
            tensors.update(gcn.params_to_tensors("f_c", self.f_c))
        if self.f_m is not None:
            tensors.update(gcn.params_to_tensors("f_m", self.f_m))
        if self.head is not None:
            tensors["head.weight"] = self.head.weight
            tensors["head.bias"] = self.head.bias
        extra = {"vocab": list(self.vocab.entries), "splitter": self.splitter.to_dict()}
        gcn.save_checkpoint(path, tensors, self.configs, extra)

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModels":
        tensors, config, extra = gcn.load_checkpoint(path)
        has = lambda p: f"{p}.W0" in tensors  # noqa: E731
        head = None
        if "head.weight" in tensors:
            head = ClassifierHead(tensors["head.weight"], tensors["head.bias"])
        return cls(
            vocab=OperatorVocab(extra["vocab"]),
            splitter=splitter_from_dict(extra["splitter"]),
            f_s=gcn.params_from_tensors("f_s", tensors),
            f_c=gcn.params_from_tensors("f_c", tensors) if has("f_c") else None,
            f_m=gcn.params_from_tensors("f_m", tensors) if has("f_m") else None,
            head=head,
            configs=config,
        )


def _featurize(g: CompGraph, vocab: OperatorVocab):
    return one_hot_features(g, vocab), g.edges


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    chunks = [perm[i : i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _sample(rng, pool: np.ndarray, k: int) -> np.ndarray:
    if len(pool) <= k:
        return pool
    return rng.choice(pool, size=k, replace=False)


# ----------------------------------------------------------------- stage 1


@dataclass
class MotifAnchor:
    graph: int
    motif: CompGraph
    context: CompGraph


def motif_anchors(graphs: Sequence[CompGraph], splitter, hop: int) -> tuple[list[MotifAnchor], int]:
    """Every motif occurrence of graphs with at least two motifs; returns the skipped-graph count."""
    anchors, skipped = [], 0
    for gi, g in enumerate(graphs):
        occs = splitter.segment(g, gi)
        if len(occs) < 2:
            skipped += 1
            continue
        for occ in occs:
            anchors.append(MotifAnchor(gi, occ.subgraph, context_graph(g, occ, hop).subgraph))
    return anchors, skipped


def stage1_train(
    graphs: Sequence[CompGraph],
    vocab: OperatorVocab,
    cfg: StageConfig,
    mining: MiningConfig | None = None,
    splitter="ours",
    splitter_kw: dict | None = None,
) -> TrainedModels:
    """Fit the motif encoder and the context encoder with the motif-level contrastive loss."""
    mining = mining or MiningConfig()
    if isinstance(splitter, str):
        splitter = make_splitter(splitter, mining, seed=cfg.seed, **(splitter_kw or {}))
    splitter.fit(graphs)
    rng = np.random.default_rng(cfg.seed)
    f_s = gcn.init_gcn(len(vocab), cfg.embed_dim, cfg.layers, rng, cfg.dropout)
    f_c = gcn.init_gcn(len(vocab), cfg.embed_dim, cfg.layers, rng, cfg.dropout)
    anchors, skipped = motif_anchors(graphs, splitter, mining.hop)
    if skipped:
        log.info("stage 1: %d graphs with a single motif contribute no anchors", skipped)
    if len(anchors) < 2:
        raise ValueError("stage 1 needs at least two motif anchors")
    motif_items = [_featurize(a.motif, vocab) for a in anchors]
    ctx_items = [_featurize(a.context, vocab) for a in anchors]
    state = TrainState(lr=cfg.learning_rate, seed=cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for idx in _batches(len(anchors), cfg.batch_size, rng):
            loss, grads = _stage1_step(f_s, f_c, motif_items, ctx_items, idx, cfg, rng)
            gcn.adam_step(state, f_s.weights + f_c.weights, grads)
            losses.append(loss)
        history.append({"stage": "motifs", "epoch": epoch, "loss": float(np.mean(losses)),
                        "loss_cl": float(np.mean(losses)), "loss_ce": "", "anchors": len(anchors),
                        "skipped": skipped, "wall_time": round(time.perf_counter() - t0, 3)})
        log.info("stage 1 epoch %d loss %.4f", epoch, history[-1]["loss"])
    configs = {"mining": mining.to_dict(), "stage1": asdict(cfg)}
    return TrainedModels(vocab, splitter, f_s, f_c, configs=configs, history=history)


def _stage1_step(f_s, f_c, motif_items, ctx_items, idx, cfg, rng, train=True):
    mb = GraphBatch.from_graphs([motif_items[i] for i in idx])
    cb = GraphBatch.from_graphs([ctx_items[i] for i in idx])
    e_s, cache_s = gcn.gcn_forward_batch(f_s, mb, train, rng)
    e_c, cache_c = gcn.gcn_forward_batch(f_c, cb, train, rng)
    n = len(idx)
    pos = np.eye(n, dtype=bool)
    neg = np.zeros((n, n), dtype=bool)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        neg[i, _sample(rng, others, cfg.negatives_per_anchor)] = True
    loss, d_s, d_c = gcn.contrastive_batch(e_s, e_c, pos, neg, cfg.temperature)
    g_s, _ = gcn.gcn_backward(f_s, cache_s, d_s)
    g_c, _ = gcn.gcn_backward(f_c, cache_c, d_c)
    return loss, g_s + g_c


# ----------------------------------------------------------------- stage 2


def motif_embeddings(occ_lists: Sequence[Sequence[MotifOccurrence]], models: TrainedModels, chunk: int = 2048):
    """Frozen motif encoder applied to every occurrence; returns one array per graph."""
    flat = [o for occs in occ_lists for o in occs]
    rows = []
    for i in range(0, len(flat), chunk):
        batch = GraphBatch.from_graphs([_featurize(o.subgraph, models.vocab) for o in flat[i : i + chunk]])
        emb, _ = gcn.gcn_forward_batch(models.f_s, batch, False)
        rows.append(emb)
    allrows = np.vstack(rows) if rows else np.zeros((0, models.f_s.out_dim))
    out, pos = [], 0
    for occs in occ_lists:
        out.append(allrows[pos : pos + len(occs)])
        pos += len(occs)
    return out


def _segment_chunk(args):
    splitter, chunk = args
    return [splitter.segment(g, gi) for gi, g in chunk]


def segment_all(splitter, graphs: Sequence[CompGraph], workers: int = 1) -> list[list[MotifOccurrence]]:
    """Per-graph segmentation, optionally spread over processes.  Output order is input order."""
    if workers <= 1 or len(graphs) < 2 * workers:
        return [splitter.segment(g, gi) for gi, g in enumerate(graphs)]
    from concurrent.futures import ProcessPoolExecutor

    items = list(enumerate(graphs))
    step = -(-len(items) // workers)
    chunks = [(splitter, items[i : i + step]) for i in range(0, len(items), step)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [occs for part in pool.map(_segment_chunk, chunks) for occs in part]


def build_macro_graphs(graphs: Sequence[CompGraph], models: TrainedModels, workers: int = 1) -> list[MacroGraph]:
    occ_lists = segment_all(models.splitter, graphs, workers)
    embeds = motif_embeddings(occ_lists, models)
    return [build_macro(g, occs, e) for g, occs, e in zip(graphs, occ_lists, embeds)]


def stage2_train(
    graphs: Sequence[CompGraph],
    models: TrainedModels,
    cfg: StageConfig,
    loss: str = "ce+cl",
    num_classes: int | None = None,
) -> TrainedModels:
    """Fit the macro-graph encoder and classifier head with the motif encoder frozen."""
    if loss not in LOSS_MODES:
        raise ValueError(f"loss must be one of {LOSS_MODES}")
    labels = np.array([g.label if g.label is not None else -1 for g in graphs])
    if (labels < 0).any():
        raise ValueError("every training graph needs a class label")
    num_classes = num_classes or int(labels.max()) + 1
    frozen = models.f_s.checksum()
    macros = build_macro_graphs(graphs, models)
    items = [(m.features, m.edges) for m in macros]
    rng = np.random.default_rng(cfg.seed)
    f_m = gcn.init_gcn(models.f_s.out_dim, cfg.embed_dim, cfg.layers, rng, cfg.dropout)
    head = ClassifierHead(np.zeros((cfg.embed_dim, num_classes)), np.zeros(num_classes))
    state = TrainState(lr=cfg.learning_rate, seed=cfg.seed)
    use_cl, use_ce = loss in ("cl", "ce+cl"), loss in ("ce", "ce+cl")
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rec = {"cl": [], "ce": [], "acc": [], "skipped": 0}
        for idx in _batches(len(items), cfg.batch_size, rng):
            grads = _stage2_step(f_m, head, items, labels, idx, cfg, rng, use_cl, use_ce, rec)
            params = f_m.weights + ([head.weight, head.bias] if use_ce else [])
            gcn.adam_step(state, params, grads)
        cl = float(np.mean(rec["cl"])) if rec["cl"] else 0.0
        ce = float(np.mean(rec["ce"])) if rec["ce"] else 0.0
        history.append({"stage": "graph", "epoch": epoch, "loss": cl + ce,
                        "loss_cl": cl if use_cl else "", "loss_ce": ce if use_ce else "",
                        "accuracy": float(np.mean(rec["acc"])) if rec["acc"] else "",
                        "anchors": len(items), "skipped": rec["skipped"],
                        "wall_time": round(time.perf_counter() - t0, 3)})
        log.info("stage 2 epoch %d loss %.4f", epoch, history[-1]["loss"])
    if models.f_s.checksum() != frozen:
        raise RuntimeError("motif encoder changed during graph-level training")
    configs = dict(models.configs, stage2=asdict(cfg), loss=loss, num_classes=num_classes)
    return TrainedModels(models.vocab, models.splitter, models.f_s, None, f_m, head,
                         configs, models.history + history)


def graph_pairs(labels: np.ndarray, k_pos: int, k_neg: int, rng):
    """Anchor rows with same-label positives and other-label negatives drawn from the batch.

    Returns ``(anchor_rows, pos_mask, neg_mask, skipped)``; masks index batch rows and
    an anchor lacking either side is skipped.
    """
    n = len(labels)
    anchors, pos_rows, neg_rows = [], [], []
    for i in range(n):
        same = np.flatnonzero((labels == labels[i]) & (np.arange(n) != i))
        diff = np.flatnonzero(labels != labels[i])
        if len(same) == 0 or len(diff) == 0:
            continue
        p = np.zeros(n, dtype=bool)
        q = np.zeros(n, dtype=bool)
        p[_sample(rng, same, k_pos)] = True
        q[_sample(rng, diff, k_neg)] = True
        anchors.append(i)
        pos_rows.append(p)
        neg_rows.append(q)
    shape = (0, n)
    pos = np.array(pos_rows) if pos_rows else np.zeros(shape, bool)
    neg = np.array(neg_rows) if neg_rows else np.zeros(shape, bool)
    return np.array(anchors, dtype=int), pos, neg, n - len(anchors)


def _stage2_step(f_m, head, items, labels, idx, cfg, rng, use_cl, use_ce, rec):
    batch = GraphBatch.from_graphs([items[i] for i in idx])
    emb, cache = gcn.gcn_forward_batch(f_m, batch, True, rng)
    lab = labels[idx]
    d_emb = np.zeros_like(emb)
    grads_head = []
    if use_cl:
        a, pos, neg, skipped = graph_pairs(lab, cfg.positives_per_anchor, cfg.negatives_per_anchor, rng)
        rec["skipped"] += skipped
        if len(a):
            l_cl, d_a, d_c = gcn.contrastive_batch(emb[a], emb, pos, neg, cfg.temperature)
            np.add.at(d_emb, a, d_a)
            d_emb += d_c
            rec["cl"].append(l_cl)
    if use_ce:
        l_ce, d_w, d_b, d_e, logits = gcn.cross_entropy_batch(emb, head, lab)
        d_emb += d_e
        grads_head = [d_w, d_b]
        rec["ce"].append(l_ce)
        rec["acc"].append(float(np.mean(logits.argmax(axis=1) == lab)))
    grads, _ = gcn.gcn_backward(f_m, cache, d_emb)
    return grads + grads_head


# --------------------------------------------------------------- inference


def embed_graphs(graphs: Sequence[CompGraph], models: TrainedModels, chunk: int = 512, workers: int = 1) -> np.ndarray:
    """Motif sampling, frozen motif encoder, macro graph, macro encoder, mean readout."""
    if models.f_m is None:
        raise ValueError("models have no macro-graph encoder; run graph-level training first")
    out = []
    for i in range(0, len(graphs), chunk):
        macros = build_macro_graphs(graphs[i : i + chunk], models, workers)
        batch = GraphBatch.from_graphs([(m.features, m.edges) for m in macros])
        emb, _ = gcn.gcn_forward_batch(models.f_m, batch, False)
        out.append(emb)
    return np.vstack(out) if out else np.zeros((0, models.f_m.out_dim))


def embed_architecture(g: CompGraph, models: TrainedModels) -> np.ndarray:
    return embed_graphs([g], models)[0]


def predict_labels(embeddings: np.ndarray, models: TrainedModels) -> np.ndarray:
    if models.head is None:
        raise ValueError("models have no classifier head")
    return np.argmax(embeddings @ models.head.weight + models.head.bias, axis=1)


LOG_COLUMNS = ["stage", "epoch", "loss", "loss_cl", "loss_ce", "accuracy", "anchors", "skipped", "wall_time"]


def write_history(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow({k: row.get(k, "") for k in LOG_COLUMNS})
