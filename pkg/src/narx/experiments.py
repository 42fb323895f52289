"""Desk-scale experiments: stratified split, retrieval evaluation, ablations, splitter comparison."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import CompGraph, OperatorVocab
from .motifs import MiningConfig
from .nasgen import NAS_VOCAB, NasDataset, generate_dataset
from .pipeline import (
    LOSS_MODES, StageConfig, TrainedModels, build_macro_graphs, embed_graphs,
    graph_stage_defaults, motif_stage_defaults, stage1_train, stage2_train,
)
from .retrieval import DEFAULT_CUTOFFS, EmbeddingIndex, MetricReport, evaluate
from .splitters import SPLITTERS

log = logging.getLogger(__name__)


def stratified_split(labels: Sequence[int], ratio: float, seed: int) -> tuple[list[int], list[int]]:
    """Per-class shuffle, ``round(ratio * size)`` to train.  Singleton classes stay in train."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train, test = [], []
    for c in sorted(set(labels.tolist())):
        members = rng.permutation(np.flatnonzero(labels == c)).tolist()
        if len(members) == 1:
            log.warning("class %s has a single member; keeping it in train", c)
            train += members
            continue
        k = min(len(members) - 1, max(1, int(round(ratio * len(members)))))
        train += members[:k]
        test += members[k:]
    return sorted(train), sorted(test)


def build_index(graphs: Sequence[CompGraph], embeddings: np.ndarray, ids: Sequence[str] | None = None) -> EmbeddingIndex:
    ids = [str(i) for i in range(len(graphs))] if ids is None else list(ids)
    index = EmbeddingIndex(embeddings.shape[1])
    for id_, g, e in zip(ids, graphs, embeddings):
        index.add(id_, e, g.meta.model_name, g.label)
    return index


def retrieval_report(graphs, embeddings, query_idx, cutoffs=DEFAULT_CUTOFFS) -> MetricReport:
    """Index every graph, query with the held-out ones, self excluded."""
    index = build_index(graphs, embeddings)
    return evaluate(index, [(str(i), embeddings[i]) for i in query_idx], cutoffs)


DESK_TEMPERATURE = 0.2


def desk_stage_configs(seed: int = 0) -> tuple[StageConfig, StageConfig]:
    """Default recipes with a sharper contrastive temperature in both stages, which small corpora need."""
    return (motif_stage_defaults(temperature=DESK_TEMPERATURE, seed=seed),
            graph_stage_defaults(temperature=DESK_TEMPERATURE, seed=seed))


def random_embeddings(n: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, dim))


@dataclass
class DeskResult:
    reports: dict[str, MetricReport]
    baseline: MetricReport
    history: dict[str, list[dict]] = field(default_factory=dict)
    models: dict[str, TrainedModels] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class DeskSetup:
    dataset: NasDataset
    train_idx: list[int]
    test_idx: list[int]

    @property
    def graphs(self) -> list[CompGraph]:
        return self.dataset.graphs

    @property
    def train_graphs(self) -> list[CompGraph]:
        return [self.dataset.graphs[i] for i in self.train_idx]


def desk_setup(n: int = 1000, num_classes: int = 10, seed: int = 0, ratio: float = 0.9, max_radius: int = 2) -> DeskSetup:
    ds = generate_dataset(n, num_classes, max_radius, seed)
    train, test = stratified_split([g.label for g in ds.graphs], ratio, seed)
    return DeskSetup(ds, train, test)


def desk_experiment(
    setup: DeskSetup,
    losses: Sequence[str] = ("ce+cl",),
    stage1: StageConfig | None = None,
    stage2: StageConfig | None = None,
    mining: MiningConfig | None = None,
    splitter: str = "ours",
    vocab: OperatorVocab = NAS_VOCAB,
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    seed: int = 0,
) -> DeskResult:
    """One stage-1 fit shared across every requested stage-2 loss mode."""
    t0 = time.perf_counter()
    desk1, desk2 = desk_stage_configs(seed)
    stage1 = stage1 or desk1
    stage2 = stage2 or desk2
    for mode in losses:
        if mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {mode!r}")
    m1 = stage1_train(setup.train_graphs, vocab, stage1, mining, splitter=splitter)
    reports, history, models = {}, {}, {}
    for mode in losses:
        m2 = stage2_train(setup.train_graphs, m1, stage2, loss=mode)
        emb = embed_graphs(setup.graphs, m2)
        reports[mode] = retrieval_report(setup.graphs, emb, setup.test_idx, cutoffs)
        history[mode] = m2.history
        models[mode] = m2
    base = random_embeddings(len(setup.graphs), stage2.embed_dim, seed)
    baseline = retrieval_report(setup.graphs, base, setup.test_idx, cutoffs)
    return DeskResult(reports, baseline, history, models, time.perf_counter() - t0)


@dataclass
class SplitRow:
    splitter: str
    report: MetricReport
    motifs_per_graph: float
    macro_reduction: float  # mean macro nodes / original nodes


def compare_splitters(
    setup: DeskSetup,
    splitters: Sequence[str] = tuple(SPLITTERS),
    stage1: StageConfig | None = None,
    stage2: StageConfig | None = None,
    loss: str = "ce+cl",
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    seed: int = 0,
    vocab: OperatorVocab = NAS_VOCAB,
) -> list[SplitRow]:
    rows = []
    for name in splitters:
        res = desk_experiment(setup, (loss,), stage1, stage2, splitter=name, vocab=vocab, cutoffs=cutoffs, seed=seed)
        macros = build_macro_graphs(setup.graphs, res.models[loss])
        counts = np.array([m.num_nodes for m in macros], dtype=float)
        sizes = np.array([g.num_nodes for g in setup.graphs], dtype=float)
        rows.append(SplitRow(name, res.reports[loss], float(counts.mean()), float((counts / sizes).mean())))
        log.info("splitter %s done in %.1fs", name, res.wall_time)
    return rows


def splitter_table(rows: Sequence[SplitRow]) -> str:
    """Plain-text comparison: one row per strategy, same columns for all."""
    cuts = rows[0].report.cutoffs if rows else []
    cols = [f"{m.upper()}@{c}" for m in ("mrr", "map", "ndcg") for c in cuts]
    head = ["splitter", "motifs/graph", "macro/orig"] + cols
    lines = [" | ".join(head)]
    for r in rows:
        vals = [r.splitter, f"{r.motifs_per_graph:.2f}", f"{r.macro_reduction:.3f}"]
        vals += [f"{r.report.get(m, c):.3f}" for m in ("mrr", "map", "ndcg") for c in cuts]
        lines.append(" | ".join(v.rjust(len(h)) for v, h in zip(vals, head)))
    return "\n".join(lines)


def write_splitter_csv(path, rows: Sequence[SplitRow]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["splitter", "metric", "cutoff", "value", "motifs_per_graph", "macro_reduction"])
        for r in rows:
            for m, c, v in r.report.rows():
                w.writerow([r.splitter, m, c, f"{v:.6f}", f"{r.motifs_per_graph:.6f}", f"{r.macro_reduction:.6f}"])
