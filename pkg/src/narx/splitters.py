"""Baseline graph splitters: fixed motif size, fixed motif count, random sizes.

They cut the same canonical linearization the motif miner uses and expand
cores the same way, so only the choice of boundaries differs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .graph import CompGraph
from .motifs import MiningConfig, MotifMiner, MotifOccurrence, canonical_order, occurrences_from_spans


@dataclass
class _Splitter:
    steps: int = 2
    hop: int = 1

    name = "base"

    @property
    def config(self) -> MiningConfig:
        return MiningConfig(steps=self.steps, hop=self.hop)

    def fit(self, graphs):
        return self

    def sizes(self, g: CompGraph) -> list[int]:
        raise NotImplementedError

    def segment(self, g: CompGraph, graph_id: int = 0) -> list[MotifOccurrence]:
        order = canonical_order(g)
        spans, start = [], 0
        for size in self.sizes(g):
            spans.append((start, size))
            start += size
        return occurrences_from_spans(g, order, spans, self.steps, graph_id)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        d["kind"] = self.name
        return d


@dataclass
class NodeNumSplitter(_Splitter):
    nodes_per_motif: int = 8
    name = "node-num"

    def sizes(self, g):
        m, n = g.num_nodes, self.nodes_per_motif
        return [min(n, m - s) for s in range(0, m, n)]


@dataclass
class MotifNumSplitter(_Splitter):
    num_motifs: int = 6
    name = "motif-num"

    def sizes(self, g):
        parts = min(self.num_motifs, g.num_nodes)
        return [len(c) for c in np.array_split(np.arange(g.num_nodes), parts)]


@dataclass
class RandomSplitter(_Splitter):
    min_size: int = 4
    max_size: int = 12
    seed: int = 0
    name = "random"

    def sizes(self, g):
        # Seeded per graph content so the same graph always gets the same cut.
        digest = hashlib.sha256(repr((self.seed, g.node_ops, g.edges)).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        out, left = [], g.num_nodes
        while left > 0:
            size = min(left, int(rng.integers(self.min_size, self.max_size + 1)))
            out.append(size)
            left -= size
        return out


SPLITTERS = {"ours": MotifMiner, "node-num": NodeNumSplitter, "motif-num": MotifNumSplitter, "random": RandomSplitter}


def make_splitter(name: str, mining: MiningConfig | None = None, seed: int = 0, **kw):
    mining = mining or MiningConfig()
    if name == "ours":
        return MotifMiner(mining)
    if name not in SPLITTERS:
        raise ValueError(f"unknown splitter {name!r}; choose from {sorted(SPLITTERS)}")
    if name == "random":
        kw.setdefault("seed", seed)
    return SPLITTERS[name](steps=mining.steps, hop=mining.hop, **kw)


def splitter_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "ours":
        return MotifMiner.from_dict({"kind": kind, **d})
    return SPLITTERS[kind](**d)
