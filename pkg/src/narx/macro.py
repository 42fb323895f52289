"""Macro graphs: one node per motif occurrence, carrying that motif's embedding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import CompGraph
from .motifs import MotifOccurrence


@dataclass(frozen=True)
class MacroGraph:
    occurrences: tuple[MotifOccurrence, ...]
    features: np.ndarray  # one embedding row per occurrence
    edges: tuple[tuple[int, int], ...]
    label: int | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.occurrences)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.num_nodes, self.num_nodes))
        for a, b in self.edges:
            adj[a, b] = 1.0
        return adj


def build_macro(g: CompGraph, occs: Sequence[MotifOccurrence], embeds) -> MacroGraph:
    """Connect occurrences whose cores are joined by an edge or whose subgraphs share an edge.

    A macro edge ``i -> j`` exists when a parent-graph edge runs from core(i)
    into core(j), or when the expanded subgraphs of ``i`` and ``j`` share a
    parent-graph edge and core(i) starts earlier in the linearization.
    """
    embeds = np.asarray(embeds, dtype=float)
    if embeds.ndim != 2 or len(embeds) != len(occs):
        raise ValueError("need one embedding row per occurrence")
    owner = {}
    for idx, occ in enumerate(occs):
        for n in occ.core_nodes:
            if n in owner:
                raise ValueError(f"node {n} appears in two occurrence cores")
            owner[n] = idx
    if len(owner) != g.num_nodes:
        raise ValueError("occurrences do not cover the graph")

    edges = set()
    for s, d in g.edges:
        i, j = owner[s], owner[d]
        if i != j:
            edges.add((i, j))

    edge_sets = []
    for occ in occs:
        nodes = set(occ.expanded_nodes)
        edge_sets.append({e for e in g.edges if e[0] in nodes and e[1] in nodes})
    by_edge: dict[tuple[int, int], list[int]] = {}
    for idx, es in enumerate(edge_sets):
        for e in es:
            by_edge.setdefault(e, []).append(idx)
    for members in by_edge.values():
        for a in members:
            for b in members:
                if a != b and occs[a].start < occs[b].start:
                    edges.add((a, b))
    return MacroGraph(tuple(occs), embeds, tuple(sorted(edges)), g.label)
