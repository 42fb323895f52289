"""Iterative neighbour encoding, repeated-subsequence motif mining and motif subgraphs.

Each node's label absorbs the previous labels of its parents for ``s`` steps,
so after encoding a label stands for the node's order-``s`` in-neighbourhood.
The graph is linearized in a canonical topological order and motifs are the
repeated contiguous runs of that label sequence.
"""
from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import CompGraph, adjacency

Key = tuple


@dataclass
class EncodedSequence:
    steps: int
    labels: list[tuple[int, ...]]  # labels[k][node] == C^k of that node
    tables: list[dict[Key, int]]  # tables[k - 1] assigns C^k ids
    order: list[int]

    @property
    def sequence(self) -> list[int]:
        """C^s read along the linearization order."""
        final = self.labels[self.steps]
        return [final[n] for n in self.order]


@dataclass(frozen=True)
class MotifPattern:
    label_seq: tuple[int, ...]
    frequency: int
    rank: int
    spans: tuple[tuple[int, int], ...] = ()  # (sequence index, start position)
    singleton: bool = False

    @property
    def length(self) -> int:
        return len(self.label_seq)


@dataclass(frozen=True)
class MotifOccurrence:
    graph_id: int
    start: int  # position of the first core node in the linearization
    core_nodes: tuple[int, ...]
    expanded_nodes: tuple[int, ...]
    subgraph: CompGraph
    pattern: tuple[int, ...] = ()


@dataclass(frozen=True)
class ContextGraph:
    nodes: tuple[int, ...]
    subgraph: CompGraph
    hop: int


# ---------------------------------------------------------------- encoding


def _assign(keys: Sequence[Key], table: dict[Key, int]) -> list[int]:
    # New keys get dense ids in sorted key order, so ids never depend on node numbering.
    fresh = sorted({k for k in keys if k not in table})
    for k in fresh:
        table[k] = len(table)
    return [table[k] for k in keys]


def encode_step(
    adj_labeled: np.ndarray,
    labels_prev: Sequence[int],
    table: dict[Key, int] | None = None,
    include_children: bool = False,
) -> tuple[np.ndarray, list[int], dict[Key, int]]:
    """One relabelling step.

    ``adj_labeled[j, i]`` is nonzero iff ``j`` is a parent of ``i``.  In the
    returned matrix every nonzero entry ``(j, i)`` holds ``labels_prev[j] + 1``
    (the offset keeps label 0 distinguishable from "no edge").  Node ``i``'s
    new label is looked up from ``(labels_prev[i], sorted parent labels)``,
    extended with sorted child labels when ``include_children`` is set.
    """
    table = {} if table is None else table
    mask = np.asarray(adj_labeled) != 0
    prev = np.asarray(labels_prev, dtype=np.int64)
    new_adj = np.where(mask, prev[:, None] + 1, 0)
    keys: list[Key] = []
    for i in range(len(prev)):
        parents = tuple(sorted((new_adj[mask[:, i], i] - 1).tolist()))
        if include_children:
            children = tuple(sorted(prev[mask[i, :]].tolist()))
            keys.append((int(prev[i]), parents, children))
        else:
            keys.append((int(prev[i]), parents))
    return new_adj, _assign(keys, table), table


def encode(
    g: CompGraph,
    s: int = 2,
    tables: list[dict[Key, int]] | None = None,
    include_children: bool = False,
    frozen: bool = False,
) -> EncodedSequence:
    """Run ``s`` encoding steps starting from the operator labels.

    ``tables`` is shared across a corpus so equal neighbourhoods get equal ids
    in every graph.  With ``frozen`` the given tables are left untouched and
    unseen patterns receive ids past the end of each table.
    """
    if s < 1:
        raise ValueError("encoding needs at least one step")
    if tables is None:
        tables = [{} for _ in range(s)]
    elif frozen:
        tables = [dict(t) for t in tables]
    while len(tables) < s:
        tables.append({})
    adj = adjacency(g)
    labels = [tuple(g.node_ops)]
    for k in range(s):
        adj, nxt, _ = encode_step(adj, labels[-1], tables[k], include_children)
        labels.append(tuple(nxt))
    return EncodedSequence(s, labels, tables, canonical_order(g))


def stable_colors(g: CompGraph) -> list[int]:
    """Colour refinement over parents and children until the partition is stable."""
    parents, children = g.parents(), g.children()
    colors = list(g.node_ops)
    n_classes = len(set(colors))
    for _ in range(g.num_nodes):
        keys = [
            (colors[i], tuple(sorted(colors[p] for p in parents[i])), tuple(sorted(colors[c] for c in children[i])))
            for i in range(g.num_nodes)
        ]
        colors = _assign(keys, {})
        if len(set(colors)) == n_classes:
            break
        n_classes = len(set(colors))
    return colors


def canonical_order(g: CompGraph) -> list[int]:
    """Topological order independent of node numbering.

    Depth-first post-order over parent edges, starting from the sinks.  At
    every node the parent with the most ancestors is visited first, so a block
    that depends on the previous block is emitted only after that whole block,
    which keeps stacked blocks contiguous.  Remaining ties fall back to stable
    colours and finally node id (only automorphic nodes reach that point).
    """
    m = g.num_nodes
    parents, children = g.parents(), g.children()
    colors = stable_colors(g)
    anc = [0] * m
    from .graph import topological_order

    for v in topological_order(g):
        bits = 0
        for p in parents[v]:
            bits |= anc[p] | (1 << p)
        anc[v] = bits
    size = [a.bit_count() for a in anc]

    def key(v):
        return (-size[v], colors[v], v)

    ordered_parents = [sorted(ps, key=key) for ps in parents]
    visited = [False] * m
    order: list[int] = []
    for root in sorted((v for v in range(m) if not children[v]), key=key):
        if visited[root]:
            continue
        visited[root] = True
        stack = [(root, 0)]
        while stack:
            v, i = stack[-1]
            ps = ordered_parents[v]
            while i < len(ps) and visited[ps[i]]:
                i += 1
            if i < len(ps):
                stack[-1] = (v, i + 1)
                visited[ps[i]] = True
                stack.append((ps[i], 0))
            else:
                stack.pop()
                order.append(v)
    return order


# ------------------------------------------------------------------ mining


def _occurrences_nonoverlap(spans, length, covered):
    picked = []
    last_end: dict[int, int] = {}
    for seq_i, start in spans:
        if start < last_end.get(seq_i, 0):
            continue
        cov = covered[seq_i]
        if any(cov[start : start + length]):
            continue
        picked.append((seq_i, start))
        last_end[seq_i] = start + length
    return picked


def _gain(freq: int, length: int) -> int:
    # Symbols saved by replacing every occurrence with one token, minus the dictionary entry.
    return freq * (length - 1) - length


def mine_motifs(
    seqs: Sequence[Sequence[int]],
    min_len: int = 2,
    min_freq: int = 2,
    max_len: int = 64,
    covered: list[bytearray] | None = None,
    first_rank: int = 0,
    singletons: bool = True,
) -> list[MotifPattern]:
    """Greedy repeated-subsequence mining over label sequences.

    Repeatedly selects the contiguous pattern with the largest compression
    gain among those with at least ``min_freq`` non-overlapping occurrences
    on still-uncovered positions; occurrences are taken left to right.  Ties
    prefer longer patterns, then the lexicographically smaller label sequence.
    Uncovered positions become singleton patterns.  The result is sorted by
    length (descending) then label sequence; ``rank`` records selection order.
    """
    if min_len < 2 or min_freq < 2:
        raise ValueError("min_len and min_freq must be at least 2")
    covered = [bytearray(len(s)) for s in seqs] if covered is None else [bytearray(c) for c in covered]
    seqs = [tuple(s) for s in seqs]

    candidates: dict[tuple, list] = {}
    for length in range(min_len, max_len + 1):
        found: dict[tuple, list] = defaultdict(list)
        for si, seq in enumerate(seqs):
            cov = covered[si]
            run = 0
            for pos in range(len(seq)):
                run = 0 if cov[pos] else run + 1
                if run >= length:
                    start = pos - length + 1
                    found[seq[start : pos + 1]].append((si, start))
        alive = {p: occ for p, occ in found.items() if len(occ) >= min_freq}
        if not alive:
            break
        candidates.update(alive)

    heap = [(-_gain(len(occ), len(p)), -len(p), p) for p, occ in candidates.items()]
    heapq.heapify(heap)
    chosen: list[MotifPattern] = []
    rank = first_rank
    while heap:
        _, neg_len, pat = heapq.heappop(heap)
        length = -neg_len
        picked = _occurrences_nonoverlap(candidates[pat], length, covered)
        if len(picked) < min_freq:
            continue
        entry = (-_gain(len(picked), length), neg_len, pat)
        if heap and entry > heap[0]:
            heapq.heappush(heap, entry)
            continue
        for si, start in picked:
            covered[si][start : start + length] = b"\x01" * length
        chosen.append(MotifPattern(pat, len(picked), rank, tuple(picked)))
        rank += 1

    if singletons:
        chosen.extend(_singletons(seqs, covered, rank))
    chosen.sort(key=lambda p: (-p.length, p.label_seq))
    return chosen


def _singletons(seqs, covered, rank):
    spans: dict[int, list] = defaultdict(list)
    for si, seq in enumerate(seqs):
        for pos, lab in enumerate(seq):
            if not covered[si][pos]:
                spans[lab].append((si, pos))
    out = []
    for lab in sorted(spans):
        out.append(MotifPattern((lab,), len(spans[lab]), rank, tuple(spans[lab]), singleton=True))
        rank += 1
    return out


def brute_force_frequency(seqs: Sequence[Sequence[int]], pattern: Sequence[int]) -> int:
    """Count non-overlapping left-to-right occurrences by direct scanning."""
    pattern = list(pattern)
    total = 0
    for seq in seqs:
        seq = list(seq)
        i = 0
        while i + len(pattern) <= len(seq):
            if seq[i : i + len(pattern)] == pattern:
                total += 1
                i += len(pattern)
            else:
                i += 1
    return total


# ------------------------------------------------------------- occurrences


def in_neighborhood(g: CompGraph, nodes: Iterable[int], s: int) -> set[int]:
    """``nodes`` plus every ancestor reachable in at most ``s`` parent hops."""
    parents = g.parents()
    out = set(nodes)
    frontier = set(out)
    for _ in range(s):
        frontier = {p for n in frontier for p in parents[n]} - out
        if not frontier:
            break
        out |= frontier
    return out


def occurrences_from_spans(
    g: CompGraph,
    order: Sequence[int],
    spans: Iterable[tuple[int, int]],
    s: int,
    graph_id: int = 0,
    sequence: Sequence[int] | None = None,
) -> list[MotifOccurrence]:
    """Materialize occurrences for ``(start, length)`` spans over ``order``."""
    occs = []
    for start, length in sorted(spans):
        core = tuple(order[start : start + length])
        expanded = tuple(sorted(in_neighborhood(g, core, s)))
        pat = tuple(sequence[start : start + length]) if sequence is not None else ()
        occs.append(MotifOccurrence(graph_id, start, core, expanded, g.induced(expanded), pat))
    return occs


def extract_occurrences(
    g: CompGraph,
    seq: EncodedSequence,
    patterns: Sequence[MotifPattern],
    s: int | None = None,
    seq_index: int = 0,
    graph_id: int | None = None,
) -> list[MotifOccurrence]:
    """Occurrences of mined ``patterns`` inside the graph at ``seq_index``."""
    s = seq.steps if s is None else s
    spans = [(start, p.length) for p in patterns for si, start in p.spans if si == seq_index]
    occs = occurrences_from_spans(
        g, seq.order, spans, s, seq_index if graph_id is None else graph_id, seq.sequence
    )
    covered = sorted(n for o in occs for n in o.core_nodes)
    if covered != list(range(g.num_nodes)):
        raise ValueError("patterns do not partition the graph's nodes")
    return occs


def context_graph(g: CompGraph, occ: MotifOccurrence, k: int = 1) -> ContextGraph:
    """Motif subgraph together with every node within undirected distance ``k``."""
    if k < 1:
        raise ValueError("context hop must be at least 1")
    nbrs = [set() for _ in range(g.num_nodes)]
    for a, b in g.edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    dist = {n: 0 for n in occ.expanded_nodes}
    queue = deque(occ.expanded_nodes)
    while queue:
        n = queue.popleft()
        if dist[n] == k:
            continue
        for x in nbrs[n]:
            if x not in dist:
                dist[x] = dist[n] + 1
                queue.append(x)
    nodes = tuple(sorted(dist))
    return ContextGraph(nodes, g.induced(nodes), k)


# ------------------------------------------------------------------- miner


@dataclass
class MiningConfig:
    steps: int = 2
    min_len: int = 2
    min_freq: int = 2
    max_len: int = 64
    hop: int = 1
    include_children: bool = False
    scope: str = "corpus"  # or "graph"

    def __post_init__(self):
        if self.steps < 0 or self.hop < 0:
            raise ValueError("steps and hop must be non-negative")
        if self.min_len < 2 or self.min_freq < 2 or self.max_len < self.min_len:
            raise ValueError("need 2 <= min_len <= max_len and min_freq >= 2")
        if self.scope not in ("corpus", "graph"):
            raise ValueError(f"scope must be 'corpus' or 'graph', got {self.scope!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class MotifMiner:
    """Motif sampler fitted on a corpus and reusable on unseen graphs.

    On a new graph the fitted patterns are applied in their original selection
    order, then repeats inside the graph itself are mined, then singletons.
    For graphs of the fitting corpus this reproduces the corpus segmentation.
    """

    name = "ours"

    def __init__(self, config: MiningConfig | None = None):
        self.config = config or MiningConfig()
        self.tables: list[dict[Key, int]] = [{} for _ in range(self.config.steps)]
        self.patterns: list[MotifPattern] = []

    def fit(self, graphs: Sequence[CompGraph]) -> "MotifMiner":
        cfg = self.config
        encoded = [encode(g, cfg.steps, self.tables, cfg.include_children) for g in graphs]
        if cfg.scope == "corpus":
            pats = mine_motifs(
                [e.sequence for e in encoded], cfg.min_len, cfg.min_freq, cfg.max_len, singletons=False
            )
            self.patterns = sorted(pats, key=lambda p: p.rank)
        else:
            self.patterns = []
        return self

    def encode(self, g: CompGraph) -> EncodedSequence:
        cfg = self.config
        return encode(g, cfg.steps, self.tables, cfg.include_children, frozen=True)

    def spans(self, g: CompGraph, enc: EncodedSequence | None = None) -> list[tuple[int, int]]:
        cfg = self.config
        enc = enc or self.encode(g)
        seq = enc.sequence
        covered = bytearray(len(seq))
        spans = []
        by_rank = [p for p in self.patterns if not p.singleton]
        for p in by_rank:
            for _, start in _occurrences_nonoverlap(_find_all(seq, p.label_seq), p.length, [covered]):
                covered[start : start + p.length] = b"\x01" * p.length
                spans.append((start, p.length))
        local = mine_motifs([seq], cfg.min_len, cfg.min_freq, cfg.max_len, covered=[covered])
        for p in local:
            spans.extend((start, p.length) for _, start in p.spans)
        return sorted(spans)

    def segment(self, g: CompGraph, graph_id: int = 0) -> list[MotifOccurrence]:
        enc = self.encode(g)
        return occurrences_from_spans(
            g, enc.order, self.spans(g, enc), self.config.steps, graph_id, enc.sequence
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.name,
            "config": self.config.to_dict(),
            "tables": [[[_key_to_json(k), v] for k, v in t.items()] for t in self.tables],
            "patterns": [[list(p.label_seq), p.frequency, p.rank] for p in self.patterns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotifMiner":
        miner = cls(MiningConfig(**d["config"]))
        miner.tables = [{_key_from_json(k): v for k, v in t} for t in d["tables"]]
        miner.patterns = [MotifPattern(tuple(seq), f, r) for seq, f, r in d["patterns"]]
        return miner

    def dump(self, path: str | Path, graphs: Sequence[CompGraph]) -> None:
        """Debug dump: linearized labels and occurrence spans, one graph per line."""
        with open(path, "w", encoding="utf-8") as fh:
            for i, g in enumerate(graphs):
                enc = self.encode(g)
                rec = {"graph": i, "model_name": g.meta.model_name, "labels": enc.sequence,
                       "spans": [list(s) for s in self.spans(g, enc)]}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _find_all(seq, pat):
    n = len(pat)
    first = pat[0]
    return [(0, i) for i in range(len(seq) - n + 1) if seq[i] == first and tuple(seq[i : i + n]) == pat]


def _key_to_json(key):
    return [key[0]] + [list(part) for part in key[1:]]


def _key_from_json(raw):
    return (raw[0],) + tuple(tuple(part) for part in raw[1:])
