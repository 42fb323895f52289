"""Computational graphs of neural architectures: validation, IO, featurization."""
from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

UNK = "UNK"

# Backward-pass operators that carry no architectural information.
DEFAULT_STOPLIST = ("TBackward", "TBackward0", "AccumulateGrad", "AccumulateBackward")


class GraphError(ValueError):
    """Base class for corpus and graph validation failures."""


class ParseError(GraphError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class ValidationError(GraphError):
    pass


class CyclicGraphError(GraphError):
    def __init__(self, edge: tuple[int, int]):
        self.edge = edge
        super().__init__(f"graph contains a cycle through edge {edge[0]}->{edge[1]}")


class OperatorVocab:
    """Ordered operator alphabet with a reserved UNK entry."""

    def __init__(self, entries: Iterable[str], unk: str = UNK):
        names = list(entries)
        if unk not in names:
            names.append(unk)
        if len(set(names)) != len(names):
            raise ValueError("operator vocabulary contains duplicate names")
        self.entries: tuple[str, ...] = tuple(names)
        self.lookup: dict[str, int] = {n: i for i, n in enumerate(self.entries)}
        self.unk_index = self.lookup[unk]
        self.unknown_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OperatorVocab) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"OperatorVocab({len(self)} ops)"

    def index(self, name: str) -> int:
        idx = self.lookup.get(name)
        if idx is None:
            self.unknown_count += 1
            return self.unk_index
        return idx

    def name(self, idx: int) -> str:
        return self.entries[idx]

    @classmethod
    def from_corpus(cls, op_lists: Iterable[Sequence[str]]) -> "OperatorVocab":
        seen = sorted({op for ops in op_lists for op in ops if op != UNK})
        return cls(seen)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "OperatorVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])


@dataclass(frozen=True)
class GraphMeta:
    model_name: str = ""
    repo_name: str = ""
    task_name: str = ""
    flops: int = 0
    params: int = 0


@dataclass(frozen=True)
class CompGraph:
    """Directed acyclic graph of operator nodes.

    ``node_ops`` holds operator indices into the vocabulary the graph was
    parsed with; ``edges`` are ``(src, dst)`` pairs.
    """

    node_ops: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    meta: GraphMeta = field(default_factory=GraphMeta)
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "node_ops", tuple(int(o) for o in self.node_ops))
        object.__setattr__(self, "edges", tuple((int(s), int(d)) for s, d in self.edges))
        validate(self)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ops)

    def parents(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for s, d in self.edges:
            out[d].append(s)
        return out

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for s, d in self.edges:
            out[s].append(d)
        return out

    def induced(self, nodes: Iterable[int]) -> "CompGraph":
        """Induced subgraph; nodes are renumbered in ascending original id."""
        keep = sorted(set(nodes))
        remap = {n: i for i, n in enumerate(keep)}
        edges = [(remap[s], remap[d]) for s, d in self.edges if s in remap and d in remap]
        return CompGraph(tuple(self.node_ops[n] for n in keep), tuple(edges), self.meta, self.label)

    def permuted(self, perm: Sequence[int]) -> "CompGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        m = self.num_nodes
        ops = [0] * m
        for i, p in enumerate(perm):
            ops[p] = self.node_ops[i]
        edges = sorted((perm[s], perm[d]) for s, d in self.edges)
        return CompGraph(tuple(ops), tuple(edges), self.meta, self.label)


def validate(g: CompGraph) -> None:
    m = len(g.node_ops)
    seen = set()
    for s, d in g.edges:
        if not (0 <= s < m and 0 <= d < m):
            raise ValidationError(f"edge ({s},{d}) out of range for {m} nodes")
        if s == d:
            raise ValidationError(f"self-edge on node {s}")
        if (s, d) in seen:
            raise ValidationError(f"duplicate edge ({s},{d})")
        seen.add((s, d))
    topological_order(g)


def topological_order(g: CompGraph) -> list[int]:
    """Kahn's algorithm; incomparable nodes come out in ascending id."""
    m = len(g.node_ops)
    indeg = [0] * m
    children: list[list[int]] = [[] for _ in range(m)]
    for s, d in g.edges:
        indeg[d] += 1
        children[s].append(d)
    heap = [i for i in range(m) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != m:
        raise CyclicGraphError(_edge_on_cycle(g, set(order)))
    return order


def _edge_on_cycle(g: "CompGraph", done: set[int]) -> tuple[int, int]:
    # Every leftover node still has a leftover parent, so walking parents must loop.
    parent = {}
    for s, d in g.edges:
        if s not in done and d not in done:
            parent.setdefault(d, s)
    node = min(parent)
    seen = set()
    while node not in seen:
        seen.add(node)
        node = parent[node]
    return parent[node], node


def adjacency(g: CompGraph) -> np.ndarray:
    """``m x m`` matrix with entry ``(j, i) = 1`` iff edge ``j -> i``; column i lists parents of i."""
    m = g.num_nodes
    adj = np.zeros((m, m))
    for s, d in g.edges:
        adj[s, d] = 1.0
    return adj


def one_hot_features(g: CompGraph, vocab: OperatorVocab) -> np.ndarray:
    feats = np.zeros((g.num_nodes, len(vocab)))
    feats[np.arange(g.num_nodes), list(g.node_ops)] = 1.0
    return feats


def parse_record(
    line: str,
    vocab: OperatorVocab,
    line_no: int | None = None,
    stoplist: Sequence[str] = DEFAULT_STOPLIST,
) -> CompGraph:
    """Parse one corpus line.

    Nodes whose operator is in ``stoplist`` are dropped and their edges are
    bridged (parents of a dropped node become parents of its children).
    """
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", line_no) from exc
    if not isinstance(rec, dict) or "ops" not in rec or "edges" not in rec:
        raise ParseError("record must be an object with 'ops' and 'edges'", line_no)
    ops = rec["ops"]
    edges = rec["edges"]
    if not isinstance(ops, list) or not all(isinstance(o, str) for o in ops):
        raise ParseError("'ops' must be a list of strings", line_no)
    try:
        edges = [(int(e[0]), int(e[1])) for e in edges]
    except (TypeError, ValueError, IndexError) as exc:
        raise ParseError("'edges' must be a list of [src, dst] pairs", line_no) from exc
    m = len(ops)
    for s, d in edges:
        if not (0 <= s < m and 0 <= d < m):
            raise ValidationError(
                (f"line {line_no}: " if line_no is not None else "")
                + f"edge ({s},{d}) out of range for {m} nodes"
            )
    if stoplist and any(o in stoplist for o in ops):
        ops, edges = _drop_stopped(ops, edges, set(stoplist))
    meta = GraphMeta(
        model_name=str(rec.get("model_name", "")),
        repo_name=str(rec.get("repo_name", "")),
        task_name=str(rec.get("task_name", "")),
        flops=int(rec.get("flops", 0) or 0),
        params=int(rec.get("params", 0) or 0),
    )
    label = rec.get("label")
    node_ops = [vocab.index(o) for o in ops]
    try:
        return CompGraph(tuple(node_ops), tuple(edges), meta, None if label is None else int(label))
    except ValidationError as exc:
        raise ValidationError((f"line {line_no}: " if line_no is not None else "") + str(exc)) from exc


def _drop_stopped(ops, edges, stop):
    parents: dict[int, set[int]] = {i: set() for i in range(len(ops))}
    for s, d in edges:
        parents[d].add(s)
    dropped = {i for i, o in enumerate(ops) if o in stop}

    def live_parents(n, seen):
        out = set()
        for p in parents[n]:
            if p in dropped:
                if p not in seen:
                    seen.add(p)
                    out |= live_parents(p, seen)
            else:
                out.add(p)
        return out

    keep = [i for i in range(len(ops)) if i not in dropped]
    remap = {n: i for i, n in enumerate(keep)}
    new_edges = set()
    for n in keep:
        for p in live_parents(n, set()):
            new_edges.add((remap[p], remap[n]))
    return [ops[i] for i in keep], sorted(new_edges)


def serialize_record(g: CompGraph, vocab: OperatorVocab) -> str:
    rec = {
        "model_name": g.meta.model_name,
        "repo_name": g.meta.repo_name,
        "task_name": g.meta.task_name,
        "ops": [vocab.name(o) for o in g.node_ops],
        "edges": [list(e) for e in g.edges],
        "flops": g.meta.flops,
        "params": g.meta.params,
    }
    if g.label is not None:
        rec["label"] = g.label
    return json.dumps(rec, separators=(",", ":"))


def iter_corpus(path: str | Path, vocab: OperatorVocab, **kw) -> Iterator[CompGraph]:
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if line.strip():
                yield parse_record(line, vocab, line_no=no, **kw)


def read_raw_ops(path: str | Path) -> list[list[str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(list(json.loads(line)["ops"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError("malformed record", no) from exc
    return out


def load_corpus(path: str | Path, vocab: OperatorVocab | None = None) -> tuple[list[CompGraph], OperatorVocab]:
    if vocab is None:
        vocab = OperatorVocab.from_corpus(read_raw_ops(path))
    graphs = list(iter_corpus(path, vocab))
    if vocab.unknown_count:
        log.warning("%d nodes mapped to %s", vocab.unknown_count, UNK)
    return graphs, vocab


def write_corpus(path: str | Path, graphs: Iterable[CompGraph], vocab: OperatorVocab) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(serialize_record(g, vocab) + "\n")
            n += 1
    return n
