"""Exact cosine top-k retrieval over an embedding store, plus MRR / MAP / NDCG."""
from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

INDEX_MAGIC = b"NARXIDX\n"
INDEX_VERSION = 1
DEFAULT_CUTOFFS = (20, 50, 100)


def _norm(v) -> float:
    return math.sqrt(math.fsum(x * x for x in v.tolist()))


def exact_cosine(q: np.ndarray, q_norm: float, x: np.ndarray, x_norm: float) -> float:
    """Cosine with a correctly rounded dot product, so scores do not depend on summation order."""
    if q_norm == 0.0 or x_norm == 0.0:
        return 0.0
    return math.fsum((q * x).tolist()) / (q_norm * x_norm)


@dataclass
class RankedResult:
    query_id: str
    hits: list[tuple[str, float]]

    @property
    def ids(self) -> list[str]:
        return [h for h, _ in self.hits]


class EmbeddingIndex:
    """Append-only store of id -> vector with per-id name and label."""

    def __init__(self, dim: int):
        self.dim = dim
        self.ids: list[str] = []
        self.names: list[str] = []
        self.labels: list[int | None] = []
        self._rows: list[np.ndarray] = []
        self._norms: list[float] = []
        self._pos: dict[str, int] = {}
        self._write = threading.Lock()  # readers never take it; rows are only appended

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vectors(self) -> np.ndarray:
        return np.vstack(self._rows) if self._rows else np.zeros((0, self.dim))

    def add(self, id_: str, vector, name: str = "", label: int | None = None) -> None:
        id_ = str(id_)
        vec = np.array(vector, dtype=float).reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(f"vector has dim {vec.shape[0]}, index dim is {self.dim}")
        norm = _norm(vec)
        with self._write:
            if id_ in self._pos:
                raise ValueError(f"duplicate id {id_!r}")
            self.names.append(name)
            self.labels.append(label)
            self._rows.append(vec)
            self._norms.append(norm)
            self.ids.append(id_)
            self._pos[id_] = len(self.ids) - 1

    def label_of(self, id_: str) -> int | None:
        return self.labels[self._pos[id_]]

    def query(self, h_q, k: int, exclude_self: str | None = None, query_id: str = "") -> RankedResult:
        """Top ``k`` rows by cosine; ties go to the smaller id.  ``exclude_self`` drops that id."""
        if k < 1:
            raise ValueError("k must be at least 1")
        q = np.asarray(h_q, dtype=float).reshape(-1)
        if q.shape[0] != self.dim:
            raise ValueError(f"query has dim {q.shape[0]}, index dim is {self.dim}")
        qn = _norm(q)
        scored = [
            (exact_cosine(q, qn, row, rn), id_)
            for id_, row, rn in zip(self.ids, self._rows, self._norms)
            if id_ != exclude_self
        ]
        scored.sort(key=lambda t: (-t[0], t[1]))
        return RankedResult(query_id or (exclude_self or ""), [(i, s) for s, i in scored[:k]])

    # ------------------------------------------------------------- file io

    def save(self, path: str | Path) -> None:
        """Header (dim, count, version) and id table as one JSON line, then float64 rows."""
        header = {
            "version": INDEX_VERSION,
            "dim": self.dim,
            "count": len(self),
            "ids": self.ids,
            "names": self.names,
            "labels": self.labels,
        }
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(self.vectors.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        with open(path, "rb") as fh:
            if fh.read(len(INDEX_MAGIC)) != INDEX_MAGIC:
                raise ValueError(f"{path} is not a narx index file")
            header = json.loads(fh.readline())
            if header.get("version") != INDEX_VERSION:
                raise ValueError(f"unsupported index version {header.get('version')}")
            data = np.frombuffer(fh.read(), dtype="<f8")
        idx = cls(header["dim"])
        rows = data.reshape(header["count"], header["dim"]) if header["count"] else data.reshape(0, header["dim"])
        for i, row in enumerate(rows):
            idx.add(header["ids"][i], row, header["names"][i], header["labels"][i])
        return idx

    def export_csv(self, path: str | Path) -> int:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "label"] + [f"v{j}" for j in range(self.dim)])
            for id_, lab, row in zip(self.ids, self.labels, self._rows):
                w.writerow([id_, "" if lab is None else lab] + [repr(float(x)) for x in row])
        return len(self)


# ----------------------------------------------------------------- metrics


class LabelOracle:
    """Relevant means same label as the query; the query itself never counts."""

    def __init__(self, labels: dict[str, int], pool: Iterable[str]):
        self.labels = labels
        self._counts: dict[int, int] = {}
        for id_ in pool:
            lab = labels[id_]
            self._counts[lab] = self._counts.get(lab, 0) + 1
        self._pool = set(pool)

    def relevant(self, query_id: str, hit_id: str) -> bool:
        return hit_id != query_id and self.labels[hit_id] == self.labels[query_id]

    def total(self, query_id: str) -> int:
        n = self._counts.get(self.labels[query_id], 0)
        return n - (1 if query_id in self._pool else 0)


def _gains(result: RankedResult, oracle, k: int) -> list[int]:
    return [int(oracle.relevant(result.query_id, h)) for h in result.ids[:k]]


def _check(results):
    if not results:
        raise ValueError("metrics need at least one query")


def mrr_at_k(results: Sequence[RankedResult], oracle, k: int) -> float:
    _check(results)
    total = 0.0
    for r in results:
        for rank, g in enumerate(_gains(r, oracle, k), 1):
            if g:
                total += 1.0 / rank
                break
    return total / len(results)


def map_at_k(results: Sequence[RankedResult], oracle, k: int) -> float:
    """Precision at each relevant rank, averaged with denominator ``min(k, total relevant)``."""
    _check(results)
    total = 0.0
    for r in results:
        n_rel = oracle.total(r.query_id)
        if n_rel == 0:
            continue
        hits = 0
        acc = 0.0
        for rank, g in enumerate(_gains(r, oracle, k), 1):
            if g:
                hits += 1
                acc += hits / rank
        total += acc / min(k, n_rel)
    return total / len(results)


def ndcg_at_k(results: Sequence[RankedResult], oracle, k: int) -> float:
    """Binary gains with a log2(rank + 1) discount."""
    _check(results)
    total = 0.0
    for r in results:
        ideal = min(k, oracle.total(r.query_id))
        if ideal == 0:
            continue
        dcg = sum(g / math.log2(rank + 1) for rank, g in enumerate(_gains(r, oracle, k), 1))
        idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal + 1))
        total += dcg / idcg
    return total / len(results)


@dataclass
class MetricReport:
    values: dict[tuple[str, int], float] = field(default_factory=dict)
    queries: int = 0

    def get(self, metric: str, cutoff: int) -> float:
        return self.values[(metric, cutoff)]

    @property
    def cutoffs(self) -> list[int]:
        return sorted({c for _, c in self.values})

    def rows(self) -> list[tuple[str, int, float]]:
        order = {"mrr": 0, "map": 1, "ndcg": 2}
        return sorted(((m, c, v) for (m, c), v in self.values.items()), key=lambda t: (order[t[0]], t[1]))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "cutoff", "value"])
            for m, c, v in self.rows():
                w.writerow([m, c, f"{v:.6f}"])

    def table(self, title: str = "") -> str:
        cuts = self.cutoffs
        head = " | ".join(f"{m.upper()}@{c}" for m in ("mrr", "map", "ndcg") for c in cuts)
        vals = " | ".join(f"{self.get(m, c):.3f}".rjust(len(f"{m.upper()}@{c}")) for m in ("mrr", "map", "ndcg") for c in cuts)
        lines = [title] if title else []
        lines += [head, vals, f"({self.queries} queries)"]
        return "\n".join(lines)


METRICS: dict[str, Callable] = {"mrr": mrr_at_k, "map": map_at_k, "ndcg": ndcg_at_k}


def evaluate(
    index: EmbeddingIndex,
    queries: Sequence[tuple[str, np.ndarray]],
    cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
    exclude_self: bool = True,
) -> MetricReport:
    """Query every ``(id, vector)`` and score against same-label relevance."""
    labels = dict(zip(index.ids, index.labels))
    kmax = max(cutoffs)
    results = []
    for qid, vec in queries:
        if qid not in labels:
            raise KeyError(f"query id {qid!r} has no label in the index")
        results.append(index.query(vec, kmax, exclude_self=qid if exclude_self else None, query_id=qid))
    oracle = LabelOracle(labels, index.ids)
    report = MetricReport(queries=len(results))
    for name, fn in METRICS.items():
        for c in cutoffs:
            report.values[(name, c)] = fn(results, oracle, c)
    return report
