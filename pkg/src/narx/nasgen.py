"""Synthetic DARTS-style architectures with genotype-distance class labels."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import CompGraph, GraphMeta, OperatorVocab

CELL_OPS = (
    "skip_connect",
    "max_pool_3x3",
    "avg_pool_3x3",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
)
STEM, ADD, CONCAT, POOL, FC = "stem_conv", "ADD", "Concat", "global_avg_pool", "linear"
NAS_VOCAB = OperatorVocab((STEM,) + CELL_OPS + (ADD, CONCAT, POOL, FC))

NUM_ADD = 4
NODES_PER_CELL = 2 * NUM_ADD + NUM_ADD + 1

# Source ids inside a cell: 0 = c_{k-2}, 1 = c_{k-1}, 2 + j = ADD node j.
Slot = tuple[int, int]  # (source id, op index into CELL_OPS)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellSpec:
    nodes: tuple[tuple[Slot, Slot], ...]

    def __post_init__(self):
        if len(self.nodes) != NUM_ADD:
            raise ValueError(f"a cell has exactly {NUM_ADD} ADD nodes")
        canon = []
        for i, conns in enumerate(self.nodes):
            if len(conns) != 2:
                raise ValueError("every ADD node has exactly 2 connections")
            (sa, oa), (sb, ob) = conns
            if sa == sb:
                raise ValueError("connections of one ADD node need distinct sources")
            for src, op in conns:
                if not 0 <= src < i + 2:
                    raise ValueError(f"ADD{i} cannot read from source {src}")
                if not 0 <= op < len(CELL_OPS):
                    raise ValueError(f"unknown op index {op}")
            canon.append(tuple(sorted(conns)))
        object.__setattr__(self, "nodes", tuple(canon))

    def slots(self) -> list[Slot]:
        return [slot for conns in self.nodes for slot in conns]

    def to_json(self) -> list:
        return [[[src, CELL_OPS[op]] for src, op in conns] for conns in self.nodes]

    @classmethod
    def from_json(cls, raw) -> "CellSpec":
        return cls(tuple(tuple((int(src), CELL_OPS.index(op)) for src, op in conns) for conns in raw))


def legal_sources(node: int) -> list[int]:
    return list(range(node + 2))


def sample_cell(rng: np.random.Generator) -> CellSpec:
    nodes = []
    for i in range(NUM_ADD):
        srcs = rng.choice(legal_sources(i), size=2, replace=False)
        ops = rng.integers(0, len(CELL_OPS), size=2)
        nodes.append(((int(srcs[0]), int(ops[0])), (int(srcs[1]), int(ops[1]))))
    return CellSpec(tuple(nodes))


def genotype_distance(a: CellSpec, b: CellSpec) -> int:
    """Number of connection slots that differ, comparing source-sorted slots per ADD node."""
    return sum(sa != sb for sa, sb in zip(a.slots(), b.slots()))


def cell_to_graph(spec: CellSpec, num_cells: int, label: int | None = None, name: str = "") -> CompGraph:
    """Stem, ``num_cells`` copies of the cell, then pooling and a linear classifier.

    Inside cell ``k`` ids run (op, op, ADD) per ADD node followed by the Concat
    node; cells ``k-2`` and ``k-1`` that do not exist are the stem.
    """
    if num_cells < 1:
        raise ValueError("need at least one cell")
    vi = NAS_VOCAB.lookup
    ops = [vi[STEM]]
    edges = []
    outputs = []  # node id of each cell's Concat
    for k in range(num_cells):
        base = len(ops)
        prev2 = outputs[k - 2] if k >= 2 else 0
        prev1 = outputs[k - 1] if k >= 1 else 0
        add_ids = []
        for i, conns in enumerate(spec.nodes):
            op_ids = []
            for src, op in conns:
                op_ids.append(len(ops))
                ops.append(vi[CELL_OPS[op]])
            add_id = len(ops)
            ops.append(vi[ADD])
            for (src, _), op_id in zip(conns, op_ids):
                src_id = prev2 if src == 0 else prev1 if src == 1 else add_ids[src - 2]
                edges.append((src_id, op_id))
                edges.append((op_id, add_id))
            add_ids.append(add_id)
        concat = len(ops)
        ops.append(vi[CONCAT])
        edges.extend((a, concat) for a in add_ids)
        outputs.append(concat)
        assert len(ops) - base == NODES_PER_CELL
    pool = len(ops)
    ops.extend([vi[POOL], vi[FC]])
    edges.extend([(outputs[-1], pool), (pool, pool + 1)])
    n_conv = sum(1 for o in ops if NAS_VOCAB.name(o).startswith(("sep_conv", "dil_conv", STEM)))
    meta = GraphMeta(model_name=name, repo_name="synthetic/darts", task_name="nas",
                     flops=len(ops), params=n_conv + 1)
    return CompGraph(tuple(ops), tuple(edges), meta, label)


def perturb(spec: CellSpec, edits: int, rng: np.random.Generator) -> CellSpec:
    """Apply ``edits`` random slot edits, each changing one source or one op."""
    nodes = [list(conns) for conns in spec.nodes]
    for _ in range(edits):
        i = int(rng.integers(NUM_ADD))
        j = int(rng.integers(2))
        src, op = nodes[i][j]
        other = nodes[i][1 - j][0]
        choices = [s for s in legal_sources(i) if s not in (src, other)]
        if choices and rng.random() < 0.5:
            src = int(choices[int(rng.integers(len(choices)))])
        else:
            op = int((op + 1 + rng.integers(len(CELL_OPS) - 1)) % len(CELL_OPS))
        nodes[i][j] = (src, op)
    return CellSpec(tuple(tuple(c) for c in nodes))


@dataclass
class NasDataset:
    graphs: list[CompGraph]
    specs: list[CellSpec]
    centers: list[CellSpec]
    manifest: dict


def sample_centers(num_classes: int, separation: int, rng: np.random.Generator, max_tries: int = 20000) -> list[CellSpec]:
    centers: list[CellSpec] = []
    tries = 0
    while len(centers) < num_classes:
        tries += 1
        if tries > max_tries:
            raise GenerationError(
                f"could not place {num_classes} centers {separation} slots apart; use fewer classes"
            )
        cand = sample_cell(rng)
        if all(genotype_distance(cand, c) >= separation for c in centers):
            centers.append(cand)
    return centers


def nearest_center(spec: CellSpec, centers: Sequence[CellSpec]) -> list[int]:
    d = [genotype_distance(spec, c) for c in centers]
    best = min(d)
    return [i for i, x in enumerate(d) if x == best]


def generate_dataset(
    n: int,
    num_classes: int,
    max_radius: int = 2,
    rng: np.random.Generator | int = 0,
    num_cells: int = 3,
    separation: int = 6,
    max_retries: int = 1000,
) -> NasDataset:
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    seed = rng if isinstance(rng, int) else None
    rng = np.random.default_rng(rng) if isinstance(rng, int) else rng
    centers = sample_centers(num_classes, separation, rng)
    items: list[tuple[int, CellSpec]] = []
    for c in range(num_classes):
        count = n // num_classes + (1 if c < n % num_classes else 0)
        for _ in range(count):
            for _attempt in range(max_retries):
                spec = perturb(centers[c], int(rng.integers(max_radius + 1)), rng)
                if nearest_center(spec, centers) == [c]:
                    break
            else:
                raise GenerationError("could not draw an argmin-consistent member; lower max_radius")
            items.append((c, spec))
    perm = rng.permutation(len(items))
    items = [items[i] for i in perm]
    graphs = [
        cell_to_graph(spec, num_cells, label=c, name=f"nas-c{c}-{i:05d}")
        for i, (c, spec) in enumerate(items)
    ]
    manifest = {
        "seed": seed,
        "n": n,
        "num_classes": num_classes,
        "max_radius": max_radius,
        "num_cells": num_cells,
        "separation": separation,
        "centers": [c.to_json() for c in centers],
    }
    return NasDataset(graphs, [s for _, s in items], centers, manifest)


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
