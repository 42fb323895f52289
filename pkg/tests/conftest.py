import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from narx.graph import CompGraph, GraphMeta, OperatorVocab

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

OPS = ["conv", "relu", "bn", "add", "pool", "linear"]


@pytest.fixture
def vocab():
    return OperatorVocab(OPS)


def random_dag(rng: np.random.Generator, m: int, p: float = 0.35, n_ops: int = len(OPS), label=None) -> CompGraph:
    """Edges only go from lower to higher id, then ids are shuffled so order is not given away."""
    ops = rng.integers(n_ops, size=m).tolist()
    edges = [(i, j) for i in range(m) for j in range(i + 1, m) if rng.random() < p]
    g = CompGraph(tuple(ops), tuple(edges), GraphMeta(model_name="rand"), label)
    return g.permuted(rng.permutation(m).tolist())


@st.composite
def dags(draw, min_nodes=1, max_nodes=12, n_ops=len(OPS)):
    m = draw(st.integers(min_nodes, max_nodes))
    ops = draw(st.lists(st.integers(0, n_ops - 1), min_size=m, max_size=m))
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    perm = draw(st.permutations(range(m)))
    g = CompGraph(tuple(ops), tuple(e for e, keep in zip(pairs, mask) if keep))
    return g.permuted(list(perm))


def chain(ops):
    return CompGraph(tuple(ops), tuple((i, i + 1) for i in range(len(ops) - 1)))


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
