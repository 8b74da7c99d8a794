import sys

import numpy as np
import pytest

from mglc.context import ContextGraph, Label
from mglc.fewshot import PropertyDataset, generate_synthetic
from mglc.molgraph import parse_smiles


def random_context_graph(rng: np.random.Generator, max_nodes: int = 200, motifs: bool = True) -> ContextGraph:
    """Random molecule/property/motif graph with no isolated nodes."""
    n_prop = int(rng.integers(2, 6))
    n_motif = int(rng.integers(1, max(2, max_nodes // 4))) if motifs else 0
    n_mol = int(rng.integers(2, max(3, max_nodes - n_prop - n_motif)))
    n_sup = int(rng.integers(1, n_mol))
    src, dst, lab = [], [], []
    for m in range(n_mol):
        first = 0 if m < n_sup else 1
        for p in range(first, n_prop):
            if rng.random() < 0.8 or m == 0 or p == first:
                src.append(m)
                dst.append(n_mol + p)
                lab.append(int(rng.integers(0, 3)))
    base = n_mol + n_prop
    for z in range(n_motif):
        # heavy-tailed: a few motifs appear in many molecules
        k = min(n_mol, 1 + int(rng.pareto(1.2)))
        for m in rng.choice(n_mol, size=k, replace=False):
            src.append(int(m))
            dst.append(base + z)
            lab.append(int(Label.CONTAINS))
    g = ContextGraph(tuple(range(n_mol)), n_sup, tuple(range(n_prop)), tuple(range(n_motif)),
                     np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(lab, dtype=np.int64))
    assert g.degree.min() >= 1
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(240, rng=11, label_dropout=0.1)


def tiny_dataset(smiles: list[str], labels: list[list[float]], names: list[str] | None = None) -> PropertyDataset:
    arr = np.array(labels, dtype=np.float64).reshape(len(smiles), -1)
    names = names or [f"p{i}" for i in range(arr.shape[1])]
    return PropertyDataset(list(smiles), [parse_smiles(s) for s in smiles], names, arr)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance.RESULTS):
            terminalreporter.write_line(acceptance.RESULTS[n])
