"""Bundled toy inputs: a 20-molecule motif corpus and a small labelled dataset."""

from __future__ import annotations

from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).parent
CORPUS_PATH = DATA_DIR / "toy_corpus.smi"
DATASET_PATH = DATA_DIR / "toy_dataset.csv"


def read_corpus(path: str | Path = CORPUS_PATH):
    """Parse one SMILES per line; blank lines and ``#`` comments are ignored."""
    from ..molgraph import SmilesError, parse_smiles

    graphs, smiles = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            graphs.append(parse_smiles(text.split()[0]))
        except SmilesError as err:
            raise SmilesError(f"{path}:{lineno}: {err}", err.offset) from err
        smiles.append(text.split()[0])
    return smiles, graphs


def toy_dataset():
    from ..fewshot import load_dataset

    return load_dataset(DATASET_PATH)


def example_graph(mode: str = "tripartite"):
    """The fixed episode graph used for propagation-weight diagnostics."""
    from ..context import build_context_graph
    from ..fewshot import TaskSplit, sample_episode, substream
    from ..motif import build_dictionary

    ds = toy_dataset()
    split = TaskSplit.last_as_test(ds.n_properties, 1)
    episode = sample_episode(ds, split, "train", 5, 10, substream(0, "example"), target=0)
    dictionary = build_dictionary(ds.graphs, 32)
    return build_context_graph(episode, dictionary, mode)


def make_toy_dataset(path: str | Path = DATASET_PATH) -> None:
    """Regenerate the bundled dataset file (deterministic)."""
    from ..fewshot import generate_synthetic

    ds = generate_synthetic(80, rng=np.random.default_rng(7), label_dropout=0.1)
    ds.to_csv(path)
