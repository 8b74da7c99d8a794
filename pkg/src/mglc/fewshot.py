"""Datasets, 2-way K-shot episodes, episodic training, evaluation and synthetic tasks."""

from __future__ import annotations

import csv
import io
import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
from networkx.algorithms import isomorphism

from . import autodiff as ad
from .autodiff import ParameterStore
from .context import MODES, SCHEMES
from .encoders import ModelConfig, forward_episode, init_parameters
from .molgraph import Atom, Bond, BondOrder, MolecularGraph, SmilesError, parse_smiles, to_smiles
from .motif import MotifDictionary, build_dictionary, extract_motifs


class DatasetError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose under one root seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


# -- datasets ----------------------------------------------------------------

@dataclass(eq=False)
class PropertyDataset:
    smiles: list[str]
    graphs: list[MolecularGraph]
    properties: list[str]
    labels: np.ndarray  # float, nan marks a missing label
    skipped: list[tuple[int, str]] = field(default_factory=list)
    _codes: dict[int, frozenset] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.labels.shape != (len(self.graphs), len(self.properties)):
            raise DatasetError(f"label matrix {self.labels.shape} does not match "
                               f"{len(self.graphs)} molecules x {len(self.properties)} properties")
        if len(set(self.properties)) != len(self.properties):
            raise DatasetError("duplicate property names")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_properties(self) -> int:
        return len(self.properties)

    def motif_codes(self, row: int) -> frozenset:
        if row not in self._codes:
            self._codes[row] = frozenset(m.code for m in extract_motifs(self.graphs[row]))
        return self._codes[row]

    def motif_ids(self, row: int, dictionary: MotifDictionary) -> list[int]:
        return sorted(i for c in self.motif_codes(row) if (i := dictionary.index(c)) is not None)

    def label_fractions(self) -> dict[str, float]:
        total = self.labels.size
        return {
            "positive": float(np.sum(self.labels == 1) / total),
            "negative": float(np.sum(self.labels == 0) / total),
            "unknown": float(np.sum(np.isnan(self.labels)) / total),
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["smiles"] + self.properties)
            for smi, row in zip(self.smiles, self.labels):
                writer.writerow([smi] + ["" if math.isnan(y) else str(int(y)) for y in row])


def load_dataset(path: str | Path, permissive: bool = False) -> PropertyDataset:
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0].strip().lower() != "smiles":
        raise DatasetError(f"{path}: header must start with 'smiles'")
    props = [h.strip() for h in header[1:]]
    if len(set(props)) != len(props):
        raise DatasetError(f"{path}: duplicate property names")
    smiles, graphs, rows, skipped = [], [], [], []
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        try:
            if len(cells) != len(props) + 1:
                raise DatasetError(f"expected {len(props) + 1} cells, found {len(cells)}")
            labels = []
            for c in cells[1:]:
                c = c.strip()
                if c not in ("", "0", "1"):
                    raise DatasetError(f"label {c!r} is not 0, 1 or empty")
                labels.append(float(c) if c else math.nan)
            g = parse_smiles(cells[0].strip())
        except (DatasetError, SmilesError) as err:
            if not permissive:
                raise DatasetError(f"{path}:{lineno}: {err}") from err
            skipped.append((lineno, str(err)))
            continue
        smiles.append(cells[0].strip())
        graphs.append(g)
        rows.append(labels)
    if not graphs:
        raise DatasetError(f"{path}: no molecules")
    return PropertyDataset(smiles, graphs, props, np.array(rows, dtype=np.float64).reshape(len(graphs), len(props)),
                           skipped)


@dataclass(frozen=True)
class TaskSplit:
    train: tuple[int, ...]
    test: tuple[int, ...]

    def validate(self, n_properties: int) -> None:
        if set(self.train) & set(self.test):
            raise ValueError("train and test properties overlap")
        if set(self.train) | set(self.test) != set(range(n_properties)):
            raise ValueError("split does not cover every property exactly once")

    @classmethod
    def last_as_test(cls, n_properties: int, n_test: int) -> "TaskSplit":
        return cls(tuple(range(n_properties - n_test)), tuple(range(n_properties - n_test, n_properties)))


@dataclass(frozen=True)
class Episode:
    dataset: PropertyDataset
    target: int
    support: tuple[int, ...]
    query: tuple[int, ...]
    auxiliary: tuple[int, ...]

    def query_labels(self) -> np.ndarray:
        return self.dataset.labels[list(self.query), self.target]

    def support_labels(self) -> np.ndarray:
        return self.dataset.labels[list(self.support), self.target]


def sample_episode(ds: PropertyDataset, split: TaskSplit, phase: str, k: int, query_size: int,
                   rng: np.random.Generator, target: int | None = None) -> Episode:
    """K positives + K negatives as support, a class-balanced (when possible) labelled query set.

    Auxiliary properties are the training properties other than the target.
    """
    if phase not in ("train", "test"):
        raise ValueError(f"unknown phase {phase!r}")
    pool = split.train if phase == "train" else split.test
    if target is None:
        target = int(pool[rng.integers(len(pool))])
    elif target not in pool:
        raise ValueError(f"property {target} is not a {phase} property")
    col = ds.labels[:, target]
    pos, neg = np.flatnonzero(col == 1), np.flatnonzero(col == 0)
    if len(pos) < k or len(neg) < k:
        raise DatasetError(f"property {ds.properties[target]!r} has {len(pos)} positives and "
                           f"{len(neg)} negatives; K={k} needs {k} of each")
    sup_pos = rng.choice(pos, size=k, replace=False)
    sup_neg = rng.choice(neg, size=k, replace=False)
    rest_pos = rng.permutation(np.setdiff1d(pos, sup_pos))
    rest_neg = rng.permutation(np.setdiff1d(neg, sup_neg))
    n_pos = min(len(rest_pos), query_size // 2)
    n_neg = min(len(rest_neg), query_size - n_pos)
    n_pos = min(len(rest_pos), query_size - n_neg)
    query = np.concatenate([rest_pos[:n_pos], rest_neg[:n_neg]])
    if len(query) == 0:
        raise DatasetError(f"no labelled molecules left for the query set of {ds.properties[target]!r}")
    query = rng.permutation(query)
    support = rng.permutation(np.concatenate([sup_pos, sup_neg]))
    aux = tuple(p for p in split.train if p != target)
    return Episode(ds, target, tuple(int(x) for x in support), tuple(int(x) for x in query), aux)


# -- metric ------------------------------------------------------------------

def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC from average ranks; ties earn half credit."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


# -- model, training, evaluation ----------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 600
    k_shot: int = 10
    query_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    top_k: int = 64
    hidden: int = 32
    layers: int = 2
    head_hidden: int = 32
    inter_layer: bool = True
    mode: str = "tripartite"
    scheme: str = "symmetric"
    readout: str = "subgraph"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.episodes < 0 or self.seed < 0:
            raise ValueError("episodes and seed must be non-negative")
        for name in ("k_shot", "query_size", "top_k", "hidden", "layers", "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.lr > 0 and self.eps > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("optimizer settings out of range")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.model  # noqa: B018 -- ModelConfig checks readout and dimensions

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.hidden, self.layers, self.head_hidden, self.inter_layer,
                           self.mode, self.scheme, self.readout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Model:
    config: TrainConfig
    store: ParameterStore
    dictionary: MotifDictionary | None

    def save(self, path: str | Path) -> None:
        extra = {"config": self.config.to_dict()}
        if self.dictionary is not None:
            extra["dictionary"] = [[c.hex(), f, ex] for (c, f), ex in
                                   zip(self.dictionary.entries, self.dictionary.examples)]
            extra["dictionary_capacity"] = self.dictionary.capacity
        self.store.save(path, extra)

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        extra = data.get("extra", {})
        config = TrainConfig.from_dict(extra["config"])
        dictionary = None
        if "dictionary" in extra:
            entries = tuple((bytes.fromhex(h), int(f)) for h, f, _ in extra["dictionary"])
            dictionary = MotifDictionary(entries, int(extra["dictionary_capacity"]),
                                         tuple(ex for _, _, ex in extra["dictionary"]))
        return cls(config, ParameterStore.from_dict(data), dictionary)


def init_model(ds: PropertyDataset, config: TrainConfig,
               dictionary: MotifDictionary | None = None) -> Model:
    if dictionary is None:
        dictionary = build_dictionary(ds.graphs, config.top_k)
    store = init_parameters(config.model, ds.n_properties, len(dictionary), substream(config.seed, "init"))
    return Model(config, store, dictionary)


@dataclass(frozen=True)
class LogEntry:
    episode: int
    loss: float
    ms: float


def train(ds: PropertyDataset, split: TaskSplit, config: TrainConfig,
          dictionary: MotifDictionary | None = None, model: Model | None = None) -> tuple[Model, list[LogEntry]]:
    """Plain episodic training: one Adam step on the query BCE of each sampled episode."""
    split.validate(ds.n_properties)
    if model is None:
        model = init_model(ds, config, dictionary)
    rng = substream(config.seed, "sampling")
    log = []
    for e in range(config.episodes):
        t0 = time.perf_counter()
        episode = sample_episode(ds, split, "train", config.k_shot, config.query_size, rng)
        loss = ad.backward(lambda: _loss(model, episode), model.store)
        ad.adam_step(model.store, config.lr, config.beta1, config.beta2, config.eps)
        log.append(LogEntry(e + 1, loss, (time.perf_counter() - t0) * 1000))
    return model, log


def _loss(model: Model, episode: Episode, store: ParameterStore | None = None) -> ad.Tensor:
    out = forward_episode(store or model.store, model.config.model, episode, model.dictionary)
    return ad.bce_with_logits(out.logits, episode.query_labels()[:, None])


def write_log(log: Sequence[LogEntry], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "loss", "wall_clock_ms"])
        for entry in log:
            writer.writerow([entry.episode, f"{entry.loss:.9f}", f"{entry.ms:.3f}"])


def query_scores(model: Model, episode: Episode, store: ParameterStore | None = None) -> np.ndarray:
    with ad.no_grad():
        out = forward_episode(store or model.store, model.config.model, episode, model.dictionary)
    return out.logits.value[:, 0]


def fine_tune(model: Model, episode: Episode, steps: int, rng: np.random.Generator) -> ParameterStore:
    """Adapt a copy of the parameters on the support set.

    Each step splits the support into a labelled half (wired to the target) and a
    held-out half scored against it, so no scored molecule sees its own label.
    """
    store = model.store.clone()
    store.m = {n: np.zeros_like(v) for n, v in store.m.items()}
    store.v = {n: np.zeros_like(v) for n, v in store.v.items()}
    store.step = 0
    labels = episode.support_labels()
    pos = [m for m, y in zip(episode.support, labels) if y == 1]
    neg = [m for m, y in zip(episode.support, labels) if y == 0]
    cfg = model.config
    for _ in range(steps):
        p, n = rng.permutation(pos), rng.permutation(neg)
        hp, hn = max(len(p) // 2, 1), max(len(n) // 2, 1)
        inner = Episode(episode.dataset, episode.target,
                        tuple(int(x) for x in np.concatenate([p[:hp], n[:hn]])),
                        tuple(int(x) for x in np.concatenate([p[hp:], n[hn:]])),
                        episode.auxiliary)
        if not inner.query:
            break
        ad.backward(lambda: _loss(model, inner, store), store)
        ad.adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return store


@dataclass
class EvalReport:
    seeds: list[int]
    per_seed_mean: list[float]
    per_episode: list[list[float]]
    skipped: list[dict]
    mean: float
    std: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(ds: PropertyDataset, split: TaskSplit, model: Model, episodes: int = 10,
             fine_tune_steps: int = 0, seeds: Sequence[int] = (0,), query_size: int | None = None,
             workers: int = 1) -> EvalReport:
    """Query-set ROC-AUC on test-property episodes, averaged per seed, then across seeds."""
    split.validate(ds.n_properties)
    cfg = model.config
    qsize = query_size or cfg.query_size
    per_seed, per_episode, skipped = [], [], []
    for seed in seeds:
        rng = substream(seed, "eval")
        eps = [sample_episode(ds, split, "test", cfg.k_shot, qsize, rng) for _ in range(episodes)]
        tune_rngs = [substream(seed * 100003 + i, "finetune") for i in range(episodes)]

        def run(i: int) -> float | None:
            ep = eps[i]
            labels = ep.query_labels()
            if len(set(labels.tolist())) < 2:
                return None
            store = fine_tune(model, ep, fine_tune_steps, tune_rngs[i]) if fine_tune_steps else None
            return roc_auc(query_scores(model, ep, store), labels)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(run, range(episodes)))
        else:
            results = [run(i) for i in range(episodes)]
        aucs = []
        for i, r in enumerate(results):
            if r is None:
                skipped.append({"seed": seed, "episode": i, "reason": "single-class query set"})
            else:
                aucs.append(r)
        per_episode.append(aucs)
        per_seed.append(float(np.mean(aucs)) if aucs else math.nan)
    valid = [x for x in per_seed if not math.isnan(x)]
    return EvalReport(list(seeds), per_seed, per_episode, skipped,
                      float(np.mean(valid)) if valid else math.nan,
                      float(np.std(valid)) if valid else math.nan)


# -- synthetic tasks -----------------------------------------------------------

RING_VOCAB = ("C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "c1ccccc1", "c1ccncc1",
              "c1ccoc1", "C1CCOC1", "C1CCNCC1", "c1ccsc1")
LINKERS = ("", "C", "CC", "CO", "N")
TAILS = ("CC", "CCC", "CO", "CN", "CCl")

DEFAULT_RULES = {
    "has_cyclopropane": "C1CC1",
    "has_benzene": "c1ccccc1",
    "has_oxolane": "C1CCOC1",
    "has_piperidine": "C1CCNCC1",
}


def _nx(g: MolecularGraph) -> nx.Graph:
    h = nx.Graph()
    for a in g.atoms:
        h.add_node(a.index, label=(a.element, a.aromatic))
    for b in g.bonds:
        h.add_edge(b.begin, b.end, order=int(b.order))
    return h


def contains(mol: MolecularGraph, pattern: MolecularGraph) -> bool:
    """True when ``pattern`` maps into ``mol`` preserving atom labels and bond orders."""
    if pattern.n_atoms > mol.n_atoms:
        return False
    codes = {m.code for m in extract_motifs(mol)}
    pat_motifs = extract_motifs(pattern)
    if len(pat_motifs) == 1 and pat_motifs[0].code in codes:
        return True
    matcher = isomorphism.GraphMatcher(
        _nx(mol), _nx(pattern),
        node_match=lambda a, b: a["label"] == b["label"],
        edge_match=lambda a, b: a["order"] == b["order"],
    )
    return matcher.subgraph_is_monomorphic()


class _Builder:
    def __init__(self) -> None:
        self.atoms: list[tuple[str, bool]] = []
        self.bonds: list[tuple[int, int, BondOrder]] = []
        self.degree: list[int] = []

    def add(self, frag: MolecularGraph) -> int:
        base = len(self.atoms)
        for a in frag.atoms:
            self.atoms.append((a.element, a.aromatic))
            self.degree.append(0)
        for b in frag.bonds:
            self.link(base + b.begin, base + b.end, b.order)
        return base

    def link(self, u: int, v: int, order: BondOrder = BondOrder.SINGLE) -> None:
        self.bonds.append((u, v, order))
        self.degree[u] += 1
        self.degree[v] += 1

    def graph(self) -> MolecularGraph:
        atoms = tuple(Atom(e, ar, i) for i, (e, ar) in enumerate(self.atoms))
        return MolecularGraph(atoms, tuple(Bond(u, v, o) for u, v, o in self.bonds))


def _random_molecule(rng: np.random.Generator, rings: list[MolecularGraph],
                     linkers: list[MolecularGraph | None], tails: list[MolecularGraph],
                     max_rings: int) -> MolecularGraph:
    b = _Builder()
    sites: list[int] = []  # carbon ring atoms that can take one more substituent

    def ring_sites(base: int, frag: MolecularGraph) -> list[int]:
        return [base + a.index for a in frag.atoms if a.element == "C"]

    first = rings[rng.integers(len(rings))]
    base = b.add(first)
    sites += ring_sites(base, first)
    for _ in range(int(rng.integers(1, max_rings + 1)) - 1):
        frag = rings[rng.integers(len(rings))]
        linker = linkers[rng.integers(len(linkers))]
        anchor = sites.pop(int(rng.integers(len(sites))))
        if linker is not None:
            lb = b.add(linker)
            b.link(anchor, lb)
            anchor = lb + linker.n_atoms - 1
        base = b.add(frag)
        new_sites = ring_sites(base, frag)
        entry = new_sites.pop(int(rng.integers(len(new_sites))))
        b.link(anchor, entry)
        sites += new_sites
        sites = [s for s in sites if b.degree[s] < 3]
    if rng.random() < 0.5 and sites:
        tail = tails[rng.integers(len(tails))]
        anchor = sites[int(rng.integers(len(sites)))]
        tb = b.add(tail)
        b.link(anchor, tb)
    return b.graph()


def generate_synthetic(n_molecules: int, motif_rules: dict[str, str] | None = None,
                       rng: np.random.Generator | int = 0, label_dropout: float = 0.0,
                       max_rings: int = 3, n_properties: int | None = None) -> PropertyDataset:
    """Random ring assemblies with labels set by motif rules; property p is 1 iff the molecule contains its motif.

    ``label_dropout`` blanks that fraction of labels at random.
    """
    rules = dict(DEFAULT_RULES if motif_rules is None else motif_rules)
    if n_properties is not None and n_properties != len(rules):
        raise ValueError(f"{n_properties} properties requested but {len(rules)} rules given")
    if not 0.0 <= label_dropout < 1.0:
        raise ValueError("label_dropout must be in [0, 1)")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    rings = [parse_smiles(s) for s in RING_VOCAB]
    linkers = [parse_smiles(s) if s else None for s in LINKERS]
    tails = [parse_smiles(s) for s in TAILS]
    patterns = {}
    for name, smi in rules.items():
        pattern = parse_smiles(smi)
        if not any(contains(frag, pattern) for frag in rings + tails + [x for x in linkers if x]):
            raise ValueError(f"rule {name!r} references motif {smi!r} that the generator never produces")
        patterns[name] = pattern
    graphs = [_random_molecule(rng, rings, linkers, tails, max_rings) for _ in range(n_molecules)]
    labels = np.array([[1.0 if contains(g, patterns[name]) else 0.0 for name in rules] for g in graphs])
    labels = labels.reshape(n_molecules, len(rules))
    if label_dropout > 0:
        labels[rng.random(labels.shape) < label_dropout] = math.nan
    return PropertyDataset([to_smiles(g) for g in graphs], graphs, list(rules), labels)
