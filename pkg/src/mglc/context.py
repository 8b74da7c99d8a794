"""Episode context graphs over motif, molecule and property nodes, and their edge weights."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .fewshot import Episode
    from .motif import MotifDictionary

SCHEMES = ("uniform_row", "symmetric", "row_normalized")
MODES = ("bipartite", "tripartite")


class NodeKind(enum.IntEnum):
    MOTIF = 0
    MOLECULE = 1
    PROPERTY = 2


class Relation(enum.IntEnum):
    MOL_PROP = 0
    MOTIF_MOL = 1


class Label(enum.IntEnum):
    """Edge attribute; the value doubles as the row of the edge-embedding table."""

    ACTIVE = 0
    INACTIVE = 1
    UNKNOWN = 2
    CONTAINS = 3

    @property
    def relation(self) -> Relation:
        return Relation.MOTIF_MOL if self is Label.CONTAINS else Relation.MOL_PROP

    @classmethod
    def from_value(cls, y: float) -> "Label":
        if y is None or (isinstance(y, float) and math.isnan(y)):
            return cls.UNKNOWN
        return cls.ACTIVE if y == 1 else cls.INACTIVE


class NodeRef(NamedTuple):
    kind: NodeKind
    id: int


class LeakageError(RuntimeError):
    """A query molecule ended up wired to the episode's target property."""


@dataclass(frozen=True, eq=False)
class ContextGraph:
    """Undirected heterogeneous graph; node layout is molecules, then properties, then motifs.

    ``molecules`` holds dataset row indices (support first), ``properties`` dataset
    column indices (target first), ``motifs`` dictionary positions.
    """

    molecules: tuple[int, ...]
    n_support: int
    properties: tuple[int, ...]
    motifs: tuple[int, ...]
    src: np.ndarray
    dst: np.ndarray
    labels: np.ndarray
    degree: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        deg = np.bincount(np.concatenate([self.src, self.dst]), minlength=self.n_nodes)
        object.__setattr__(self, "degree", deg.astype(np.int64))

    @property
    def n_mol(self) -> int:
        return len(self.molecules)

    @property
    def n_prop(self) -> int:
        return len(self.properties)

    @property
    def n_motif(self) -> int:
        return len(self.motifs)

    @property
    def n_nodes(self) -> int:
        return self.n_mol + self.n_prop + self.n_motif

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def query_nodes(self) -> range:
        return range(self.n_support, self.n_mol)

    @property
    def target_node(self) -> int:
        return self.n_mol

    def offset(self, kind: NodeKind) -> int:
        return {NodeKind.MOLECULE: 0, NodeKind.PROPERTY: self.n_mol,
                NodeKind.MOTIF: self.n_mol + self.n_prop}[kind]

    def count(self, kind: NodeKind) -> int:
        return {NodeKind.MOLECULE: self.n_mol, NodeKind.PROPERTY: self.n_prop,
                NodeKind.MOTIF: self.n_motif}[kind]

    def index(self, ref: NodeRef) -> int:
        if not 0 <= ref.id < self.count(ref.kind):
            raise IndexError(f"{ref} out of range")
        return self.offset(ref.kind) + ref.id

    def ref(self, node: int) -> NodeRef:
        for kind in (NodeKind.MOLECULE, NodeKind.PROPERTY, NodeKind.MOTIF):
            off = self.offset(kind)
            if off <= node < off + self.count(kind):
                return NodeRef(kind, node - off)
        raise IndexError(node)

    def kinds(self) -> np.ndarray:
        return np.repeat(
            [NodeKind.MOLECULE, NodeKind.PROPERTY, NodeKind.MOTIF],
            [self.n_mol, self.n_prop, self.n_motif],
        )

    def messages(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed (sender, receiver, label) arrays: each undirected edge in both directions."""
        return (np.concatenate([self.src, self.dst]),
                np.concatenate([self.dst, self.src]),
                np.concatenate([self.labels, self.labels]))

    def neighbors(self, node: int) -> np.ndarray:
        return np.sort(np.concatenate([self.dst[self.src == node], self.src[self.dst == node]]))

    def edge_list(self) -> list[tuple[NodeRef, NodeRef, Label]]:
        return [(self.ref(int(u)), self.ref(int(v)), Label(int(l)))
                for u, v, l in zip(self.src, self.dst, self.labels)]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        a[self.src, self.dst] = 1.0
        a[self.dst, self.src] = 1.0
        return a

    def without_motifs(self) -> "ContextGraph":
        keep = self.labels != Label.CONTAINS
        return ContextGraph(self.molecules, self.n_support, self.properties, (),
                            self.src[keep], self.dst[keep], self.labels[keep])


def build_context_graph(episode: "Episode", dictionary: "MotifDictionary | None",
                        mode: str = "tripartite") -> ContextGraph:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ds = episode.dataset
    molecules = tuple(episode.support) + tuple(episode.query)
    properties = (episode.target,) + tuple(episode.auxiliary)
    n_mol, n_sup = len(molecules), len(episode.support)
    src, dst, lab = [], [], []
    for node, row in enumerate(molecules):
        # query molecules skip property slot 0, the target
        first = 0 if node < n_sup else 1
        for pslot in range(first, len(properties)):
            src.append(node)
            dst.append(n_mol + pslot)
            lab.append(Label.from_value(ds.labels[row, properties[pslot]]))

    motifs: tuple[int, ...] = ()
    if mode == "tripartite":
        if dictionary is None:
            raise ValueError("tripartite mode needs a motif dictionary")
        per_mol = [ds.motif_ids(row, dictionary) for row in molecules]
        motifs = tuple(sorted(set().union(*per_mol))) if per_mol else ()
        slot = {z: k for k, z in enumerate(motifs)}
        base = n_mol + len(properties)
        for node, ids in enumerate(per_mol):
            for z in ids:
                src.append(node)
                dst.append(base + slot[z])
                lab.append(Label.CONTAINS)

    g = ContextGraph(molecules, n_sup, properties, motifs,
                     np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
                     np.asarray(lab, dtype=np.int64))
    check_no_leakage(g)
    return g


def check_no_leakage(g: ContextGraph) -> None:
    target = g.target_node
    for u, v in zip(g.src, g.dst):
        a, b = min(u, v), max(u, v)
        if b == target and g.n_support <= a < g.n_mol:
            raise LeakageError(f"query molecule node {a} is connected to the target property")


def compute_weights(g: ContextGraph, scheme: str = "symmetric",
                    exclude_isolated: bool = False) -> np.ndarray:
    """Weight of every directed message in ``g.messages()`` order (sender j -> receiver i).

    uniform_row: 1/d_i. symmetric: 1/sqrt(d_i d_j). row_normalized: the symmetric
    weight divided by the receiver's total symmetric weight, so each row sums to 1.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    if not exclude_isolated and np.any(g.degree == 0):
        node = int(np.flatnonzero(g.degree == 0)[0])
        raise ValueError(f"zero-degree node {g.ref(node)} cannot be weighted")
    send, recv, _ = g.messages()
    d = g.degree.astype(np.float64)
    if scheme == "uniform_row":
        return 1.0 / d[recv]
    w = 1.0 / np.sqrt(d[send] * d[recv])
    if scheme == "symmetric":
        return w
    row_total = np.bincount(recv, weights=w, minlength=g.n_nodes)
    return w / row_total[recv]


def weight_matrix(g: ContextGraph, scheme: str) -> np.ndarray:
    """Dense operator with entry [i, j] = weight of message j -> i."""
    w = compute_weights(g, scheme)
    send, recv, _ = g.messages()
    out = np.zeros((g.n_nodes, g.n_nodes))
    out[recv, send] = w
    return out


def uniform_row_operator(g: ContextGraph) -> np.ndarray:
    """D^-1 A."""
    a = g.adjacency()
    d = a.sum(axis=1)
    if np.any(d == 0):
        raise ValueError("singular degree matrix: isolated node")
    return a / d[:, None]


def row_normalized_operator(g: ContextGraph, max_nodes: int = 2000) -> np.ndarray:
    """(D')^-1 D^-1/2 A D^-1/2, with D'_ii the row sums of the symmetric operator."""
    if g.n_nodes > max_nodes:
        raise ValueError(f"dense operator limited to {max_nodes} nodes")
    a = g.adjacency()
    d = a.sum(axis=1)
    if np.any(d == 0):
        raise ValueError("singular D': isolated node")
    inv_sqrt = 1.0 / np.sqrt(d)
    a_gcn = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    d_prime = a_gcn.sum(axis=1)
    return a_gcn / d_prime[:, None]


@dataclass(frozen=True)
class PropagationStats:
    scheme: str
    kinds: np.ndarray
    degree: np.ndarray
    out_weight: np.ndarray
    # kind -> (mean, std, coefficient of variation)
    summary: dict[NodeKind, tuple[float, float, float]]

    def cv(self, kind: NodeKind) -> float:
        return self.summary[kind][2]


def propagation_stats(g: ContextGraph, scheme: str) -> PropagationStats:
    """Total weight each node sends to its neighbours, with per-kind dispersion."""
    w = compute_weights(g, scheme, exclude_isolated=True)
    send, _, _ = g.messages()
    out = np.bincount(send, weights=w, minlength=g.n_nodes)
    kinds = g.kinds()
    summary = {}
    for kind in NodeKind:
        vals = out[kinds == kind]
        if vals.size == 0:
            continue
        mean, std = float(vals.mean()), float(vals.std())
        summary[kind] = (mean, std, std / mean if mean > 0 else 0.0)
    return PropagationStats(scheme, kinds, g.degree.copy(), out, summary)


def write_stats_csv(stats: PropagationStats, path: str | Path, graph: ContextGraph) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_kind", "node_id", "degree", "out_propagation_weight"])
        for node in range(graph.n_nodes):
            ref = graph.ref(node)
            writer.writerow([ref.kind.name.lower(), ref.id, int(stats.degree[node]),
                             f"{stats.out_weight[node]:.9f}"])
