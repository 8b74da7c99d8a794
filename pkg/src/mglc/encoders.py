"""Global context encoder, local-focus subgraph encoders, structural encoder and head."""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .context import Label, NodeKind, NodeRef, ContextGraph, build_context_graph, compute_weights
from .molgraph import ELEMENTS, MolecularGraph

N_ATOM_FEATURES = len(ELEMENTS) + 1
N_EDGE_LABELS = len(Label)
READOUTS = ("subgraph", "node")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    layers: int = 2
    head_hidden: int = 32
    inter_layer: bool = True
    mode: str = "tripartite"
    scheme: str = "symmetric"
    readout: str = "subgraph"

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.layers < 1 or self.head_hidden < 1:
            raise ValueError("dimensions and depth must be positive")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")


def init_parameters(config: ModelConfig, n_properties: int, n_motifs: int,
                    rng: np.random.Generator) -> ParameterStore:
    """Xavier-uniform matrices and tables, zero biases."""
    d, store = config.hidden, ParameterStore()

    def mat(name, fan_in, fan_out):
        store.add(name, ad.xavier_init(fan_in, fan_out, rng))

    def bias(name, n):
        store.add(name, np.zeros((1, n)))

    mat("struct.w0", N_ATOM_FEATURES, d)
    bias("struct.b0", d)
    mat("struct.w1", d, d)
    bias("struct.b1", d)
    mat("node.property", max(n_properties, 1), d)
    mat("node.motif", max(n_motifs, 1), d)
    mat("psi.edge", N_EDGE_LABELS, d)
    for k in range(config.layers - 1):
        mat(f"psi.w{k}", d, d)
        bias(f"psi.b{k}", d)
    for enc in ("phi_mol", "phi_prop"):
        mat(f"{enc}.edge", N_EDGE_LABELS, d)
        mat(f"{enc}.w", d, d)
        bias(f"{enc}.b", d)
    mat("head.w1", 3 * d, config.head_hidden)
    bias("head.b1", config.head_hidden)
    mat("head.w2", config.head_hidden, 1)
    bias("head.b2", 1)
    return store


# -- structural encoder ------------------------------------------------------

@functools.lru_cache(maxsize=65536)
def _atom_arrays(g: MolecularGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    feats = np.zeros((g.n_atoms, N_ATOM_FEATURES))
    for a in g.atoms:
        feats[a.index, ELEMENTS.index(a.element)] = 1.0
        if a.aromatic:
            feats[a.index, -1] = 1.0
    send = np.array([b.begin for b in g.bonds] + [b.end for b in g.bonds], dtype=np.int64)
    recv = np.array([b.end for b in g.bonds] + [b.begin for b in g.bonds], dtype=np.int64)
    return feats, send, recv


def structural_encode(store: ParameterStore, graphs: Sequence[MolecularGraph]) -> Tensor:
    """Two rounds of h <- relu(mean(h, neighbour h) W + b) over atoms, then a mean-pool per molecule."""
    feats, sends, recvs, owner = [], [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        f, s, r = _atom_arrays(g)
        feats.append(f)
        sends.append(s + offset)
        recvs.append(r + offset)
        owner.append(np.full(g.n_atoms, k, dtype=np.int64))
        offset += g.n_atoms
    send, recv = np.concatenate(sends), np.concatenate(recvs)
    h = Tensor(np.concatenate(feats))
    inv = Tensor(1.0 / (1.0 + np.bincount(recv, minlength=offset))[:, None])
    for r in range(2):
        msg = ad.scatter_add(ad.gather_rows(h, send), recv, offset)
        h = ad.relu(ad.add(ad.matmul(ad.mul(ad.add(h, msg), inv), store[f"struct.w{r}"]), store[f"struct.b{r}"]))
    return ad.mean_pool(h, np.concatenate(owner), len(graphs))


# -- message passing ---------------------------------------------------------

def message_layer(h: Tensor, edge_table: Tensor, send: np.ndarray, recv: np.ndarray,
                  labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """h_i' = sum_j w_ij (h_j + e_ij) + h_i over directed messages j -> i."""
    if weights.shape[0] != send.shape[0]:
        raise ValueError("one weight per message required")
    msg = ad.add(ad.gather_rows(h, send), ad.gather_rows(edge_table, labels))
    msg = ad.mul(msg, weights[:, None])
    return ad.add(ad.scatter_add(msg, recv, h.shape[0]), h)


def global_encode(store: ParameterStore, g: ContextGraph, weights: np.ndarray, h0: Tensor,
                  layers: int, inter_layer: bool = True) -> list[Tensor]:
    """All node tables H^0..H^layers; a linear map + relu sits between consecutive layers."""
    if h0.shape[0] != g.n_nodes:
        raise ValueError(f"{h0.shape[0]} initial rows for {g.n_nodes} nodes")
    send, recv, labels = g.messages()
    tables = [h0]
    h = h0
    for k in range(layers):
        h = message_layer(h, store["psi.edge"], send, recv, labels, weights)
        if inter_layer and k < layers - 1:
            h = ad.relu(ad.add(ad.matmul(h, store[f"psi.w{k}"]), store[f"psi.b{k}"]))
        tables.append(h)
    return tables


@dataclass(frozen=True)
class LocalSubgraph:
    center: int
    nodes: np.ndarray  # context-graph node ids, center first
    edges: np.ndarray  # context-graph edge ids with both endpoints in ``nodes``


def extract_subgraph(g: ContextGraph, center: NodeRef | int) -> LocalSubgraph:
    c = g.index(center) if isinstance(center, NodeRef) else int(center)
    nbrs = g.neighbors(c)
    nodes = np.concatenate([[c], nbrs[nbrs != c]]).astype(np.int64)
    inside = np.zeros(g.n_nodes, dtype=bool)
    inside[nodes] = True
    edges = np.flatnonzero(inside[g.src] & inside[g.dst])
    return LocalSubgraph(c, nodes, edges)


def encode_subgraphs(store: ParameterStore, prefix: str, g: ContextGraph, weights: np.ndarray,
                     h: Tensor, subs: Sequence[LocalSubgraph]) -> Tensor:
    """One dedicated message layer + relu on each subgraph, mean-pooled; one row per subgraph.

    Subgraphs are processed as a disjoint union; edge weights are inherited from ``g``.
    """
    rows, send, recv, labels, w, owner = [], [], [], [], [], []
    base = 0
    n_e = g.n_edges
    for k, sub in enumerate(subs):
        local = {int(n): base + i for i, n in enumerate(sub.nodes)}
        rows.append(sub.nodes)
        owner.append(np.full(len(sub.nodes), k, dtype=np.int64))
        for e in sub.edges:
            u, v = local[int(g.src[e])], local[int(g.dst[e])]
            # message e is src -> dst, message n_e + e is dst -> src
            send += [u, v]
            recv += [v, u]
            labels += [int(g.labels[e])] * 2
            w += [weights[e], weights[n_e + e]]
        base += len(sub.nodes)
    hl = ad.gather_rows(h, np.concatenate(rows))
    out = message_layer(hl, store[f"{prefix}.edge"], np.asarray(send, dtype=np.int64),
                        np.asarray(recv, dtype=np.int64), np.asarray(labels, dtype=np.int64),
                        np.asarray(w, dtype=np.float64))
    out = ad.relu(ad.add(ad.matmul(out, store[f"{prefix}.w"]), store[f"{prefix}.b"]))
    return ad.mean_pool(out, np.concatenate(owner), len(subs))


def _check_center(g: ContextGraph, sub: LocalSubgraph, kind: NodeKind) -> None:
    if g.ref(sub.center).kind != kind:
        raise ValueError(f"subgraph centre is a {g.ref(sub.center).kind.name}, expected {kind.name}")


def encode_subgraph_mol(store: ParameterStore, g: ContextGraph, weights: np.ndarray,
                        h: Tensor, sub: LocalSubgraph) -> Tensor:
    _check_center(g, sub, NodeKind.MOLECULE)
    return encode_subgraphs(store, "phi_mol", g, weights, h, [sub])


def encode_subgraph_prop(store: ParameterStore, g: ContextGraph, weights: np.ndarray,
                         h: Tensor, sub: LocalSubgraph) -> Tensor:
    _check_center(g, sub, NodeKind.PROPERTY)
    return encode_subgraphs(store, "phi_prop", g, weights, h, [sub])


def score(store: ParameterStore, struct: Tensor, h_mol: Tensor, h_prop: Tensor) -> Tensor:
    """Logits of an MLP over [structure; molecule context; property context], one row per query."""
    n = struct.shape[0]
    if h_prop.shape[0] == 1 and n != 1:
        h_prop = ad.gather_rows(h_prop, np.zeros(n, dtype=np.int64))
    x = ad.concat([struct, h_mol, h_prop], axis=1)
    if x.shape[1] != store["head.w1"].shape[0]:
        raise ValueError(f"head expects {store['head.w1'].shape[0]} inputs, got {x.shape[1]}")
    hidden = ad.relu(ad.add(ad.matmul(x, store["head.w1"]), store["head.b1"]))
    return ad.add(ad.matmul(hidden, store["head.w2"]), store["head.b2"])


# -- episode forward pass ----------------------------------------------------

@dataclass
class EpisodeOutput:
    graph: ContextGraph
    logits: Tensor
    tables: list[Tensor]
    h_mol: Tensor
    h_prop: Tensor
    struct: Tensor


def initial_features(store: ParameterStore, g: ContextGraph, struct: Tensor) -> Tensor:
    parts = [struct, ad.gather_rows(store["node.property"], np.asarray(g.properties, dtype=np.int64))]
    if g.n_motif:
        parts.append(ad.gather_rows(store["node.motif"], np.asarray(g.motifs, dtype=np.int64)))
    return ad.concat(parts, axis=0)


def forward_graph(store: ParameterStore, config: ModelConfig, g: ContextGraph,
                  graphs: Sequence[MolecularGraph]) -> EpisodeOutput:
    """Scores every query molecule of ``g`` against its target property (node ``g.target_node``)."""
    weights = compute_weights(g, config.scheme, exclude_isolated=True)
    struct = structural_encode(store, graphs)
    tables = global_encode(store, g, weights, initial_features(store, g, struct),
                           config.layers, config.inter_layer)
    h = tables[-1]
    queries = np.fromiter(g.query_nodes, dtype=np.int64)
    if config.readout == "subgraph":
        h_mol = encode_subgraphs(store, "phi_mol", g, weights, h,
                                 [extract_subgraph(g, int(q)) for q in queries])
        h_prop = encode_subgraphs(store, "phi_prop", g, weights, h,
                                  [extract_subgraph(g, g.target_node)])
    else:
        h_mol = ad.gather_rows(h, queries)
        h_prop = ad.gather_rows(h, np.array([g.target_node]))
    q_struct = ad.gather_rows(struct, queries)
    logits = score(store, q_struct, h_mol, h_prop)
    return EpisodeOutput(g, logits, tables, h_mol, h_prop, q_struct)


def forward_episode(store: ParameterStore, config: ModelConfig, episode, dictionary) -> EpisodeOutput:
    g = build_context_graph(episode, dictionary, config.mode)
    graphs = [episode.dataset.graphs[r] for r in g.molecules]
    return forward_graph(store, config, g, graphs)


def episode_loss(store: ParameterStore, config: ModelConfig, episode, dictionary) -> Tensor:
    out = forward_episode(store, config, episode, dictionary)
    return ad.bce_with_logits(out.logits, episode.query_labels()[:, None])


def dump_embeddings(out: EpisodeOutput, path: str | Path) -> None:
    """CSV rows of (node kind, id, layer, vector); readout rows use layer ``readout``."""
    g = out.graph
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        d = out.tables[0].shape[1]
        writer.writerow(["node_kind", "node_id", "layer"] + [f"v{i}" for i in range(d)])
        for layer, table in enumerate(out.tables):
            for node in range(g.n_nodes):
                ref = g.ref(node)
                writer.writerow([ref.kind.name.lower(), ref.id, layer]
                                + [repr(float(x)) for x in table.value[node]])
        for k, q in enumerate(g.query_nodes):
            writer.writerow(["context_mol", q, "readout"] + [repr(float(x)) for x in out.h_mol.value[k]])
        writer.writerow(["context_prop", 0, "readout"] + [repr(float(x)) for x in out.h_prop.value[0]])
