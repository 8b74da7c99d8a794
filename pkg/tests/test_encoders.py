import csv

import numpy as np
import pytest

from conftest import random_context_graph, tiny_dataset
from mglc import autodiff as ad
from mglc.autodiff import ParameterStore, Tensor
from mglc.context import ContextGraph, Label, NodeKind, NodeRef, build_context_graph, compute_weights
from mglc.encoders import (ModelConfig, dump_embeddings, encode_subgraph_mol, encode_subgraph_prop,
                           encode_subgraphs, episode_loss, extract_subgraph, forward_episode,
                           global_encode, init_parameters, message_layer, score, structural_encode)
from mglc.fewshot import Episode
from mglc.molgraph import parse_smiles, subgraph
from mglc.motif import build_dictionary


def dense_layer(g, weights, h, e):
    """(W o A) H + per-node weighted edge-embedding sum + H, assembled entry by entry."""
    n, d = h.shape
    w = np.zeros((n, n))
    e_agg = np.zeros((n, d))
    send, recv, labels = g.messages()
    for j, i, lab, wij in zip(send, recv, labels, weights):
        w[i, j] = wij
        e_agg[i] += wij * e[lab]
    return w @ h + e_agg + h


def store_with(**arrays):
    s = ParameterStore()
    for name, value in arrays.items():
        s.add(name.replace("__", "."), np.asarray(value, dtype=float))
    return s


def two_node_graph():
    return ContextGraph((0,), 1, (0,), (), np.array([0]), np.array([1]), np.array([Label.ACTIVE]))


def test_two_node_scalar_layer():
    g = two_node_graph()
    s = store_with(psi__edge=np.zeros((4, 1)))
    w = compute_weights(g, "symmetric")
    out = global_encode(s, g, w, Tensor([[1.0], [3.0]]), layers=1, inter_layer=False)
    assert out[-1].value.ravel().tolist() == [4.0, 4.0]


def test_isolated_node_keeps_its_feature():
    g = ContextGraph((0, 1), 2, (0,), (), np.array([0]), np.array([2]), np.array([Label.ACTIVE]))
    s = store_with(psi__edge=np.ones((4, 2)))
    w = compute_weights(g, "symmetric", exclude_isolated=True)
    h0 = Tensor([[1.0, 2.0], [5.0, -1.0], [0.5, 0.5]])
    out = global_encode(s, g, w, h0, layers=1, inter_layer=False)
    assert out[-1].value[1].tolist() == [5.0, -1.0]


@pytest.mark.parametrize("scheme", ["symmetric", "uniform_row", "row_normalized"])
def test_sparse_layer_matches_dense(scheme):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        g = random_context_graph(rng, 20)
        w = compute_weights(g, scheme)
        h = rng.normal(size=(g.n_nodes, 5))
        e = rng.normal(size=(4, 5))
        got = message_layer(Tensor(h), Tensor(e), *g.messages(), w).value
        worst = max(worst, float(np.abs(got - dense_layer(g, w, h, e)).max()))
    assert worst <= 1e-6


def test_regular_graph_is_a_fixed_multiple():
    # complete bipartite 3 molecules x 3 properties: every node has degree 3
    src = np.repeat(np.arange(3), 3)
    dst = np.tile(np.arange(3, 6), 3)
    g = ContextGraph((0, 1, 2), 3, (0, 1, 2), (), src, dst, np.zeros(9, dtype=np.int64))
    s = store_with(psi__edge=np.zeros((4, 3)))
    v = np.array([0.2, -1.0, 3.0])
    for scheme in ("uniform_row", "symmetric"):
        out = global_encode(s, g, compute_weights(g, scheme), Tensor(np.tile(v, (6, 1))), layers=3,
                            inter_layer=False)
        assert np.allclose(out[-1].value, np.tile(8 * v, (6, 1)))


def star_graph():
    # molecule 0 with motifs (nodes 3, 4) and property (node 2); molecule 1 only on the property
    return ContextGraph((0, 1), 2, (0,), (0, 1),
                        np.array([0, 1, 0, 0]), np.array([2, 2, 3, 4]),
                        np.array([Label.ACTIVE, Label.INACTIVE, Label.CONTAINS, Label.CONTAINS]))


def test_extract_subgraph_examples():
    g = star_graph()
    sub = extract_subgraph(g, NodeRef(NodeKind.MOLECULE, 0))
    assert sub.nodes[0] == 0 and set(sub.nodes.tolist()) == {0, 2, 3, 4}
    assert sorted(sub.edges.tolist()) == [0, 2, 3]
    prop = extract_subgraph(g, NodeRef(NodeKind.PROPERTY, 0))
    assert set(prop.nodes.tolist()) == {2, 0, 1} and sorted(prop.edges.tolist()) == [0, 1]
    lonely = ContextGraph((0, 1), 2, (0,), (), np.array([0]), np.array([2]), np.array([0]))
    sub = extract_subgraph(lonely, 1)
    assert sub.nodes.tolist() == [1] and sub.edges.size == 0


def test_subgraph_edges_are_induced(rng):
    for _ in range(20):
        g = random_context_graph(rng, 40)
        for c in range(0, g.n_nodes, 5):
            sub = extract_subgraph(g, c)
            inside = set(sub.nodes.tolist())
            assert inside == {c} | set(g.neighbors(c).tolist())
            expected = [k for k in range(g.n_edges) if g.src[k] in inside and g.dst[k] in inside]
            assert sub.edges.tolist() == expected


def _phi_store(d, rng, prefix):
    return store_with(**{f"{prefix}__edge": rng.normal(size=(4, d)), f"{prefix}__w": rng.normal(size=(d, d)),
                         f"{prefix}__b": rng.normal(size=(1, d))})


@pytest.mark.parametrize("prefix, center, kind", [("phi_mol", 0, NodeKind.MOLECULE),
                                                  ("phi_prop", 2, NodeKind.PROPERTY)])
def test_subgraph_encoder_matches_hand_computation(prefix, center, kind):
    rng = np.random.default_rng(3)
    g = star_graph()
    w = compute_weights(g, "symmetric")
    h = rng.normal(size=(g.n_nodes, 4))
    s = _phi_store(4, rng, prefix)
    sub = extract_subgraph(g, center)
    encode = encode_subgraph_mol if kind == NodeKind.MOLECULE else encode_subgraph_prop
    got = encode(s, g, w, Tensor(h), sub).value[0]
    # reference: dense layer restricted to the induced subgraph, then linear + relu and a mean
    nodes = sub.nodes.tolist()
    e = s[f"{prefix}.edge"].value
    send, recv, labels = g.messages()
    rows = []
    for i in nodes:
        acc = h[i].copy()
        for j, r, lab, wij in zip(send, recv, labels, w):
            if r == i and j in nodes:
                acc += wij * (h[j] + e[lab])
        rows.append(np.maximum(acc @ s[f"{prefix}.w"].value + s[f"{prefix}.b"].value[0], 0))
    assert np.allclose(got, np.mean(rows, axis=0), atol=1e-6)


def test_single_node_subgraph_is_transformed_center():
    rng = np.random.default_rng(4)
    g = ContextGraph((0, 1), 2, (0,), (), np.array([0]), np.array([2]), np.array([0]))
    s = _phi_store(3, rng, "phi_mol")
    h = rng.normal(size=(3, 3))
    got = encode_subgraph_mol(s, g, compute_weights(g, "symmetric", exclude_isolated=True), Tensor(h),
                              extract_subgraph(g, 1)).value[0]
    expected = np.maximum(h[1] @ s["phi_mol.w"].value + s["phi_mol.b"].value[0], 0)
    assert np.allclose(got, expected)


def test_center_kind_checked():
    g = star_graph()
    s = _phi_store(2, np.random.default_rng(0), "phi_prop")
    with pytest.raises(ValueError):
        encode_subgraph_prop(s, g, compute_weights(g, "symmetric"), Tensor(np.ones((5, 2))),
                             extract_subgraph(g, 0))


@pytest.mark.parametrize("prefix, center", [("phi_mol", 0), ("phi_prop", 2)])
def test_subgraph_encoder_permutation_invariant(prefix, center):
    rng = np.random.default_rng(5)
    g = star_graph()
    w = compute_weights(g, "symmetric")
    h = Tensor(rng.normal(size=(g.n_nodes, 4)))
    s = _phi_store(4, rng, prefix)
    sub = extract_subgraph(g, center)
    base = encode_subgraphs(s, prefix, g, w, h, [sub]).value
    for _ in range(10):
        tail = rng.permutation(sub.nodes[1:])
        shuffled = type(sub)(sub.center, np.concatenate([[sub.center], tail]), rng.permutation(sub.edges))
        assert np.allclose(encode_subgraphs(s, prefix, g, w, h, [shuffled]).value, base, atol=1e-12)


def test_batched_subgraphs_equal_one_at_a_time(rng):
    g = random_context_graph(rng, 30)
    w = compute_weights(g, "symmetric")
    h = Tensor(rng.normal(size=(g.n_nodes, 4)))
    s = _phi_store(4, rng, "phi_mol")
    subs = [extract_subgraph(g, q) for q in range(g.n_mol)]
    batched = encode_subgraphs(s, "phi_mol", g, w, h, subs).value
    for k, sub in enumerate(subs):
        assert np.allclose(batched[k], encode_subgraphs(s, "phi_mol", g, w, h, [sub]).value[0])


def _struct_store(d=6, seed=0):
    rng = np.random.default_rng(seed)
    return init_parameters(ModelConfig(hidden=d, head_hidden=4), 2, 2, rng)


def test_structural_single_atom():
    s = _struct_store()
    x = np.zeros((1, 11))
    x[0, 1] = 1.0  # carbon
    h = np.maximum(x @ s["struct.w0"].value + s["struct.b0"].value, 0)
    h = np.maximum(h @ s["struct.w1"].value + s["struct.b1"].value, 0)
    assert np.allclose(structural_encode(s, [parse_smiles("C")]).value, h)


def test_structural_permutation_invariant():
    s = _struct_store()
    g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
    base = structural_encode(s, [g]).value
    rng = np.random.default_rng(1)
    for _ in range(10):
        perm = rng.permutation(g.n_atoms).tolist()
        assert np.allclose(structural_encode(s, [subgraph(g, perm)]).value, base, atol=1e-12)


def test_structural_distinguishes_aromaticity():
    s = _struct_store()
    a, b = structural_encode(s, [parse_smiles("c1ccccc1"), parse_smiles("C1CCCCC1")]).value
    assert not np.allclose(a, b)


def test_zero_head_gives_half():
    s = _struct_store(d=3)
    for name in ("head.w1", "head.b1", "head.w2", "head.b2"):
        s[name].value[...] = 0.0
    logits = score(s, Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))))
    assert logits.value.ravel().tolist() == [0.0, 0.0]
    assert ad.sigmoid(logits).value.ravel().tolist() == [0.5, 0.5]


def test_head_dimension_mismatch():
    s = _struct_store(d=3)
    with pytest.raises(ValueError):
        score(s, Tensor(np.ones((2, 4))), Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))))


def test_head_gradient_and_determinism():
    rng = np.random.default_rng(2)
    s = _struct_store(d=3)
    x = [Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(1, 3)))]
    y = rng.integers(0, 2, size=(6, 1))
    f = lambda: ad.bce_with_logits(score(s, *x), y)
    assert ad.grad_check(f, s, names=["head.w1", "head.b1", "head.w2", "head.b2"]) <= 1e-4
    same = score(s, Tensor(np.tile(x[0].value[:1], (2, 1))), Tensor(np.tile(x[1].value[:1], (2, 1))), x[2]).value
    assert same[0, 0] == same[1, 0]


SMALL_EPISODE = ["c1ccccc1CC1CC1", "C1CCNCC1c1ccccc1", "C1CC1CCC1CCNCC1", "c1ccccc1", "C1CCNCC1CC"]


def small_episode():
    ds = tiny_dataset(SMALL_EPISODE, [[1, 0], [0, 1], [1, 1], [0, float("nan")], [1, 0]])
    d = build_dictionary(ds.graphs, 3)
    return Episode(ds, 0, (0, 1), (2, 3, 4), (1,)), d


def test_small_episode_shape():
    ep, d = small_episode()
    g = build_context_graph(ep, d)
    assert (g.n_mol, g.n_prop, g.n_motif) == (5, 2, 3)


@pytest.mark.parametrize("readout", ["subgraph", "node"])
def test_end_to_end_gradients(readout):
    ep, d = small_episode()
    cfg = ModelConfig(hidden=4, head_hidden=4, readout=readout)
    s = init_parameters(cfg, 2, len(d), np.random.default_rng(0))
    assert ad.grad_check(lambda: episode_loss(s, cfg, ep, d), s) <= 1e-4


def test_every_parameter_group_gets_gradient():
    ep, d = small_episode()
    cfg = ModelConfig(hidden=4, head_hidden=4)
    s = init_parameters(cfg, 2, len(d), np.random.default_rng(0))
    ad.backward(lambda: episode_loss(s, cfg, ep, d), s)
    groups = {name.split(".")[0] for name in s if np.any(s.grad(name) != 0)}
    assert groups == {"struct", "node", "psi", "phi_mol", "phi_prop", "head"}


def test_node_readout_differs_from_subgraph():
    ep, d = small_episode()
    s = init_parameters(ModelConfig(hidden=8), 2, len(d), np.random.default_rng(1))
    with ad.no_grad():
        a = forward_episode(s, ModelConfig(hidden=8, readout="subgraph"), ep, d)
        b = forward_episode(s, ModelConfig(hidden=8, readout="node"), ep, d)
    assert not np.allclose(a.h_mol.value, b.h_mol.value)
    assert not np.allclose(a.logits.value, b.logits.value)


def test_embedding_dump(tmp_path):
    ep, d = small_episode()
    cfg = ModelConfig(hidden=4, head_hidden=4)
    s = init_parameters(cfg, 2, len(d), np.random.default_rng(0))
    with ad.no_grad():
        out = forward_episode(s, cfg, ep, d)
    path = tmp_path / "emb.csv"
    dump_embeddings(out, path)
    rows = list(csv.reader(path.open()))
    assert rows[0][:3] == ["node_kind", "node_id", "layer"] and len(rows[0]) == 7
    g = out.graph
    assert len(rows) == 1 + g.n_nodes * (cfg.layers + 1) + len(ep.query) + 1
    assert float(rows[1][3]) == out.tables[0].value[0, 0]
