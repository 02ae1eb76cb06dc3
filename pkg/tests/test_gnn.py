import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import tiny_graph, with_random_scorer
from gtea import numerics as nm
from gtea.encoders import EventTable, attention_score, event_inputs, lstm_encode, transformer_encode
from gtea.errors import ConfigError, ShapeError
from gtea.gnn import (
    Mlp,
    ModelConfig,
    aggregate_neighborhood,
    build_model,
    forward,
    forward_details,
    sparse_attention,
    update_node,
)
from gtea.graph import TemporalGraph, full_minibatch, make_minibatch
from gtea.numerics import Tensor


def small_config(**kw):
    base = dict(node_dim=3, edge_dim=2, num_classes=2, t2v=True, t2v_dim=2, edge_width=4,
                attn_width=4, width=5, num_layers=2)
    base.update(kw)
    return ModelConfig(**base)


def linear_identity_mlp(d):
    eye = Tensor(np.eye(d))
    return Mlp(eye, Tensor(np.zeros(d)), eye, Tensor(np.zeros(d)), activation="linear")


def test_sparse_attention_on_simplex_with_zeros():
    a = sparse_attention(Tensor(np.array([2.0, 0.1, 1.9, -1.0]))).data
    assert_allclose(a.sum(), 1.0)
    assert_array_equal(a[[1, 3]], [0.0, 0.0])
    with pytest.raises(ShapeError):
        sparse_attention(Tensor(np.zeros(0)))


def test_aggregate_with_identity_mlp_is_weighted_concat():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 2))
    e = rng.normal(size=(3, 3))
    alpha = np.array([0.5, 0.0, 0.5])
    out = aggregate_neighborhood(z, e, alpha, linear_identity_mlp(5)).data
    assert_allclose(out, alpha @ np.hstack([z, e]), atol=1e-15)


def test_aggregate_empty_neighborhood_is_zero():
    mlp = Mlp.init(4, 3, 3, np.random.default_rng(0), np.float64)
    out = aggregate_neighborhood(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), mlp)
    assert_array_equal(out.data, np.zeros(3))


def test_update_node_concatenates_self_first():
    out = update_node(np.array([1.0, 2.0]), np.array([3.0]), linear_identity_mlp(3)).data
    assert_array_equal(out, [1.0, 2.0, 3.0])


def test_layer_op_gradients():
    rng = np.random.default_rng(1)
    mlp1 = Mlp.init(5, 4, 3, rng, np.float64)
    mlp2 = Mlp.init(5, 4, 2, rng, np.float64)
    z = rng.normal(size=(4, 2))
    e = rng.normal(size=(4, 3))
    s = rng.normal(size=4)
    w = rng.normal(size=3)
    w4 = rng.normal(size=4)
    assert nm.gradient_check(lambda t: nm.sum(sparse_attention(t) * w4), s) < 1e-6
    alpha = sparse_attention(Tensor(s)).data
    assert nm.gradient_check(lambda t: nm.sum(aggregate_neighborhood(t, e, alpha, mlp1) * w), z) < 1e-6
    assert nm.gradient_check(lambda t: nm.sum(aggregate_neighborhood(z, t, alpha, mlp1) * w), e) < 1e-6
    errs = nm.gradient_check_params(
        lambda p: nm.sum(update_node(z[0], p["x"], nm.rebind_params(mlp2, p)) * np.array([1.0, -2.0])),
        {**nm.flatten_params(mlp2), "x": Tensor(rng.normal(size=3))})
    assert max(errs.values()) < 1e-6


def oracle_logits(graph, model):
    """Layer-by-layer per-node recomputation from the single-item operations."""
    cfg = model.config
    table = EventTable.from_graph(graph, cfg.max_events)
    emb, score = {}, {}
    for i, edge in enumerate(graph.edges):
        feats, times, lengths = table.batch(np.array([i]))
        X = event_inputs(feats, times, model.t2v, np.float64)[0, : lengths[0]]
        enc = lstm_encode if cfg.encoder == "lstm" else transformer_encode
        emb[edge.pair] = enc(X, model.mt).data
        score[edge.pair] = attention_score(X, model.ma).item()
    z = graph.node_features.copy()
    for layer in model.layers:
        new = []
        for u in range(graph.num_nodes):
            nbrs = graph.neighbors[u]
            pairs = [tuple(sorted((u, int(v)))) for v in nbrs]
            if len(nbrs):
                alpha = sparse_attention(Tensor(np.array([score[p] for p in pairs]))).data
                zn = aggregate_neighborhood(z[nbrs], np.array([emb[p] for p in pairs]), alpha, layer.mlp1).data
            else:
                zn = np.zeros(layer.mlp1.out_dim)
            new.append(update_node(z[u], zn, layer.mlp2).data)
        z = np.array(new)
    return z


@pytest.mark.parametrize("encoder", ["lstm", "transformer"])
def test_forward_matches_compositional_oracle(graph4, encoder):
    cfg = small_config(encoder=encoder, transformer_heads=2)
    model = with_random_scorer(build_model(cfg, np.random.default_rng(2), np.float64))
    logits = forward(full_minibatch(graph4, np.arange(4), 2), graph4, model).data
    assert_allclose(logits, oracle_logits(graph4, model), atol=1e-12)


def test_seed_order_is_preserved(graph4):
    model = with_random_scorer(build_model(small_config(), np.random.default_rng(3), np.float64))
    a = forward(full_minibatch(graph4, [3, 0, 2], 2), graph4, model).data
    b = forward(full_minibatch(graph4, [0, 2, 3], 2), graph4, model).data
    assert_array_equal(a, b[[2, 0, 1]])


def test_relabeling_nodes_permutes_outputs(graph4):
    model = with_random_scorer(build_model(small_config(), np.random.default_rng(4), np.float64))
    perm = np.array([2, 0, 3, 1])  # old id -> new id
    # Direction flags are tied to id order, so they are carried over as input values.
    edges = [dataclasses.replace(e, pair=tuple(sorted((int(perm[e.pair[0]]), int(perm[e.pair[1]])))))
             for e in graph4.edges]
    feats = np.empty_like(graph4.node_features)
    feats[perm] = graph4.node_features
    labels = np.empty_like(graph4.labels)
    labels[perm] = graph4.labels
    g2 = TemporalGraph(feats, labels, edges, 2)
    a = forward(full_minibatch(graph4, np.arange(4), 2), graph4, model).data
    b = forward(full_minibatch(g2, perm, 2), g2, model).data
    assert_allclose(a, b, atol=1e-12)


def test_isolated_node_uses_zero_neighborhood():
    g = tiny_graph()
    g = TemporalGraph(np.vstack([g.node_features, np.ones((1, 3))]), np.append(g.labels, 0), g.edges, 2)
    model = build_model(small_config(), np.random.default_rng(5), np.float64)
    logits = forward(full_minibatch(g, [4], 2), g, model).data[0]
    z = np.ones(3)
    for layer in model.layers:
        z = update_node(z, np.zeros(layer.mlp1.out_dim), layer.mlp2).data
    assert_allclose(logits, z, atol=1e-14)


def test_softmax_ablation_has_no_zero_weights(graph4):
    model = with_random_scorer(build_model(small_config(attention="softmax"), np.random.default_rng(6), np.float64))
    d = forward_details(full_minibatch(graph4, np.arange(4), 2), graph4, model)
    assert np.all(d.alpha.data > 0)
    for u in range(4):
        assert_allclose(d.alpha.data[d.pair_u == u].sum(), 1.0)


def test_removing_zero_weight_neighbor_is_bitwise_invisible(graph4):
    rng = np.random.default_rng(7)
    # Large attention vector so sparsemax produces zeros.
    model = with_random_scorer(build_model(small_config(), rng, np.float64), scale=40)
    batch = full_minibatch(graph4, np.arange(4), 2)
    d = forward_details(batch, graph4, model)
    zeros = np.flatnonzero(d.alpha.data == 0)
    assert len(zeros) > 0
    for k in zeros:
        smaller = batch.without_neighbor(graph4, int(d.pair_u[k]), int(d.pair_v[k]))
        assert_array_equal(forward(smaller, graph4, model).data, d.logits.data)


def test_end_to_end_gradient(graph4):
    model = with_random_scorer(build_model(small_config(), np.random.default_rng(8), np.float64))
    batch = full_minibatch(graph4, np.arange(4), 2)
    w = np.random.default_rng(9).normal(size=(4, 2))

    def loss(p):
        return nm.sum(forward(batch, graph4, model.with_parameters(p)) * w)

    errs = nm.gradient_check_params(loss, model.parameters())
    assert max(errs.values()) < 1e-5


def test_linear_mlps_decompose_into_two_matrices():
    # With linear MLP_1 and fixed edge embeddings, [z || e] W splits into z W_z + e W_e.
    rng = np.random.default_rng(10)
    z = rng.normal(size=(5, 3))
    e = rng.normal(size=(5, 2))
    alpha = np.full(5, 0.2)
    W = rng.normal(size=(5, 4))
    lin = Mlp(Tensor(W), Tensor(np.zeros(4)), Tensor(np.eye(4)), Tensor(np.zeros(4)), activation="linear")
    split = alpha @ z @ W[:3] + alpha @ e @ W[3:]
    assert_allclose(aggregate_neighborhood(z, e, alpha, lin).data, split, atol=1e-12)
    # The default nonlinear MLP does not decompose this way.
    relu = Mlp.init(5, 8, 4, rng, np.float64)
    zero_e = aggregate_neighborhood(z, np.zeros_like(e), alpha, relu).data
    zero_z = aggregate_neighborhood(np.zeros_like(z), e, alpha, relu).data
    none = aggregate_neighborhood(np.zeros_like(z), np.zeros_like(e), alpha, relu).data
    both = aggregate_neighborhood(z, e, alpha, relu).data
    assert np.max(np.abs(both - (zero_e + zero_z - none))) > 1e-3


def test_minibatch_forward_uses_only_sampled_neighbors():
    g = tiny_graph()
    model = build_model(small_config(num_layers=1), np.random.default_rng(11), np.float64)
    batch = make_minibatch(g, [0], 1, [1], np.random.default_rng(0))
    v = int(batch.neighbors[0][0])
    d = forward_details(batch, g, model)
    assert_array_equal(d.pair_v, [v])
    assert_array_equal(d.alpha.data, [1.0])


def test_dimension_mismatch_names_field(graph4):
    model = build_model(small_config(node_dim=5), np.random.default_rng(12), np.float64)
    with pytest.raises(ConfigError, match="node_dim"):
        forward(full_minibatch(graph4, [0], 2), graph4, model)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(encoder="gru").validate()
    with pytest.raises(ConfigError, match="divisible"):
        small_config(encoder="transformer", transformer_heads=3).validate()
