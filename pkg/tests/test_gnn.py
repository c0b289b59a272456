import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossview import autodiff as ad
from crossview.autodiff import ContractError, Tensor
from crossview.gnn import (
    GatLayerParams,
    GcnLayerParams,
    GnnStack,
    gat_attention,
    gat_layer,
    gcn_layer,
    gnn_encode,
    normalized_adjacency,
)
from crossview.graph import Graph, add_self_loops

from conftest import grad_check
from oracles import loop_attention, loop_layer


def rand_graph(rng, n, p=0.4):
    a = (rng.random((n, n)) < p).astype(float)
    a = np.triu(a, 1)
    return add_self_loops(Graph(a + a.T))


@pytest.mark.parametrize("seed", range(6))
def test_attention_matches_loops(seed):
    rng = np.random.default_rng(seed)
    g = rand_graph(rng, 6)
    H = rng.normal(size=(6, 4))
    p = GatLayerParams.init(4, 3, 2, rng)
    for k in range(2):
        got = gat_attention(Tensor(H), g, p, k).data
        want = loop_attention(H, g.adjacency, p.W[k].data, p.a[k].data, p.leaky_slope)
        assert np.max(np.abs(got - want)) < 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_layer_matches_loops(seed):
    rng = np.random.default_rng(100 + seed)
    g = rand_graph(rng, 7)
    H = rng.normal(size=(7, 5))
    p = GatLayerParams.init(5, 4, 3, rng)
    got = gat_layer(Tensor(H), g, p).data
    assert np.max(np.abs(got - loop_layer(H, g.adjacency, p))) < 1e-12


def test_identical_features_uniform_attention(rng):
    g = rand_graph(rng, 8)
    p = GatLayerParams.init(3, 2, 1, rng)
    alpha = gat_attention(Tensor(np.ones((8, 3))), g, p, 0).data
    assert np.allclose(alpha, g.adjacency / g.degrees()[:, None], atol=1e-15)


def test_isolated_node_attends_to_itself(rng):
    a = np.zeros((4, 4))
    a[1, 2] = a[2, 1] = 1
    g = add_self_loops(Graph(a))
    p = GatLayerParams.init(2, 2, 1, rng)
    alpha = gat_attention(Tensor(rng.normal(size=(4, 2))), g, p, 0).data
    assert alpha[0, 0] == 1.0 and alpha[3, 3] == 1.0


def test_requires_self_loops(rng):
    p = GatLayerParams.init(2, 2, 1, rng)
    with pytest.raises(ContractError):
        gat_attention(Tensor(np.ones((2, 2))), Graph(np.ones((2, 2)) - np.eye(2)), p, 0)
    with pytest.raises(ContractError):
        gcn_layer(Tensor(np.ones((2, 2))), Graph(np.zeros((2, 2))), GcnLayerParams.init(2, 2, rng))


def test_single_node_identity():
    g = add_self_loops(Graph(np.zeros((1, 1))))
    H = Tensor(np.array([[0.3, -2.0, 5.0]]))
    p = GatLayerParams([Tensor(np.eye(3))], [Tensor(np.ones((6, 1)))], activation="identity")
    assert np.array_equal(gat_layer(H, g, p).data, H.data)
    assert np.array_equal(gcn_layer(H, g, GcnLayerParams(Tensor(np.eye(3)), "identity")).data, H.data)


def test_two_equal_heads_equal_one_head(rng):
    g = rand_graph(rng, 6)
    H = Tensor(rng.normal(size=(6, 3)))
    one = GatLayerParams.init(3, 4, 1, rng)
    two = GatLayerParams(one.W * 2, one.a * 2)
    assert np.allclose(gat_layer(H, g, one).data, gat_layer(H, g, two).data, atol=1e-15)


def test_gcn_path_graph(rng):
    g = add_self_loops(Graph(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)))
    r6 = 1 / np.sqrt(6)
    want = np.array([[1 / 2, r6, 0], [r6, 1 / 3, r6], [0, r6, 1 / 2]])
    assert np.allclose(normalized_adjacency(g), want, atol=1e-15)
    H = rng.normal(size=(3, 2))
    out = gcn_layer(Tensor(H), g, GcnLayerParams(Tensor(np.eye(2)), "identity")).data
    assert np.allclose(out, want @ H, atol=1e-14)


def test_gcn_disconnected_independent(rng):
    g = add_self_loops(Graph(np.zeros((2, 2))))
    H = rng.normal(size=(2, 3))
    W = rng.normal(size=(3, 2))
    out = gcn_layer(Tensor(H), g, GcnLayerParams(Tensor(W), "identity")).data
    assert np.allclose(out, H @ W, atol=1e-15)


def test_gcn_regular_graph_identity_features():
    n = 6
    ring = np.zeros((n, n))
    for i in range(n):
        ring[i, (i + 1) % n] = ring[(i + 1) % n, i] = 1
    g = add_self_loops(Graph(ring))
    out = gcn_layer(Tensor(np.eye(n)), g, GcnLayerParams(Tensor(np.eye(n)), "identity")).data
    for i in range(n):
        assert np.allclose(out[i], g.adjacency[i] / 3)


def test_stack_shapes_and_base_case(rng):
    g = rand_graph(rng, 9)
    X = Tensor(rng.normal(size=(9, 5)))
    s = GnnStack.init("gat", 5, 16, 16, n_layers=2, heads=2, rng=rng)
    assert gnn_encode(g, X, s).shape == (9, 16)
    one = GnnStack.init("gat", 5, 16, 7, n_layers=1, rng=rng)
    assert np.array_equal(gnn_encode(g, X, one).data, gat_layer(X, g, one.layers[0]).data)
    gcn = GnnStack.init("gcn", 5, 8, 4, rng=rng)
    assert gnn_encode(g, X, gcn).shape == (9, 4)


def test_zero_weight_stack_constant_rows(rng):
    g = rand_graph(rng, 5)
    s = GnnStack.init("gat", 3, 4, 4, rng=rng)
    for layer in s.layers:
        for W in layer.W:
            W.data[:] = 0
    out = gnn_encode(g, Tensor(rng.normal(size=(5, 3))), s).data
    assert np.all(out == 0)


def test_stack_config_errors(rng):
    with pytest.raises(ValueError):
        GnnStack.init("sage", 3, 4, 4, rng=rng)
    with pytest.raises(ValueError):
        GnnStack.init("gat", 3, 4, 4, n_layers=3, rng=rng)


@pytest.mark.parametrize("seed", range(5))
def test_gat_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    g = rand_graph(rng, 5)
    H = Tensor(rng.normal(size=(5, 3)))
    p = GatLayerParams.init(3, 2, 2, rng)
    w = Tensor(rng.normal(size=(5, 2)))
    f = lambda: ad.sum(gat_layer(H, g, p) * w)
    assert grad_check(f, p.parameters()) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gcn_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    g = rand_graph(rng, 5)
    H = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    p = GcnLayerParams.init(3, 2, rng)
    w = Tensor(rng.normal(size=(5, 2)))
    f = lambda: ad.sum(gcn_layer(H, g, p) * w)
    assert grad_check(f, [H, *p.parameters()]) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 9))
def test_attention_rows_and_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    g = rand_graph(rng, n)
    H = rng.normal(size=(n, 3))
    p = GatLayerParams.init(3, 4, 2, rng)
    alpha = gat_attention(Tensor(H), g, p, 1).data
    assert np.all(alpha >= 0)
    assert np.all(alpha[g.adjacency == 0] == 0)
    assert np.allclose(alpha.sum(axis=1), 1, atol=1e-12)
    perm = rng.permutation(n)
    gp = Graph(g.adjacency[np.ix_(perm, perm)], self_looped=True)
    out = gat_layer(Tensor(H), g, p).data
    out_p = gat_layer(Tensor(H[perm]), gp, p).data
    assert np.allclose(out_p, out[perm], atol=1e-10)
