import numpy as np

from reltrans import autodiff as ad
from reltrans.attention import AttentionWeights, NodeUpdateWeights, attend
from reltrans.baselines import GNNLayerWeights, deepsets_layer, mpnn_layer, vanilla_transformer_layer
from reltrans.graph import permute_nodes


def gnn(rng, d_n=4, d_e=3):
    w = GNNLayerWeights.init(rng, d_n, d_e)
    w.message.bias.data = rng.normal(size=d_n) * 0.1
    w.update.bias.data = rng.normal(size=d_n) * 0.1
    return w


def _phi_loop(n, m, w):
    x = np.concatenate([n, m])
    return n + np.maximum(x @ w.update.weight.data + w.update.bias.data, 0.0)


def _psi_loop(e, ni, nj, w):
    x = np.concatenate([e, ni, nj])
    return np.maximum(x @ w.message.weight.data + w.message.bias.data, 0.0)


def test_deepsets_matches_per_node_loop():
    rng = np.random.default_rng(0)
    w = gnn(rng)
    nodes, edges = rng.normal(size=(5, 4)), rng.normal(size=(5, 5, 3))
    out = deepsets_layer(nodes, edges, w).data
    for i in range(5):
        m = _psi_loop(edges[i, i], nodes[i], nodes[i], w)
        np.testing.assert_allclose(out[i], _phi_loop(nodes[i], m, w), atol=1e-12)


def test_deepsets_ignores_other_nodes():
    rng = np.random.default_rng(1)
    w = gnn(rng)
    nodes, edges = rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 3))
    base = deepsets_layer(nodes, edges, w).data
    nodes2, edges2 = nodes.copy(), edges.copy()
    nodes2[3] += 1.0
    edges2[0, 1] += 1.0
    edges2[3, :] += 1.0
    out = deepsets_layer(nodes2, edges2, w).data
    np.testing.assert_array_equal(out[:3], base[:3])


def test_mpnn_matches_brute_force_max():
    rng = np.random.default_rng(2)
    w = gnn(rng)
    nodes, edges = rng.normal(size=(5, 4)), rng.normal(size=(5, 5, 3))
    out = mpnn_layer(nodes, edges, w).data
    for i in range(5):
        msgs = [_psi_loop(edges[i, j], nodes[i], nodes[j], w) for j in range(5)]
        m = np.max(np.stack(msgs), axis=0)
        np.testing.assert_allclose(out[i], _phi_loop(nodes[i], m, w), atol=1e-12)


def test_mpnn_mask_excludes_padding_senders():
    rng = np.random.default_rng(3)
    w = gnn(rng)
    nodes, edges = rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 3))
    masked = mpnn_layer(nodes, edges, w, node_mask=np.array([1, 1, 1, 0], bool)).data
    trimmed = mpnn_layer(nodes[:3], edges[:3, :3], w).data
    np.testing.assert_allclose(masked[:3], trimmed, atol=1e-13)


def test_zero_update_weights_pass_nodes_through():
    rng = np.random.default_rng(4)
    w = gnn(rng)
    w.update.weight.data[:] = 0.0
    w.update.bias.data[:] = -1.0
    nodes, edges = rng.normal(size=(3, 4)), rng.normal(size=(3, 3, 3))
    np.testing.assert_array_equal(mpnn_layer(nodes, edges, w).data, nodes)
    np.testing.assert_array_equal(deepsets_layer(nodes, edges, w).data, nodes)


def test_mpnn_is_permutation_equivariant():
    rng = np.random.default_rng(5)
    w = gnn(rng)
    nodes, edges = rng.normal(size=(6, 4)), rng.normal(size=(6, 6, 3))
    pi = rng.permutation(6)
    base = mpnn_layer(nodes, edges, w).data
    moved = mpnn_layer(permute_nodes(nodes, pi), permute_nodes(edges, pi, (0, 1)), w).data
    np.testing.assert_allclose(moved, permute_nodes(base, pi), atol=1e-12)


def test_mpnn_gradient_routes_to_argmax_sender():
    rng = np.random.default_rng(6)
    w = gnn(rng, d_n=2, d_e=1)
    edges = ad.parameter(rng.normal(size=(3, 3, 1)))
    out = mpnn_layer(rng.normal(size=(3, 2)), edges, w)
    ad.backward(ad.sum_(out))
    # each receiver's max picks one sender per channel; rows get at most d_n non-zero entries
    assert (np.count_nonzero(edges.grad[..., 0], axis=1) <= 2).all()


def test_vanilla_transformer_is_relational_attention_without_edges():
    rng = np.random.default_rng(7)
    attn = AttentionWeights.init(rng, 6, 0, 2, 3)
    nu = NodeUpdateWeights.init(rng, 6, 8)
    nodes = rng.normal(size=(4, 6))
    a = vanilla_transformer_layer(nodes, attn, nu).data
    b = attend(nodes, np.zeros((4, 4, 0)), attn, nu).data
    assert a.tobytes() == b.tobytes()
