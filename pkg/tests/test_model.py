import numpy as np
import pytest

from helpers import brute_argmax
from reltrans import autodiff as ad
from reltrans.attention import attend
from reltrans.errors import ContractError, FormatError, ShapeError
from reltrans.experiments import random_rt_model
from reltrans.graph import Graph, permute, permute_nodes
from reltrans.model import (GraphModel, ModelConfig, apply_global, argmax_pointers, collate,
                            decode_edge_scalar, decode_graph_scalar, decode_pointers_from_edges,
                            decode_pointers_from_nodes, load_checkpoint, pair_logits)
from reltrans.params import Linear


def small(**kw):
    base = dict(node_in=3, edge_in=2, d_n=8, d_e=6, num_layers=2, num_heads=2, head_size=4,
                d_nh=8, d_eh1=6, d_eh2=5)
    return ModelConfig(**{**base, **kw})


def rand_graph(rng, n, d_n=3, d_e=2, d_g=None):
    glob = None if d_g is None else rng.normal(size=d_g)
    return Graph(rng.normal(size=(n, d_n)), rng.normal(size=(n, n, d_e)), glob)


def test_zero_layers_return_encoded_inputs():
    rng = np.random.default_rng(0)
    model = GraphModel.init(small(num_layers=0), 1)
    nodes, edges = rng.normal(size=(4, 3)), rng.normal(size=(4, 4, 2))
    n_out, e_out = model.forward(nodes, edges)
    n_enc, e_enc = model.encode(nodes, edges)
    np.testing.assert_array_equal(n_out.data, n_enc.data)
    np.testing.assert_array_equal(e_out.data, e_enc.data)


def test_edge_free_single_layer_is_one_transformer_layer():
    rng = np.random.default_rng(1)
    rt = GraphModel.init(small(num_layers=1, d_e=0, edge_updates=False), 2)
    tf = GraphModel.init(small(num_layers=1, variant="transformer"), 2)
    for a, b in zip(rt.parameters(), tf.parameters()):
        b.data = a.data.copy()
    nodes, edges = rng.normal(size=(5, 3)), rng.normal(size=(5, 5, 2))
    enc, _ = rt.encode(nodes, edges)
    layer = rt.params.layers[0]
    expected = attend(enc, None, layer.attn, layer.node).data
    assert rt.forward(nodes, edges)[0].data.tobytes() == expected.tobytes()
    assert tf.forward(nodes, edges)[0].data.tobytes() == expected.tobytes()


def test_forward_is_bit_identical_across_runs():
    rng = np.random.default_rng(2)
    g = rand_graph(rng, 6)
    a = GraphModel.init(small(num_layers=3), 5).forward_graph(g)
    b = GraphModel.init(small(num_layers=3), 5).forward_graph(g)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()


def test_whole_model_permutation_equivariance():
    rng = np.random.default_rng(3)
    for variant in ("rt", "transformer", "deepsets", "mpnn"):
        model = random_rt_model(4, layers=3, variant=variant)
        g = rand_graph(rng, 7)
        pi = rng.permutation(7)
        n0, e0 = model.forward_graph(g)
        n1, e1 = model.forward_graph(permute(g, pi))
        assert np.abs(n1.data - permute_nodes(n0.data, pi)).max() <= 1e-9
        if variant == "rt":
            assert np.abs(e1.data - permute_nodes(e0.data, pi, (0, 1))).max() <= 1e-9


def test_apply_global_identity_without_global():
    g = rand_graph(np.random.default_rng(4), 3)
    assert apply_global(g, "cat") is g and apply_global(g, "core") is g


def test_apply_global_cat():
    g = Graph(np.zeros((2, 3)), np.zeros((2, 2, 1)), np.array([7.0]))
    h = apply_global(g, "cat")
    assert h.d_n == 4 and h.node_feats[:, -1].tolist() == [7.0, 7.0]
    assert h.global_feat is None


def test_apply_global_core_adds_absent_edges():
    rng = np.random.default_rng(5)
    g = rand_graph(rng, 3, d_n=2, d_g=4)
    h = apply_global(g, "core")
    assert h.num_nodes == 4 and h.num_core == 1 and h.d_n == 4
    np.testing.assert_array_equal(h.node_feats[3], g.global_feat)
    np.testing.assert_array_equal(h.node_feats[:3, :2], g.node_feats)
    assert not h.edge_feats[3].any() and not h.edge_feats[:, 3].any()


def test_apply_global_core_commutes_with_permutation():
    rng = np.random.default_rng(6)
    g = rand_graph(rng, 3, d_g=2)
    pi = rng.permutation(3)
    ext = np.append(pi, 3)
    assert apply_global(permute(g, pi), "core").equals(permute(apply_global(g, "core"), ext))


def test_apply_global_rejects_unknown_mode():
    with pytest.raises(ContractError):
        apply_global(rand_graph(np.random.default_rng(7), 2, d_g=1), "sum")


def test_core_node_is_excluded_from_pointer_decoding():
    rng = np.random.default_rng(8)
    cfg = small(target_kind="node_pointer", global_in=2, global_mode="core", node_in=3)
    model = GraphModel.init(cfg, 3)
    g = rand_graph(rng, 4, d_g=2)
    batch = collate([g], "core")
    assert batch.nodes.shape[-2] == 5 and batch.num_real == 4
    assert model.predict_batch(batch).shape == (1, 4, 4)


def test_core_model_equivariance_on_real_nodes():
    rng = np.random.default_rng(9)
    model = random_rt_model(5, global_in=2, global_mode="core", node_in=3, layers=2)
    g = rand_graph(rng, 5, d_g=2)
    pi = rng.permutation(5)
    n0, e0 = model.forward_graph(g)
    n1, e1 = model.forward_graph(permute(g, pi))
    assert np.abs(n1.data[:5] - permute_nodes(n0.data[:5], pi)).max() <= 1e-9
    assert np.abs(n1.data[5] - n0.data[5]).max() <= 1e-9


def lin(rng, d_in, d_out, zero=False):
    w = Linear.init(rng, d_in, d_out)
    if zero:
        w.weight.data[:] = 0.0
    else:
        w.bias.data = rng.normal(size=d_out)
    return w


def test_edge_pointer_trio():
    rng = np.random.default_rng(10)
    edges = rng.normal(size=(5, 5, 3))
    assert decode_pointers_from_edges(edges, lin(rng, 3, 1, zero=True)).tolist() == [0] * 5
    assert decode_pointers_from_edges(edges[:1, :1], lin(rng, 3, 1)).tolist() == [0]
    head = lin(rng, 3, 1)
    logits = edges @ head.weight.data[:, 0] + head.bias.data[0]
    np.testing.assert_array_equal(decode_pointers_from_edges(edges, head), brute_argmax(logits))


def test_node_pointer_trio():
    rng = np.random.default_rng(11)
    nodes = rng.normal(size=(6, 4))
    z = lin(rng, 4, 3, zero=True)
    z.bias.data[:] = 0.0
    assert decode_pointers_from_nodes(nodes, z, z).tolist() == [0] * 6
    assert decode_pointers_from_nodes(nodes[:1], lin(rng, 4, 3), lin(rng, 4, 3)).tolist() == [0]
    src, dst = lin(rng, 4, 3), lin(rng, 4, 3)
    f = nodes @ src.weight.data + src.bias.data
    g = nodes @ dst.weight.data + dst.bias.data
    logits = np.array([[sum(f[i, c] * g[j, c] for c in range(3)) for j in range(6)] for i in range(6)])
    np.testing.assert_allclose(pair_logits(nodes, src, dst).data, logits, atol=1e-12)
    np.testing.assert_array_equal(decode_pointers_from_nodes(nodes, src, dst), brute_argmax(logits))


def test_pointer_argmax_invariant_to_positive_scaling():
    rng = np.random.default_rng(12)
    logits = rng.normal(size=(7, 7))
    for c in (1e-3, 0.5, 3.0, 1e4):
        np.testing.assert_array_equal(argmax_pointers(c * logits), argmax_pointers(logits))


def test_graph_scalar_trio():
    rng = np.random.default_rng(13)
    nodes = rng.normal(size=(4, 5))
    zero = lin(rng, 5, 1, zero=True)
    zero.bias.data[:] = 0.0
    assert decode_graph_scalar(nodes, zero).item() == 0.0
    head = lin(rng, 5, 1)
    one = decode_graph_scalar(nodes[:1], head).item()
    assert abs(one - (nodes[0] @ head.weight.data[:, 0] + head.bias.data[0])) <= 1e-12
    mean = [sum(nodes[i, c] for i in range(4)) / 4 for c in range(5)]
    expected = sum(mean[c] * head.weight.data[c, 0] for c in range(5)) + head.bias.data[0]
    assert abs(decode_graph_scalar(nodes, head).item() - expected) <= 1e-12


def test_edge_scalar_trio():
    rng = np.random.default_rng(14)
    edges = rng.normal(size=(3, 3, 4))
    zero = lin(rng, 4, 1, zero=True)
    zero.bias.data[:] = 0.0
    assert not decode_edge_scalar(edges, zero).data.any()
    head = lin(rng, 4, 1)
    out = decode_edge_scalar(edges, head).data
    for i in range(3):
        for j in range(3):
            expected = sum(edges[i, j, c] * head.weight.data[c, 0] for c in range(4)) + head.bias.data[0]
            assert abs(out[i, j] - expected) <= 1e-12


def test_batched_prediction_matches_single_graphs():
    rng = np.random.default_rng(15)
    model = GraphModel.init(small(target_kind="edge_scalar"), 6)
    graphs = [rand_graph(rng, 4) for _ in range(3)]
    batched = model.predict_batch(collate(graphs)).data
    for b, g in enumerate(graphs):
        single = model.predict_batch(collate([g])).data[0]
        np.testing.assert_allclose(batched[b], single, atol=1e-12)


def test_collate_rejects_mixed_sizes():
    rng = np.random.default_rng(16)
    with pytest.raises(ShapeError):
        collate([rand_graph(rng, 3), rand_graph(rng, 4)])


def test_checkpoint_round_trip_is_exact():
    model = random_rt_model(7, layers=2)
    buf = model.to_bytes()
    back = load_checkpoint(buf)
    assert back.config == model.config
    for a, b in zip(model.parameters(), back.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert back.to_bytes() == buf


def test_checkpoint_rejects_corruption():
    buf = random_rt_model(8, layers=1).to_bytes()
    with pytest.raises(FormatError):
        load_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        load_checkpoint(buf[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(buf + b"\0")


def test_gradients_flow_to_every_parameter():
    rng = np.random.default_rng(17)
    model = random_rt_model(9, layers=2)
    g = rand_graph(rng, 4)
    n, e = model.forward_graph(g)
    ad.backward(ad.sum_(n * rng.normal(size=n.shape)) + ad.sum_(e * rng.normal(size=e.shape)))
    for name, p in model.params.named_parameters():
        if not name.startswith("decoder"):
            assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_unknown_variant_rejected():
    with pytest.raises(ContractError):
        small(variant="gat")
