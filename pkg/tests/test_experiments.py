import numpy as np

from reltrans.experiments import (BenchResult, ablation_variants, check_expansion_identity,
                                  desk_config, matched_transformer, paired_wins,
                                  standard_transformer_reference)
from reltrans.model import GraphModel


def test_matched_transformer_budget_is_close():
    cfg = desk_config("fw_step")
    rt = GraphModel.init(cfg.model_config(), 0).num_parameters()
    tf_cfg = matched_transformer(cfg)
    tf = GraphModel.init(tf_cfg.model_config(), 0).num_parameters()
    assert tf_cfg.model == "transformer"
    assert abs(tf - rt) / rt < 0.02


def test_ablation_variants_differ_only_in_the_ablated_setting():
    cfg = desk_config("fw_step")
    v = ablation_variants("no_edge_updates", cfg)
    a, b = v["rt"].to_dict(), v["rt_no_edge_updates"].to_dict()
    assert {k for k in a if a[k] != b[k]} == {"edge_updates"}
    v = ablation_variants("ptr_decoding", desk_config("bfs_ptr"))
    assert v["ptr_from_edges"].ptr_from_edges and not v["ptr_from_nodes"].ptr_from_edges


def test_paired_wins_counts_per_seed():
    rows = [{"seed": s, "variant": v, "split": "test_id", "metric_name": "mse", "value": x}
            for s, v, x in [(0, "a", 1.0), (0, "b", 2.0), (1, "a", 3.0), (1, "b", 2.0)]]
    assert paired_wins(rows, "a", "b", "test_id", "mse") == (1, 2)
    assert paired_wins(rows, "a", "b", "test_id", "mse", higher_is_better=True) == (1, 2)


def test_bench_fit_recovers_known_exponent():
    sizes = [32, 64, 128, 256]
    r = BenchResult(sizes, [0.01 * n ** 2 for n in sizes], [0] * 4)
    assert abs(r.slope - 2.0) < 1e-12
    np.testing.assert_allclose(r.ratios, [4.0, 4.0, 4.0])


def test_cubic_timings_would_be_rejected():
    sizes = [32, 64, 128, 256]
    r = BenchResult(sizes, [1e-4 * n ** 3 for n in sizes], [0] * 4)
    assert r.slope > 2.6 and min(r.ratios) > 5


def test_expansion_check_detects_perturbation():
    assert check_expansion_identity(0, 20) <= 1e-12
    assert check_expansion_identity(0, 20, "perturb_we_k") > 1e-6


def test_numpy_reference_is_independent_of_the_tape():
    from reltrans.attention import AttentionWeights, NodeUpdateWeights
    rng = np.random.default_rng(0)
    w, nu = AttentionWeights.init(rng, 4, 0, 1, 4), NodeUpdateWeights.init(rng, 4, 4)
    out = standard_transformer_reference(rng.normal(size=(3, 4)), w, nu)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
