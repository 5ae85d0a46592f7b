import json

import pytest

from reltrans.cli import build_parser, main


def test_verify_passes_and_writes_table(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path / "v"), "--scale", "0.1"]) == 0
    table = (tmp_path / "v" / "metrics.csv").read_text().splitlines()
    assert table[0] == "check,value,threshold,verdict"
    assert all(line.endswith("PASS") for line in table[1:])
    assert "FAIL" not in capsys.readouterr().out


def test_verify_seed_change_keeps_verdicts(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "v"), "--scale", "0.1", "--seed", "99"]) == 0


def test_corrupted_key_weights_fail_expansion_identity(tmp_path, capsys):
    code = main(["verify", "--out", str(tmp_path / "f"), "--scale", "0.1", "--fault", "perturb_we_k"])
    assert code != 0
    failed = [l for l in capsys.readouterr().out.splitlines() if l.startswith("FAIL")]
    assert len(failed) == 1 and "expansion_identity" in failed[0]


def test_unknown_flags_are_rejected(tmp_path):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["train", "--out", str(tmp_path), "--bogus"])
    assert info.value.code != 0
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--out", str(tmp_path), "--ptr-from-edges", "maybe"])


def test_unknown_config_key_is_an_error(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("speed = fast\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 2


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("task = bfs_ptr\nlayers = 2\nepochs = 0\nn_train = 4\nn_test = 2\n"
                   "test_min = 6\ntest_max = 7\n")
    out = tmp_path / "t"
    assert main(["train", "--profile", "desk", "--config", str(cfg), "--layers", "1",
                 "--ptr-from-edges", "false", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    c = manifest["config"]
    assert (c["task"], c["layers"], c["ptr_from_edges"], c["d_n"]) == ("bfs_ptr", 1, False, 32)


def test_gen_train_eval_and_rerun_reproduce_hashes(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 1\nn_train = 12\nn_test = 4\ntrain_min = 4\ntrain_max = 7\n"
                   "test_min = 8\ntest_max = 9\n")
    common = ["--profile", "desk", "--task", "bfs_ptr", "--config", str(cfg), "--layers", "1",
              "--seed", "5"]
    gen, tr, ev = tmp_path / "gen", tmp_path / "train", tmp_path / "eval"
    assert main(["gen", *common, "--out", str(gen)]) == 0
    meta = json.loads((gen / "test_ood.rtd.meta.json").read_text())
    assert meta["sizes"] == [8] and meta["count"] == 4
    assert main(["train", *common, "--data", str(gen), "--out", str(tr)]) == 0
    assert (tr / "checkpoint.rtm").exists()
    assert main(["eval", *common, "--checkpoint", str(tr / "checkpoint.rtm"),
                 "--dataset", str(gen / "test_id.rtd"), "--out", str(ev)]) == 0
    for name in ("gen", "train", "eval"):
        again = tmp_path / f"{name}_again"
        assert main(["rerun", str(tmp_path / name / "manifest.json"), "--out", str(again)]) == 0
        old = json.loads((tmp_path / name / "manifest.json").read_text())["artifacts"]
        new = json.loads((again / "manifest.json").read_text())["artifacts"]
        assert old == new
        if name != "gen":
            assert (again / "metrics.csv").read_bytes() == (tmp_path / name / "metrics.csv").read_bytes()
    assert "DIFFER" not in capsys.readouterr().out


def test_eval_rejects_mismatched_task(tmp_path):
    out = tmp_path / "t"
    assert main(["train", "--profile", "desk", "--task", "fw_step", "--epochs", "0", "--layers", "1",
                 "--out", str(out)]) == 0
    gen = tmp_path / "g"
    assert main(["gen", "--profile", "desk", "--task", "bfs_ptr", "--out", str(gen)]) == 0
    assert main(["eval", "--task", "bfs_ptr", "--checkpoint", str(out / "checkpoint.rtm"),
                 "--dataset", str(gen / "val.rtd"), "--out", str(tmp_path / "e")]) == 2


def test_bench_runs_for_single_node(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "--sizes", "1,2", "--repeats", "1", "--out", str(out)]) == 0
    rows = (out / "bench.csv").read_text().splitlines()
    assert rows[0] == "n,time_ms,peak_bytes" and rows[1].startswith("1,")
    assert json.loads((out / "manifest.json").read_text())["nondeterministic"] == ["bench.csv"]


def test_ablate_layers_smoke(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["ablate", "--which", "layers", "--profile", "desk", "--task", "fw_step",
                 "--num-seeds", "1", "--epochs", "1", "--config", str(_tiny(tmp_path)),
                 "--out", str(out)]) == 0
    rows = (out / "ablation.csv").read_text().splitlines()
    assert {r.split(",")[1] for r in rows[1:]} == {"rt_L1", "rt_L3"}


def _tiny(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("n_train = 8\nn_test = 4\ntrain_min = 3\ntrain_max = 5\ntest_min = 5\ntest_max = 6\n")
    return cfg
