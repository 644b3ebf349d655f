import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from attnrank import experiments as ex
from attnrank.attention import memorization_condition
from attnrank.cli import main
from attnrank.db import RandomDBConfig, parse_triples, random_database
from attnrank.heatmap import bin_edge, bin_heatmap, render_heatmap
from attnrank.training import TrainConfig

TINY = ex.SweepConfig(n_databases=5, n_layers=6, n_pairs=6, n_k=(3, 6), n_q=(2, 4), n_v=(2, 4),
                      train=TrainConfig(max_epochs=30))


def test_layer_shape_counts():
    shapes = ex.all_layer_shapes()
    assert len(shapes) == 364 == len(set(shapes))
    s = ex.LayerShape(4, 6, 6, 6)
    assert s.n_params == 576 and s.lower_estimate == 30


def test_default_corpus_manifest():
    c = ex.generate_corpus(ex.SweepConfig())
    assert c.manifest()["counts"] == {"databases": 50, "layers": 40, "pairs": 300}
    assert len(set(c.pairs)) == 300
    assert all(len(db) <= 200 for db in c.databases)
    for s in c.layers:
        assert 1 <= s.d_vo <= s.d_model <= 6 and 1 <= s.d_qk <= s.d_model and 1 <= s.n_heads <= 4
    assert ex.generate_corpus(ex.SweepConfig()).manifest_hash() == c.manifest_hash()
    assert ex.generate_corpus(ex.SweepConfig(master_seed=1)).manifest_hash() != c.manifest_hash()


def test_large_scale_config_accepted():
    cfg = ex.SweepConfig.large_scale()
    assert (cfg.n_databases, cfg.n_layers, cfg.n_pairs) == (548, 364, 3947)
    c = ex.generate_corpus(cfg)
    assert len(c.pairs) == 3947 and len(c.layers) == 364
    assert max(len(db) for db in c.databases) <= 200


def test_corpus_save_load(tmp_path):
    c = ex.generate_corpus(TINY, tmp_path / "corpus")
    m = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
    assert m["hash"] == c.manifest_hash()
    c2 = ex.load_corpus(tmp_path / "corpus")
    assert c2.manifest_hash() == c.manifest_hash()
    assert [db.rows() for db in c2.databases] == [db.rows() for db in c.databases]
    (tmp_path / "corpus" / "databases" / "db_0000.txt").write_text("x y z\n")
    with pytest.raises(ValueError, match="hash"):
        ex.load_corpus(tmp_path / "corpus")


def test_too_many_pairs():
    with pytest.raises(ValueError):
        ex.generate_corpus(ex.SweepConfig(n_databases=2, n_layers=2, n_pairs=5))
    with pytest.raises(ValueError):
        ex.generate_corpus(ex.SweepConfig(n_layers=400))


def test_config_toml(tmp_path):
    p = tmp_path / "sweep.toml"
    p.write_text('n_databases = 7\nn_k = [3, 5]\nmaster_seed = 3\n\n[train]\nmax_epochs = 12\nlearning_rate = 0.005\n')
    cfg = ex.load_sweep_config(p)
    assert cfg.n_databases == 7 and cfg.n_k == (3, 5) and cfg.master_seed == 3
    assert cfg.train == TrainConfig(max_epochs=12, learning_rate=0.005)
    assert ex.SweepConfig.from_dict(cfg.to_dict()) == cfg


def test_micro_sweep(tmp_path):
    c = ex.generate_corpus(replace(TINY, n_pairs=4))
    out = tmp_path / "r.csv"
    rows = ex.run_sweep(c, out)
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    assert lines[0].split(",") == ex.result_header()
    assert [r["pair_id"] for r in rows] == [0, 1, 2, 3]
    back = ex.read_results_csv(out)
    for r in back:
        assert r["n_params"] == 2 * r["n_heads"] * r["d_model"] * (r["d_vo"] + r["d_qk"])
        assert r["acc_argmax"] >= r["acc_050"] >= r["acc_075"] >= r["acc_095"] >= r["acc_099"]
        assert r["status"] == "ok" and r["epochs"] == 30


def test_resume_gives_identical_csv(tmp_path):
    c = ex.generate_corpus(TINY)
    full = tmp_path / "full.csv"
    ex.run_sweep(c, full)
    part = tmp_path / "part.csv"
    ex.run_sweep(c, part, pair_ids=[0, 2, 5])  # interrupted run
    journal = tmp_path / "part.csv.journal"
    assert len(journal.read_text().splitlines()) == 3
    ex.run_sweep(c, part)
    assert part.read_bytes() == full.read_bytes()
    assert len(journal.read_text().splitlines()) == 6


def test_workers_do_not_change_output(tmp_path):
    c = ex.generate_corpus(TINY)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ex.run_sweep(c, a, workers=1)
    ex.run_sweep(c, b, workers=3)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_pair_is_recorded(tmp_path):
    cfg = replace(TINY, n_pairs=2, train=TrainConfig(max_epochs=30, optimizer="sgd", learning_rate=1e6))
    rows = ex.run_sweep(ex.generate_corpus(cfg), tmp_path / "d.csv")
    assert {r["status"] for r in rows} <= {"ok", "diverged"}
    assert any(r["status"] == "diverged" for r in rows)
    back = ex.read_results_csv(tmp_path / "d.csv")
    assert all(np.isnan(r["acc_argmax"]) for r in back if r["status"] == "diverged")


def test_memorization_condition_pair():
    db = random_database(RandomDBConfig(4, 3, 3, 8), 2)
    shape = ex.LayerShape(2, 6, 4, 4)
    cfg = shape.config(len(db.vocab))
    assert memorization_condition(cfg, db)
    row = ex.run_pair(db, shape, TrainConfig(), (0.75,), seed=0)
    assert row["db_rank_ub"] <= row["layer_lb"]
    assert row["acc_075"] >= 0.9


def rec(lb, db, acc, status="ok"):
    return {"layer_lb": lb, "db_rank_ub": db, "acc_argmax": acc, "status": status}


def test_bin_rules():
    assert bin_edge(7, 5) == 10 and bin_edge(25, 10) == 30 and bin_edge(5, 5) == 5 and bin_edge(1, 5) == 5
    g = bin_heatmap([rec(7, 25, 1.0)], "acc_argmax")
    assert g.layer_edges == [10] and g.db_edges == [30]
    assert g.cell(10, 30) == (1.0, 1)
    g = bin_heatmap([rec(5, 10, 0.0)], "acc_argmax")
    assert g.layer_edges == [5] and g.db_edges == [10]
    g = bin_heatmap([rec(6, 11, 0.4), rec(9, 20, 0.6)], "acc_argmax")
    assert g.cell(10, 20) == pytest.approx((0.5, 2))


def test_bin_counts_and_empty_cells():
    rng = np.random.default_rng(0)
    rs = [rec(int(rng.integers(1, 30)), int(rng.integers(1, 90)), float(rng.random())) for _ in range(50)]
    rs.append(rec(3, 3, 0.0, status="diverged"))
    g = bin_heatmap(rs, "acc_argmax")
    assert g.count.sum() == 50
    assert np.all(np.isnan(g.mean[g.count == 0]))
    g0 = bin_heatmap([rec(1, 1, 0.0), rec(12, 31, 0.0)], "acc_argmax")
    assert g0.cell(5, 10) == (0.0, 1)
    assert g0.is_empty(10, 10) and not g0.is_empty(5, 10)


def test_bin_errors():
    with pytest.raises(ValueError):
        bin_heatmap([], "acc_argmax")
    with pytest.raises(KeyError):
        bin_heatmap([rec(1, 1, 0.5)], "acc_123")


def test_render_heatmap(tmp_path):
    g = bin_heatmap([rec(4, 9, 0.2), rec(9, 9, 0.4), rec(4, 19, 0.9), rec(9, 19, 1.0)], "acc_argmax")
    p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
    render_heatmap(g, p1)
    render_heatmap(bin_heatmap([rec(4, 9, 0.2), rec(9, 9, 0.4), rec(4, 19, 0.9), rec(9, 19, 1.0)],
                               "acc_argmax"), p2)
    svg = p1.read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert svg.count('class="cell"') == 4
    assert p1.read_bytes() == p2.read_bytes()
    # an empty cell is drawn, but hatched
    render_heatmap(bin_heatmap([rec(4, 9, 0.2), rec(9, 19, 1.0)], "acc_argmax"), p1)
    assert p1.read_text().count('class="cell empty"') == 2


def test_render_empty_grid(tmp_path):
    g = bin_heatmap([rec(4, 9, 0.2)], "acc_argmax")
    g.count[:] = 0
    g.mean[:] = np.nan
    with pytest.raises(ValueError, match="nothing to render"):
        render_heatmap(g, tmp_path / "x.svg")


def test_scatter_tables(tmp_path):
    db1 = parse_triples("a beta s")
    st = ex.scatter_tables([db1], [ex.LayerShape(4, 6, 6, 6)])
    assert st.db_rows == [(0, 1, 1)]
    assert st.layer_rows[0][-2:] == (576, 30)
    assert st.slope == 1.0
    c = ex.generate_corpus(ex.SweepConfig())
    st = ex.scatter_tables(c.databases, c.layers)
    assert len(st.db_rows) == 50 and len(st.layer_rows) == 40
    st.write(tmp_path / "db.csv", tmp_path / "layer.csv")
    rows = list(csv.reader((tmp_path / "db.csv").open()))
    assert rows[0] == ["db_id", "n_triples", "db_rank_ub"] and len(rows) == 51


def test_vo_qk_single_cell(tmp_path):
    g = ex.GridConfig(cells=((1, 1),), n_seeds=1, n_databases=1, db=RandomDBConfig(4, 3, 3, 6),
                      train=TrainConfig(max_epochs=20))
    grid = ex.vo_qk_grid(g)
    assert list(grid) == [(1, 1)] and 0.0 <= grid[(1, 1)] <= 1.0
    assert ex.vo_qk_grid(g) == grid
    ex.write_grid_csv(grid, tmp_path / "g.csv")
    rows = list(csv.reader((tmp_path / "g.csv").open()))
    assert rows[0] == ["d_vo", "d_qk", "mean_acc"] and len(rows) == 2


def test_cli_end_to_end(tmp_path, capsys):
    d = tmp_path
    assert main(["gen-db", "--n-k", "4", "--n-q", "3", "--n-v", "3", "--n-triples", "7", "--out", str(d / "db.txt")]) == 0
    assert len(parse_triples((d / "db.txt").read_text())) == 7
    assert main(["bounds", str(d / "db.txt"), "--d-model", "4", "--heads", "2", "--d-vo", "2"]) == 0
    assert "db rank upper bound" in capsys.readouterr().out
    assert main(["train", str(d / "db.txt"), "--epochs", "20", "--d-model", "3", "--d-vo", "2", "--d-qk", "2",
                 "--out", str(d / "m.json"), "--history", str(d / "h.csv")]) == 0
    assert (d / "m.json").exists() and (d / "h.csv").read_text().startswith("epoch,loss")
    cfg = d / "sweep.toml"
    cfg.write_text("n_databases = 3\nn_layers = 3\nn_pairs = 3\nn_k = [3, 5]\nn_q = [2, 3]\nn_v = [2, 3]\n")
    assert main(["gen-corpus", "--config", str(cfg), "--epochs", "10", "--out", str(d / "corpus")]) == 0
    assert main(["sweep", str(d / "corpus"), "--out", str(d / "r.csv")]) == 0
    assert len((d / "r.csv").read_text().splitlines()) == 4
    assert main(["heatmap", str(d / "r.csv"), "--column", "acc_095", "--out", str(d / "h.svg")]) == 0
    assert (d / "h.svg").read_text().count("<rect") >= 1
    assert main(["scatter", str(d / "corpus"), "--out", str(d / "sc")]) == 0
    assert (d / "sc_db.csv").exists() and (d / "sc_layer.csv").exists()
    assert main(["rank-demo", "--n", "6", "--r", "2", "--out", str(d / "rank.csv")]) == 0
    assert "argmax" in (d / "rank.csv").read_text()
    assert main(["vo-qk-grid", "--d-model", "1", "--heads", "1", "--seeds", "1", "--databases", "1",
                 "--epochs", "5", "--out", str(d / "grid.csv")]) == 0
    assert len((d / "grid.csv").read_text().splitlines()) == 2


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
