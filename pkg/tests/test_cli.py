import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from layerlink import EmConfig
from layerlink.cli import DEFAULTS, OUTPUT_DIR_ENV, main
from layerlink.evaluation import whole_dataset_auc
from layerlink.interdependence import greedy_layer_selection
from layerlink.io import (parse_affinities, parse_edge_list, parse_mask, parse_membership,
                          parse_table, read_report)


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """A small correlated-partition benchmark written by the CLI."""
    d = tmp_path_factory.mktemp("bench")
    assert main(["generate", "--output-dir", str(d), "--n", "60", "--layers", "3", "--k", "3",
                 "--kmax", "12", "--p", "1.0", "--seed", "4"]) == 0
    return d


def _fit_args(net, out, *extra):
    return ["fit", "--input", str(net), "--output-dir", str(out), "--k", "3",
            "--restarts", "2", *extra]


# ---- generate ------------------------------------------------------------

def test_generate_benchmark_outputs(bench):
    g = parse_edge_list(bench / "network.txt")
    assert (g.n_nodes, g.n_layers, g.directed) == (60, 3, False)
    labels, truth = parse_membership(bench / "truth.txt")
    assert labels == list(g.labels)
    assert set(np.unique(truth)) <= {0.0, 1.0}
    header, rows = parse_table(bench / "partitions.tsv")
    assert header[0] == "node" and len(rows) == 60
    assert all(len(set(r[1:])) == 1 for r in rows)
    rep = read_report(bench / "generate_report.json")
    assert rep["layer_edge_counts"] == g.layer_edge_counts().tolist()
    assert rep["config"]["p"] == 1.0


def test_generate_preset_g1_counts(tmp_path):
    assert main(["generate", "--preset", "G1", "--output-dir", str(tmp_path), "--seed", "1"]) == 0
    g = parse_edge_list(tmp_path / "network.txt")
    assert g.directed and g.n_layers == 2
    assert np.all(np.abs(g.layer_edge_counts() - 1980) <= 4 * math.sqrt(1980))
    assert not (tmp_path / "partitions.tsv").exists()


def test_generate_deterministic(tmp_path):
    args = ["generate", "--output-dir", str(tmp_path), "--n", "40", "--layers", "2",
            "--kmax", "10", "--seed", "9"]
    main(args)
    first = _files(tmp_path)
    main(args)
    assert _files(tmp_path) == first


def test_generate_invalid_spec(tmp_path):
    assert main(["generate", "--output-dir", str(tmp_path), "--p", "2"]) == 1


# ---- fit ---------------------------------------------------------------

def test_fit_outputs_and_round_trip(bench, tmp_path):
    assert main(_fit_args(bench / "network.txt", tmp_path)) == 0
    labels, u = parse_membership(tmp_path / "u.txt")
    assert u.shape == (60, 3) and not (tmp_path / "v.txt").exists()
    rep = read_report(tmp_path / "fit_report.json")
    assert rep["converged"] and rep["config"]["resolved_mode"] == "undirected-full"
    assert len(rep["hard_assignment"]) == 60
    names, w = parse_affinities(tmp_path / "w.txt")
    assert w.shape == (3, 3, 3)
    np.testing.assert_allclose(w, w.transpose(0, 2, 1), atol=1e-9)
    rows = u.sum(axis=1)
    assert np.all((np.abs(rows - 1) < 1e-9) | (rows == 0))


def test_fit_diagonal_mode_writes_diagonal_w(tmp_path):
    main(["generate", "--preset", "G1", "--output-dir", str(tmp_path / "g")])
    out = tmp_path / "f"
    assert main(["fit", "--input", str(tmp_path / "g" / "network.txt"), "--output-dir", str(out),
                 "--k", "2", "--mode", "diagonal", "--restarts", "2"]) == 0
    _, w = parse_affinities(out / "w.txt")
    assert np.all(w[:, 0, 1] == 0) and np.all(w[:, 1, 0] == 0)
    assert (out / "v.txt").exists()
    assert read_report(out / "fit_report.json")["config"]["resolved_mode"] == "directed-diagonal"


def test_fit_byte_identical(bench, tmp_path):
    args = _fit_args(bench / "network.txt", tmp_path)
    main(args)
    first = _files(tmp_path)
    main(args)
    assert _files(tmp_path) == first


def test_fit_not_converged_exit_code(bench, tmp_path):
    code = main(_fit_args(bench / "network.txt", tmp_path, "--max-iter", "2"))
    assert code == 3
    assert (tmp_path / "u.txt").exists()
    assert read_report(tmp_path / "fit_report.json")["converged"] is False


def test_fit_usage_errors(bench, tmp_path):
    assert main(["fit", "--input", str(bench / "network.txt"), "--output-dir", str(tmp_path)]) == 1
    assert main(["fit", "--k", "2", "--output-dir", str(tmp_path)]) == 1
    assert main(["fit", "--input", str(tmp_path / "missing.txt"), "--k", "2"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_parse_error_exit_code(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("a b -1\n")
    assert main(["fit", "--input", str(bad), "--k", "2", "--output-dir", str(tmp_path)]) == 2


# ---- configuration ------------------------------------------------------

def test_config_file_and_flag_precedence(bench, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2, "restarts": 1, "max-iter": 50, "seed": 3}))
    out = tmp_path / "o"
    main(["fit", "--input", str(bench / "network.txt"), "--output-dir", str(out),
          "--config", str(cfg), "--seed", "5"])
    rep = read_report(out / "fit_report.json")["config"]
    assert (rep["k"], rep["restarts"], rep["max_iter"], rep["seed"]) == (2, 1, 50, 5)
    assert rep["tol"] == DEFAULTS["tol"]
    _, u = parse_membership(out / "u.txt")
    assert u.shape[1] == 2


def test_config_errors(bench, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": 1}))
    base = ["fit", "--input", str(bench / "network.txt"), "--k", "2", "--config", str(cfg),
            "--output-dir", str(tmp_path)]
    assert main(base) == 1
    cfg.write_text("{not json")
    assert main(base) == 2


def test_output_dir_from_environment(bench, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["fit", "--input", str(bench / "network.txt"), "--k", "2", "--restarts", "1"]) == 0
    assert (tmp_path / "env" / "u.txt").exists()
    assert main(["fit", "--input", str(bench / "network.txt"), "--k", "2", "--restarts", "1",
                 "--output-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "u.txt").exists()


# ---- predict -------------------------------------------------------------

def test_predict_report(bench, tmp_path):
    mask_path = tmp_path / "mask.tsv"
    assert main(["predict", "--input", str(bench / "network.txt"), "--output-dir", str(tmp_path),
                 "--k", "3", "--restarts", "2", "--target-layer", "1",
                 "--mask-out", str(mask_path)]) == 0
    rep = read_report(tmp_path / "predict_report.json")
    assert rep["mean_auc"] == float(np.mean(rep["fold_aucs"]))
    assert len(rep["fold_aucs"]) == 5
    assert rep["mask_digest"] == parse_mask(mask_path).digest()
    header, rows = parse_table(tmp_path / "scores.tsv")
    assert header == ["fold", "layer", "i", "j", "score", "link"]
    assert len(rows) == 60 * 59 // 2
    # the saved mask reproduces the run
    out2 = tmp_path / "again"
    main(["predict", "--input", str(bench / "network.txt"), "--output-dir", str(out2),
          "--k", "3", "--restarts", "2", "--target-layer", "1", "--mask-in", str(mask_path)])
    assert read_report(out2 / "predict_report.json")["fold_aucs"] == rep["fold_aucs"]


def test_predict_usage_and_undefined(bench, tmp_path):
    net = str(bench / "network.txt")
    assert main(["predict", "--input", net, "--k", "2", "--output-dir", str(tmp_path)]) == 1
    assert main(["predict", "--input", net, "--k", "2", "--target-layer", "7",
                 "--output-dir", str(tmp_path)]) == 1
    assert main(["predict", "--input", net, "--k", "2", "--target-layer", "0",
                 "--training-layers", "1,2", "--output-dir", str(tmp_path)]) == 1
    empty = tmp_path / "empty.txt"
    empty.write_text("# directed=false layers=2\na b 1 0\nb c 1 0\nc d 1 0\n")
    assert main(["predict", "--input", str(empty), "--k", "1", "--target-layer", "1",
                 "--output-dir", str(tmp_path)]) == 4


def test_predict_whole_dataset_matches_library(tmp_path):
    main(["generate", "--preset", "G1", "--output-dir", str(tmp_path)])
    assert main(["predict", "--whole-dataset", "--input", str(tmp_path / "network.txt"),
                 "--k", "2", "--output-dir", str(tmp_path)]) == 0
    rep = read_report(tmp_path / "predict_report.json")
    g = parse_edge_list(tmp_path / "network.txt")
    expect = whole_dataset_auc(g, EmConfig(2, "directed-full", n_restarts=5, seed=0))[0]
    assert rep["auc"] == expect


# ---- interdep and cluster-layers ------------------------------------------

def test_interdep_table(bench, tmp_path):
    assert main(["interdep", "--input", str(bench / "network.txt"), "--output-dir", str(tmp_path),
                 "--k", "3", "--restarts", "2", "--target-layer", "0", "--max-layers", "2"]) == 0
    header, rows = parse_table(tmp_path / "interdep.tsv")
    assert header == ["step", "layers", "mean_auc", "std_auc"]
    assert len(rows) == 2 and rows[0][1] == "0"
    g = parse_edge_list(bench / "network.txt")
    lib = greedy_layer_selection(g, 0, 2, EmConfig(3, "undirected-full", n_restarts=2, seed=0), 0)
    assert [float(r[2]) for r in rows] == [t.mean for t in lib.trajectory]


def test_interdep_topdown(bench, tmp_path):
    assert main(["interdep", "--input", str(bench / "network.txt"), "--output-dir", str(tmp_path),
                 "--k", "3", "--restarts", "1", "--target-layer", "2",
                 "--direction", "topdown", "--min-layers", "2"]) == 0
    rep = read_report(tmp_path / "interdep_report.json")
    assert rep["trajectory"][0]["layers"] == ["0", "1", "2"]
    assert "2" not in rep["selection_order"] and len(rep["trajectory"]) == 2


def test_cluster_layers_from_w_file(tmp_path):
    w = tmp_path / "w.txt"
    w.write_text("# layer a\n1 0\n0 1\n# layer b\n0 2\n2 0\n# layer c\n1 0\n0 1\n")
    assert main(["cluster-layers", "--w-file", str(w), "--n-clusters", "2",
                 "--output-dir", str(tmp_path)]) == 0
    header, rows = parse_table(tmp_path / "clusters.tsv")
    assert header == ["layer", "vector", "cluster", "pca_x", "pca_y"] and len(rows) == 3
    assert rows[0][2] == rows[2][2] != rows[1][2]
    pca = np.array([[float(r[3]), float(r[4])] for r in rows])
    np.testing.assert_allclose(pca.mean(axis=0), 0, atol=1e-9)
    assert read_report(tmp_path / "clusters_report.json")["inertia"] == 0.0
    assert main(["cluster-layers", "--w-file", str(w), "--n-clusters", "4",
                 "--output-dir", str(tmp_path)]) == 1
    assert main(["cluster-layers", "--w-file", str(w), "--output-dir", str(tmp_path)]) == 1


def test_cluster_layers_inline_fit(bench, tmp_path):
    assert main(["cluster-layers", "--input", str(bench / "network.txt"), "--k", "2",
                 "--restarts", "1", "--n-clusters", "2", "--output-dir", str(tmp_path)]) == 0
    _, rows = parse_table(tmp_path / "clusters.tsv")
    assert len(rows) == 3 and len(rows[0][1].split(",")) == 4


@pytest.mark.skipif(shutil.which("layerlink") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["layerlink", "generate", "--preset", "G3", "--output-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert parse_edge_list(tmp_path / "network.txt").n_layers == 4
    res = subprocess.run([sys.executable, "-m", "layerlink.cli", "fit"], capture_output=True)
    assert res.returncode == 1
