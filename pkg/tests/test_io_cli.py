import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmcd import io
from bmcd.cf import FactorModel
from bmcd.cli import derive_seed, main, parse_c_range
from bmcd.config import ConfigError, RunConfig, parse_config
from bmcd.exceptions import InputError, StageDependencyError
from bmcd.mallows import PartitionTable
from bmcd.recommend import CalibrationTable, RecommendationList
from bmcd.sampler import ChainConfig, PosteriorSamples, run_chain

# --- round trips -------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_clicks_round_trip(tmp_path_factory, N, n, seed):
    W = np.random.default_rng(seed).random((N, n)) < 0.4
    p = tmp_path_factory.mktemp("c") / "clicks.csv"
    io.write_clicks(p, W)
    np.testing.assert_array_equal(io.read_clicks(p, W.shape), W)
    text = p.read_bytes()
    assert b"\r" not in text and text.startswith(b"user_id,item_id\n")


def test_truth_and_labels_round_trip(tmp_path):
    R = np.array([[2, 1, 3], [3, 2, 1]])
    io.write_truth(tmp_path / "t.csv", R)
    np.testing.assert_array_equal(io.read_truth(tmp_path / "t.csv"), R)
    io.write_labels(tmp_path / "l.csv", [0, 2])
    assert list(io.read_labels(tmp_path / "l.csv")) == [0, 2]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1, allow_subnormal=True), min_size=0, max_size=20))
def test_recommendations_round_trip(tmp_path_factory, scores):
    m = len(scores)
    recs = RecommendationList(np.arange(m) // 3, np.arange(m) % 3 + 1, np.arange(m) % 7,
                              np.array(scores, float), max(1, (m + 2) // 3), 3)
    p = tmp_path_factory.mktemp("r") / "recs.csv"
    io.write_recommendations(p, recs)
    assert io.read_recommendations(p).equals(recs)


def test_calibration_cutoff_round_trip(tmp_path):
    tab = CalibrationTable(np.array([0.1, 0.2]), np.array([0.11, 0.21]), np.array([0.105, 0.2049]),
                           np.array([0.0, 1 / 3]), np.array([4, 3]))
    io.write_calibration(tmp_path / "c.csv", tab)
    back = io.read_calibration(tmp_path / "c.csv")
    for f in ("bin_low", "bin_high", "mean_tpp", "hit_rate", "count"):
        np.testing.assert_array_equal(getattr(back, f), getattr(tab, f))
    rows = [(0.1, 10, 0.3), (0.4, 0, math.nan)]
    io.write_cutoff(tmp_path / "x.csv", rows)
    back = io.read_cutoff(tmp_path / "x.csv")
    assert back[0] == rows[0] and back[1][:2] == (0.4, 0) and math.isnan(back[1][2])
    assert "NA" in (tmp_path / "x.csv").read_text()


def test_partition_table_round_trip(tmp_path):
    for t in (PartitionTable.exact(5), PartitionTable.monte_carlo(6, mc_samples=5000, seed=1)):
        io.write_partition_table(tmp_path / "p.csv", t)
        back = io.read_partition_table(tmp_path / "p.csv")
        assert (back.n, back.method, back.mc_samples) == (t.n, t.method, t.mc_samples)
        np.testing.assert_array_equal(back.alpha_grid, t.alpha_grid)
        np.testing.assert_array_equal(back.log_z, t.log_z)


def test_factors_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = FactorModel(rng.standard_normal((4, 3)), rng.standard_normal((5, 3)), 10.0, 0.1)
    io.write_factors(tmp_path, m)
    back = io.read_factors(tmp_path)
    np.testing.assert_array_equal(back.U, m.U)
    np.testing.assert_array_equal(back.V, m.V)
    assert (back.beta, back.theta) == (10.0, 0.1)


def test_posterior_and_diagnostics_round_trip(tmp_path):
    W = np.eye(4, dtype=bool)
    S = run_chain(W, ChainConfig(n_clusters=2, iter_max=400, burn_in=200, thinning=20, seed=1))
    S.save(tmp_path / "post.npz")
    first = (tmp_path / "post.npz").read_bytes()
    S.save(tmp_path / "post.npz")
    assert (tmp_path / "post.npz").read_bytes() == first
    back = PosteriorSamples.load(tmp_path / "post.npz")
    for f in ("alphas", "rhos", "z", "rank_counts", "wcd", "log_post"):
        np.testing.assert_array_equal(getattr(back, f), getattr(S, f))
    assert back.stats == S.stats
    io.write_diagnostics(tmp_path / "d.csv", S)
    d = io.read_diagnostics(tmp_path / "d.csv")
    np.testing.assert_array_equal(d["alpha_1"], S.alphas[:, 1])
    np.testing.assert_array_equal(d["wcd"], S.wcd)


def test_metrics_json_null(tmp_path):
    io.write_metrics(tmp_path / "m.json", dict(accuracy=None, coverage=math.nan, n=0), tmp_path / "m.csv")
    assert io.read_metrics(tmp_path / "m.json") == dict(accuracy=None, coverage=None, n=0)
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "NA,NA,0"


def test_read_errors(tmp_path):
    with pytest.raises(StageDependencyError):
        io.read_clicks(tmp_path / "missing.csv")
    (tmp_path / "bad.csv").write_text("user,item\n0,1\n")
    with pytest.raises(InputError):
        io.read_clicks(tmp_path / "bad.csv")


# --- config ------------------------------------------------------------------


def test_parse_config_values():
    cfg = parse_config("""
        # comment
        run.seed = 7
        threads = 1
        sim.n_users = 40
        chain.iter_max = 2e4
        chain.burn_in = 1e4
        chain.leap_size = none
        cv.enabled = no
        eval.thresholds = 0.1, 0.2
    """)
    assert cfg.seed == 7 and cfg.sim.n_users == 40 and cfg.chain.iter_max == 20000
    assert cfg.chain.leap_size is None and cfg.cv.enabled is False
    assert cfg.eval.thresholds == (0.1, 0.2)
    assert cfg.popular_cutoff(20) == 8


@pytest.mark.parametrize("text,field", [
    ("sim.n_clusters = 0", "sim.n_clusters"),
    ("chain.bogus = 1", "chain.bogus"),
    ("nosuch.key = 1", "nosuch.key"),
    ("chain.iter_max = abc", "chain.iter_max"),
    ("chain.burn_in = 10\nchain.iter_max = 5", "chain.burn_in"),
])
def test_config_errors_name_field(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field


def test_output_root_env(monkeypatch):
    monkeypatch.setenv("BMCD_OUTPUT_ROOT", "/x/y")
    assert str(RunConfig().output_root()) == "/x/y"


def test_seed_helpers():
    assert derive_seed(1, "bmcd") == derive_seed(1, "bmcd")
    assert derive_seed(1, "bmcd") != derive_seed(1, "cf")
    assert parse_c_range("3") == [3]
    assert parse_c_range("2..5") == [2, 3, 4, 5]
    with pytest.raises(ConfigError):
        parse_c_range("5..2")


# --- command line ------------------------------------------------------------

TINY = """
seed = 5
sim.design = random
sim.n_users = 50
sim.n_items = 10
sim.n_clusters = 2
sim.click_rate = 2
chain.n_clusters = 2
chain.iter_max = 4000
chain.burn_in = 2000
chain.thinning = 20
select.iter_max = 1000
select.burn_in = 500
cv.folds = 2
eval.k = 3
split.k_removed = 1
split.min_retained = 1
"""


def run_pipeline(root, cfg_path):
    data = str(root / "data")
    steps = [
        ["simulate", "--out", data],
        ["select-clusters", "--data", data, "--method", "kmeans", "--c-range", "1..4"],
        ["select-clusters", "--data", data, "--method", "mwcd", "--c-range", "2..3"],
        ["fit-bmcd", "--data", data],
        ["fit-cf", "--data", data],
    ]
    for m in ("bmcd", "cf", "popular"):
        steps += [["recommend", "--data", data, "--method", m],
                  ["evaluate", "--data", data, "--method", m],
                  ["calibrate", "--data", data, "--method", m]]
    steps += [["split", "--data", data, "--out", str(root / "split")]]
    for s in steps:
        assert main(s + ["--config", str(cfg_path), "--threads", "1"]) == 0, s


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.cfg"
    cfg.write_text(TINY)
    roots = []
    for name in ("a", "b"):
        root = base / name
        run_pipeline(root, cfg)
        roots.append(root)
    return roots


def test_pipeline_outputs(pipeline_runs):
    data = pipeline_runs[0] / "data"
    for rel in ("clicks.csv", "truth.csv", "manifest.json", "select_kmeans.csv", "select_mwcd.csv",
                "bmcd/posterior.npz", "bmcd/diagnostics.csv", "bmcd/partition_table.csv",
                "cf/user_factors.csv", "cf/item_factors.csv", "cf/cv.csv",
                "bmcd/recommendations_k3.csv", "bmcd/metrics_k3.json", "bmcd/calibration_k3.csv",
                "bmcd/cutoff_k3.csv", "popular/metrics_k3.csv"):
        assert (data / rel).exists(), rel
    man = json.loads((data / "manifest.json").read_text())
    assert {"config_hash", "seed", "version", "stage"} <= set(man)
    m = io.read_metrics(data / "bmcd" / "metrics_k3.json")
    assert m["method"] == "bmcd" and 0 <= m["accuracy"] <= 1
    cut = io.read_cutoff(data / "bmcd" / "cutoff_k3.csv")
    assert [r[0] for r in cut] == pytest.approx([0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40])


def test_pipeline_byte_identical(pipeline_runs):
    a, b = (tree(r) for r in pipeline_runs)
    assert a.keys() == b.keys()
    different = [k for k in a if a[k] != b[k]]
    assert not different


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("sim.n_clusters = 0\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "sim.n_clusters" in capsys.readouterr().err
    assert main(["fit-bmcd", "--data", str(tmp_path / "nothing")]) == 3
    assert "missing input" in capsys.readouterr().err
    assert main(["select-clusters", "--data", str(tmp_path), "--c-range", "4..2"]) in (2, 3)


def test_evaluate_zero_recommendations_marks_undefined(pipeline_runs, tmp_path):
    import shutil

    data = tmp_path / "d"
    shutil.copytree(pipeline_runs[0] / "data", data)
    recs = io.read_recommendations(data / "bmcd" / "recommendations_k3.csv")
    io.write_recommendations(data / "bmcd" / "recommendations_k3.csv", recs.subset(np.zeros(len(recs), bool)))
    assert main(["evaluate", "--data", str(data), "--method", "bmcd", "--k", "3"]) == 0
    m = io.read_metrics(data / "bmcd" / "metrics_k3.json")
    assert m["n_recommendations"] == 0 and m["accuracy"] is None and m["coverage"] is None
