import csv
import io
import json

import numpy as np
import pytest

from collabls import harness
from collabls.data_gen import synth_covariance
from collabls.errors import ConfigError
from collabls.model_core import ModelSpec, ViewMask
from collabls.rng import RngSeed
from collabls.theory import TheoryContext, c_gaussian


def _small_config(**overrides):
    cfg = {
        "model": {"kind": "synthetic", "d": 5, "spikes": 1, "spike_factor": 4.0, "noise_var": 1.0},
        "masks": {"kind": "explicit", "views": [[0, 1, 2], [2, 3, 4], [0, 4], [0, 1, 2, 3, 4]]},
        "methods": [
            "collab",
            "naive-collab",
            "optimized-naive-collab",
            "imputation",
            {"name": "rw-imputation", "alpha": "plugin"},
            "local-imputation",
            {"name": "collab-general", "n_mc": 5000},
            {"name": "local-ols", "agent": 3},
        ],
        "n_grid": [40, 120],
        "trials": 6,
        "seed": 3,
    }
    cfg.update(overrides)
    return cfg


def test_presets_shape():
    syn = harness.build_experiment(harness.ExperimentConfig.from_dict({"preset": "paper-synthetic"}))
    assert syn.m == 30 and syn.d == 30
    assert sorted(mk.d_i for mk in syn.masks) == [15] * 20 + [20] * 10
    assert syn.config.trials == 20
    ev = np.linalg.eigvalsh(syn.sigma)
    assert (ev > 1).sum() <= 3
    census = harness.build_experiment(harness.ExperimentConfig.from_dict({"preset": "paper-census-shape"}))
    assert [mk.d_i for mk in census.masks] == [37, 36, 35, 30, 27]
    assert census.config.trials == 80


def test_noiseless_full_observation_local_ols():
    cfg = {
        "model": {"kind": "synthetic", "d": 3, "noise_var": 0.0},
        "masks": {"kind": "explicit", "views": [[0, 1, 2]]},
        "methods": ["local-ols"],
        "n_grid": [10],
        "trials": 1,
    }
    (rep,) = harness.run_experiment(cfg)
    assert rep.error is None
    assert 0 <= rep.full_feature_risk <= 1e-12


def test_all_methods_run_and_share_data():
    reports = harness.run_experiment(_small_config())
    assert all(r.error is None for r in reports), [r.error for r in reports if r.error]
    assert all(r.full_feature_risk >= 0 for r in reports)
    exp = harness.build_experiment(harness.ExperimentConfig.from_dict(_small_config()))
    # missing-feature risk never drops below the irreducible part
    floor = TheoryContext(exp.model, exp.masks).irreducible
    for r in reports:
        assert all(v >= f - 1e-12 for v, f in zip(r.missing_feature_risks, floor))
    # imputation and local-imputation ship the documented counts
    by = {(r.method, r.n): r for r in reports if r.trial == 0}
    assert by[("imputation", 40)].reals_sent == [40 * 4, 40 * 4, 40 * 3, 40 * 6]
    assert by[("collab", 40)].reals_sent == by[("collab", 120)].reals_sent == [13, 13, 7, 31]


def test_deterministic_and_thread_invariant(tmp_path):
    outs = []
    for threads in (1, 3, 1):
        reps = harness.run_experiment(_small_config(), threads=threads)
        summary = harness.summarize_trials(reps, 0.95)
        path = tmp_path / f"r{threads}_{len(outs)}.json"
        harness.emit_report(summary, "json", path, harness.ExperimentConfig.from_dict(_small_config()).to_dict())
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_different_seed_changes_results():
    a = harness.run_experiment(_small_config(methods=["collab"], trials=2))
    b = harness.run_experiment(_small_config(methods=["collab"], trials=2, seed=4))
    assert a[0].full_feature_risk != b[0].full_feature_risk


def test_method_failure_recorded():
    cfg = _small_config(masks={"kind": "explicit", "views": [[0, 1], [1, 2]]}, methods=["collab", "naive-collab"])
    reps = harness.run_experiment(cfg)
    assert all(r.error and "UnidentifiableModel" in r.error for r in reps if r.method == "collab")
    assert all(r.error is None for r in reps if r.method == "naive-collab")
    rows = harness.summarize_trials(reps)
    collab = [row for row in rows if row["method"] == "collab"]
    assert all(row["trials"] == 0 and row["mean_risk"] is None for row in collab)


def _fake(method, risks, n=10):
    return [harness.TrialReport(method, n, t, r, [r], [3], [2]) for t, r in enumerate(risks)]


def test_summary_edge_cases():
    (row,) = harness.summarize_trials(_fake("a", [0.5] * 5))
    assert row["ci_low"] == row["ci_high"] == row["mean_risk"] == 0.5
    (row,) = harness.summarize_trials(_fake("a", [0.7]))
    assert row["mean_risk"] == 0.7 and row["ci_low"] is None and row["ci_high"] is None
    rows = harness.summarize_trials(_fake("a", [0.1, 0.4, 0.2]) + _fake("b", [0.1, 0.4, 0.2]))
    assert {k: v for k, v in rows[0].items() if k != "method"} == {k: v for k, v in rows[1].items() if k != "method"}
    (row,) = harness.summarize_trials(_fake("a", [1.0, 2.0, 3.0]), confidence=0.9)
    # Student-t with two degrees of freedom at 90%: 2.919986
    assert row["ci_high"] - row["mean_risk"] == pytest.approx(2.919986 * 1.0 / np.sqrt(3), rel=1e-6)
    assert row["reals_sent_mean"] == 3 and row["reals_received_mean"] == 2
    (row,) = harness.summarize_trials(_fake("a", [1.0, 3.0]), metric={"agent": 0})
    assert row["mean_risk"] == 2.0


def test_reports(tmp_path):
    assert harness.report_text([], "csv").strip() == ",".join(harness.REPORT_COLUMNS)
    rows = harness.summarize_trials(_fake("a", [0.1, 0.4, 0.2]) + _fake("b", [0.3]))
    text = harness.report_text(rows, "json", {"seed": 1})
    doc = json.loads(text)
    assert doc["records"] == rows and doc["config"] == {"seed": 1}
    parsed = list(csv.DictReader(io.StringIO(harness.report_text(rows, "csv"))))
    assert parsed[1]["ci_low"] == "" and parsed[0]["method"] == "a"
    with pytest.raises(OSError):
        harness.emit_report(rows, "csv", tmp_path / "missing" / "x.csv")
    with pytest.raises(ConfigError):
        harness.report_text(rows, "xml")


def test_ci_covers_theoretical_risk():
    sigma = synth_covariance(4, 1, 5.0, RngSeed(11))
    theta = [1.0, -0.5, 0.8, 0.3]
    views = [[0, 1, 2, 3], [0, 1], [2, 3], [1, 2]]
    n = 5000
    cfg = {
        "model": {"kind": "synthetic", "sigma": sigma.tolist(), "theta": theta, "noise_var": 1.0},
        "masks": {"kind": "explicit", "views": views},
        "methods": ["collab"],
        "n_grid": [n],
        "trials": 2000,
        "seed": 17,
    }
    (row,) = harness.summarize_trials(harness.run_experiment(cfg, threads=4), 0.95)
    ctx = TheoryContext(ModelSpec(sigma, theta, 1.0), [ViewMask(v, 4) for v in views])
    target = np.trace(sigma @ c_gaussian(ctx)) / n
    assert row["ci_low"] <= target <= row["ci_high"]


@pytest.mark.parametrize(
    "raw",
    [
        {"preset": "nope"},
        {"preset": "paper-synthetic", "bogus": 1},
        {"preset": "paper-synthetic", "trials": 0},
        {"preset": "paper-synthetic", "n_grid": []},
        {"preset": "paper-synthetic", "confidence": 1.0},
        {"preset": "paper-synthetic", "methods": ["magic"]},
        {"preset": "paper-synthetic", "methods": []},
        {"preset": "paper-synthetic", "methods": ["collab", "collab"]},
        {"preset": "paper-synthetic", "metric": "partial"},
        {"model": {"kind": "synthetic", "d": 3}, "masks": {"kind": "explicit", "views": [[0]]}, "methods": ["collab"]},
    ],
)
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        harness.ExperimentConfig.from_dict(raw)


@pytest.mark.parametrize(
    "masks",
    [{"kind": "weird"}, {"kind": "explicit", "views": [[0, 9]]}, {"kind": "mcar", "m": 3}],
)
def test_mask_errors(masks):
    cfg = harness.ExperimentConfig.from_dict(_small_config(masks=masks))
    with pytest.raises(ConfigError):
        harness.build_experiment(cfg)


def test_mcar_and_nested_masks():
    exp = harness.build_experiment(harness.ExperimentConfig.from_dict(
        _small_config(masks={"kind": "mcar", "m": 6, "p": 0.3})))
    assert exp.m == 6
    exp = harness.build_experiment(harness.ExperimentConfig.from_dict(
        _small_config(masks={"kind": "nested_counts", "counts": [5, 3]})))
    assert [mk.observed for mk in exp.masks] == [(0, 1, 2, 3, 4), (2, 3, 4)]


def _write_table(path, rng):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "age", "hours", "sex", "income"])
        for k in range(600):
            state = ["A", "B", "C"][k % 3]
            age, hours = rng.uniform(18, 70), rng.uniform(10, 60)
            sex = "f" if rng.random() < 0.5 else "m"
            inc = 0.5 * age + 0.8 * hours + (3 if sex == "f" else 0) + rng.standard_normal()
            w.writerow([state, f"{age:.3f}", f"{hours:.3f}", sex, f"{inc:.3f}"])


def test_csv_model_run(tmp_path):
    path = tmp_path / "table.csv"
    _write_table(path, np.random.default_rng(0))
    cfg = {
        "model": {
            "kind": "csv",
            "path": str(path),
            "schema": {"age": "numeric", "hours": "numeric", "sex": "categorical", "income": "target"},
            "agent_column": "state",
        },
        "masks": {
            "kind": "hidden_columns",
            "agents": [{"value": "A", "hidden": ["sex"]}, {"value": "B", "hidden": ["hours"]}, {"value": "C"}],
        },
        "methods": ["collab", "naive-collab", "imputation"],
        "n_grid": [100],
        "trials": 3,
        "metric": {"agent": 2},
    }
    # a full one-hot block is collinear once centered
    with pytest.raises(ConfigError, match="sex=f, sex=m"):
        harness.build_experiment(harness.ExperimentConfig.from_dict(cfg))
    cfg["model"]["schema"]["sex"] = {"role": "categorical", "drop_first": True}
    exp = harness.build_experiment(harness.ExperimentConfig.from_dict(cfg))
    assert exp.feature_names == ["age", "hours", "sex=m"]
    assert [mk.d_i for mk in exp.masks] == [2, 2, 3]
    assert exp.test_x.shape == (40, 3)
    reps = harness.run_experiment(cfg)
    assert all(r.error is None for r in reps)
    rows = harness.summarize_trials(reps, metric={"agent": 2})
    assert [r["method"] for r in rows] == ["collab", "naive-collab", "imputation"]
    too_big = dict(cfg, n_grid=[10_000])
    with pytest.raises(ConfigError):
        harness.run_experiment(too_big)
