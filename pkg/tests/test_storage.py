import json
import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose
from app.database.storage import storage
from app.models.schemas import ExperimentConfig, SolverConfig
from app.services.exceptions import InvalidSystem
from app.services.experiments import ExperimentReport, run_experiment
from app.services.mdp_sim import random_features, random_mrp
from app.services.total_projections import solve


def test_system_file_round_trip(tmp_path, random_system_factory):
    store = storage(str(tmp_path))
    sys = random_system_factory(6, 3, seed=1)
    path = store.write_system(sys, "system.csv")
    assert list(pd.read_csv(path).columns) == ["phi_0", "phi_1", "phi_2", "v", "d"]
    loaded = store.read_system("system.csv")
    assert_allclose(loaded.Phi, sys.Phi)
    assert_allclose(loaded.V, sys.V)
    assert_allclose(loaded.d, sys.d)


def test_system_file_without_weights(tmp_path):
    (tmp_path / "toy.csv").write_text("phi_0,v\n2,1\n1,2\n")
    sys = storage(str(tmp_path)).read_system(str(tmp_path / "toy.csv"))
    assert_allclose(sys.d, [0.5, 0.5])


def test_system_file_missing_targets(tmp_path):
    (tmp_path / "bad.csv").write_text("phi_0,phi_1\n1,2\n")
    with pytest.raises(InvalidSystem):
        storage(str(tmp_path)).read_system("bad.csv")
    with pytest.raises(InvalidSystem):
        storage(str(tmp_path)).read_system("missing.csv")


def test_process_files(tmp_path, rng):
    store = storage(str(tmp_path))
    mrp, features = random_mrp(4, 0.7, rng), random_features(4, 2, rng)
    paths = store.write_mrp(mrp, features, "chain", seed=11)
    assert [p.rsplit("_", 1)[1] for p in paths] == ["P.csv", "R.csv", "Phi.csv", "meta.json"]
    loaded, loaded_features, meta = store.read_mrp("chain")
    assert meta == {"m": 4, "n": 2, "gamma": 0.7, "seed": 11}
    assert_allclose(loaded.P, mrp.P)
    assert_allclose(loaded.R, mrp.R)
    assert_allclose(loaded_features.Phi, features.Phi)


def test_trace_file(tmp_path, toy_system):
    _, trace = solve(toy_system, SolverConfig(max_iters=10))
    path = storage(str(tmp_path)).write_trace(trace, "trace.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["k", "err", "g", "theta", "alpha", "skipped"]
    assert list(frame["k"]) == list(range(1, 11))


def test_report_files_are_versioned_and_reproducible(tmp_path):
    cfg = ExperimentConfig.for_experiment("steps", m=30, n=3, iterations=80, seed=3)
    first = storage(str(tmp_path / "a")).write_report(run_experiment(cfg))
    second = storage(str(tmp_path / "b")).write_report(run_experiment(cfg))
    assert [p.rsplit("/", 1)[1] for p in first] == ["steps_traces.csv", "steps_summary.csv", "steps.json"]
    for a, b in zip(first, second):
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()
    assert (pd.read_csv(first[0])["schema_version"] == 1).all()
    with open(first[-1]) as f:
        meta = json.load(f)
    assert meta["config"]["seed"] == 3
    assert len(meta["config_hash"]) == 64
    assert "wall_time" not in meta


def test_report_schema_mismatch(tmp_path):
    report = ExperimentReport(name="steps", config={}, config_hash="0" * 64)
    report.tables["summary"] = pd.DataFrame({"variant": ["plain"], "final_err": [0.0]})
    with pytest.raises(InvalidSystem):
        storage(str(tmp_path)).write_report(report)


def test_report_bounds_are_written(tmp_path):
    cfg = ExperimentConfig.for_experiment("outlier", repetitions=5)
    paths = storage(str(tmp_path)).write_report(run_experiment(cfg))
    with open(paths[-1]) as f:
        meta = json.load(f)
    assert meta["bounds"][0]["kind"] == "normalized"
    assert np.isfinite(meta["bounds"][0]["lhs"])


def test_unknown_table_format(tmp_path):
    with pytest.raises(InvalidSystem):
        storage(str(tmp_path), fmt="parquet")
