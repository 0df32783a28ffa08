import math
import os

import numpy as np
import pytest

from constrained_smc.ensemble_io import (
    EnsembleTable, atomic_write_text, config_hash, format_value, load_diagnostics, load_ensemble, load_metadata,
    read_table, save_diagnostics, save_ensemble, save_metadata,
)
from constrained_smc.sampler import IterationRecord


def random_table(rng, n=50):
    theta = rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-300, 300, size=(n, 3))
    ll = rng.normal(size=n)
    ll[0] = -math.inf
    rho = np.abs(rng.normal(size=n))
    rho[1] = math.inf
    derived = {"K3": rng.uniform(size=n), "S": np.full(n, math.nan)}
    return EnsembleTable(("a", "b", "c"), theta, ll, rho, derived)


def test_round_trip_is_exact(tmp_path):
    table = random_table(np.random.default_rng(0))
    path = save_ensemble(tmp_path / "ensemble.csv", table)
    back = load_ensemble(path, ("a", "b", "c"))
    np.testing.assert_array_equal(back.theta, table.theta)
    np.testing.assert_array_equal(back.log_likelihood, table.log_likelihood)
    np.testing.assert_array_equal(back.discrepancy, table.discrepancy)
    assert list(back.derived) == ["K3", "S"]
    np.testing.assert_array_equal(back.derived["K3"], table.derived["K3"])
    assert np.all(np.isnan(back.derived["S"]))
    # saving the loaded table again gives the same bytes
    again = save_ensemble(tmp_path / "again.csv", back)
    assert again.read_bytes() == path.read_bytes()


def test_load_rejects_wrong_columns(tmp_path):
    path = save_ensemble(tmp_path / "e.csv", random_table(np.random.default_rng(1), 5))
    with pytest.raises(ValueError):
        load_ensemble(path, ("a", "c", "b"))


def test_table_validation():
    with pytest.raises(ValueError):
        EnsembleTable(("a",), np.zeros((3, 2)), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        EnsembleTable(("a",), np.zeros((3, 1)), np.zeros(2), np.zeros(3))
    t = EnsembleTable(("a",), np.zeros((3, 1)), np.zeros(3), np.ones(3), {"x": [1, 2, 3]})
    assert t.n == 3 and t.header == ["a", "log_likelihood", "discrepancy", "x"]
    np.testing.assert_array_equal(t.column("x"), [1, 2, 3])


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(True) == "1"
    assert format_value(np.int64(7)) == "7"
    assert format_value(math.inf) == "inf"
    assert float(format_value(1 / 3)) == 1 / 3


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    atomic_write_text(target, "one")
    atomic_write_text(target, "two")
    assert target.read_text() == "two"
    assert os.listdir(target.parent) == ["f.txt"]


def test_read_table_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        read_table(empty)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ValueError):
        read_table(ragged)


def test_diagnostics_round_trip(tmp_path):
    recs = [IterationRecord(0, 0.0, math.inf, 100.0, 0, math.nan, math.inf, 0),
            IterationRecord(1, 0.5, 2.0, 80.0, 5, 0.3, 2.0, 25)]
    path = save_diagnostics(tmp_path / "d.csv", recs)
    d = load_diagnostics(path)
    np.testing.assert_array_equal(d["gamma"], [0.0, 0.5])
    assert d["epsilon"][0] == math.inf and math.isnan(d["acceptance_rate"][0])
    np.testing.assert_array_equal(d["mcmc_steps"], [0, 25])


def test_metadata_and_hash(tmp_path):
    meta = {"seed": 3, "eps": math.inf, "nested": {"x": (1, 2)}, "value": np.float64(0.5)}
    path = save_metadata(tmp_path / "m.json", meta)
    back = load_metadata(path)
    assert back["eps"] == "inf" and back["nested"]["x"] == [1, 2] and back["value"] == 0.5
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64
