"""Tests for CSV rendering and run manifests."""

import json

from linalg import Regime
from output_writer import (CSV_COLUMNS, RunManifest, format_float, manifest_path, write_manifest,
                           write_sweep_csv)
from sweep_processor import SweepMethod, SweepRecord
from theory import TheoryResult


def _record(value, regime, theory, **terms):
    return SweepRecord(
        variable="p2", value=value, regime=regime,
        empirical_mean=0.25, empirical_se=0.0125,
        transfer_mean=0.0, transfer_se=0.0,
        term_means=terms, term_ses={name: 0.0 for name in terms},
        theory=theory, replicates=10,
    )


def test_format_float():
    assert format_float(None) == ""
    assert format_float(5) == "5"
    assert format_float(1 / 3) == "0.333333333333"
    assert format_float(1e-20) == "1e-20"


def test_csv_layout(tmp_path):
    records = [
        _record(5.0, Regime.UNDERPARAMETERIZED, TheoryResult.exact(0.2, Regime.UNDERPARAMETERIZED),
                common_error=0.1, specific_error=0.15),
        _record(50.0, Regime.THRESHOLD, None, common_error=0.1, specific_error=3.0),
        _record(80.0, Regime.OVERPARAMETERIZED,
                TheoryResult.bounds(0.1, 0.4, Regime.OVERPARAMETERIZED, b1_sq=0.5),
                common_error=0.2, specific_error=0.05),
    ]
    path = write_sweep_csv(records, tmp_path / "out" / "sweep.csv", SweepMethod.OPTION_A, ["b1_sq"])
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode("utf-8").splitlines()

    assert lines[0].split(",") == list(CSV_COLUMNS) + ["b1_sq"]
    assert lines[1] == "p2,5,Underparameterized,0.25,0.0125,Exact,0.2,,,0.1,0.15,"
    assert lines[2] == "p2,50,Threshold,0.25,0.0125,,,,,0.1,3,"
    assert lines[3] == "p2,80,Overparameterized,0.25,0.0125,Bounds,,0.1,0.4,0.2,0.05,0.5"


def test_term_columns_follow_the_method(tmp_path):
    record = _record(100.0, Regime.OVERPARAMETERIZED, None, lco_noiseless=0.7, lco_noise=0.01)
    path = write_sweep_csv([record], tmp_path / "te.csv", SweepMethod.TRANSFER_ERROR)
    row = path.read_text(encoding="utf-8").splitlines()[1].split(",")
    assert row[-2:] == ["0.7", "0.01"]


def test_manifest_sits_next_to_its_output(tmp_path):
    output = tmp_path / "fig1a_A.csv"
    path = write_manifest(RunManifest(command="figure fig1a", config={"learner": {"p": 5}}, master_seed=3,
                                      outputs=[output.name]), manifest_path(output))
    assert path.name == "fig1a_A.manifest.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["master_seed"] == 3
    assert data["config"] == {"learner": {"p": 5}}
    assert data["tool_version"] == "1.0.0"
    assert list(data) == sorted(data)
