"""File ingestion, report emission, CLI exit codes and round trips."""

import json

import numpy as np
import pytest

import genbal as gb
from genbal.cli import main
from genbal.errors import ValidationError
from genbal.fileio import (
    ColumnSchema,
    emit_report,
    load_basis_json,
    load_scenarios_json,
    load_source_csv,
    load_target_summary,
    write_source_csv,
)
from genbal.mathutil import sigmoid

SPEC = gb.BasisSpec.from_names(["const", "x1", "x2", "x3"], ["x4", "x5"])


def _write_inputs(tmp_path, n=250, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (n, 5))
    pi = sigmoid(0.7 * X[:, 1] + 0.5 * X[:, 2])
    A = (rng.random(n) < pi).astype(int)
    Y = 0.5 * X[:, 0] + (A - 0.5) * (X[:, 0] - 0.6 * X[:, 1]) + rng.standard_normal(n)
    sample = gb.SourceSample(X, A, Y)
    schema = ColumnSchema("a", "y", ("x1", "x2", "x3", "x4", "x5"))
    source = tmp_path / "source.csv"
    write_source_csv(source, sample, schema)
    basis = tmp_path / "basis.json"
    basis.write_text(json.dumps({"h": ["const", "x1", "x2", "x3"], "g": ["x4", "x5"]}))
    target = tmp_path / "target.json"
    target.write_text(
        json.dumps({"const": 1, "x1": 0.12, "x2": -0.03, "x3": 0.05, "n_t": 460})
    )
    return sample, schema, source, basis, target


def test_source_csv_round_trip_identity(tmp_path):
    sample, schema, source, _, _ = _write_inputs(tmp_path)
    loaded, meta = load_source_csv(source, schema)
    np.testing.assert_array_equal(loaded.X, sample.X)
    np.testing.assert_array_equal(loaded.A, sample.A)
    np.testing.assert_array_equal(loaded.Y, sample.Y)
    assert meta["columns"] == list(schema.covariates)


def test_source_csv_three_rows(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("a,y,x1\n1,0.5,2.0\n0,1.5,-1.0\n1,2.5,0.0\n")
    sample, _ = load_source_csv(path, ColumnSchema("a", "y", ("x1",)))
    assert sample.n_s == 3
    np.testing.assert_array_equal(sample.A, [1, 0, 1])


def test_source_csv_rejects_nonbinary_treatment(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y,x1\n1,0.5,2.0\n2,1.5,-1.0\n")
    with pytest.raises(ValidationError) as err:
        load_source_csv(path, ColumnSchema("a", "y", ("x1",)))
    assert err.value.code == "NON_BINARY_TREATMENT"
    assert "line 3" in str(err.value)


def test_source_csv_rejects_empty_outcome(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y,x1\n1,0.5,2.0\n0,,-1.0\n")
    with pytest.raises(ValidationError) as err:
        load_source_csv(path, ColumnSchema("a", "y", ("x1",)))
    assert err.value.code == "NON_FINITE_CELL"
    assert "line 3" in str(err.value) and "'y'" in str(err.value)


def test_source_csv_rejects_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,0.5\n0,1.5\n")
    with pytest.raises(ValidationError) as err:
        load_source_csv(path, ColumnSchema("a", "y", ("x1",)))
    assert err.value.code == "MISSING_COLUMN"


def test_source_csv_categorical_encoding(tmp_path):
    path = tmp_path / "cat.csv"
    path.write_text("a,y,site\n1,0.5,boston\n0,1.5,chicago\n1,2.5,boston\n0,0.1,ann-arbor\n")
    sample, meta = load_source_csv(
        path, ColumnSchema("a", "y", ("site",), categorical=("site",))
    )
    assert meta["category_codes"]["site"] == {"ann-arbor": 0.0, "boston": 1.0, "chicago": 2.0}
    np.testing.assert_array_equal(sample.X[:, 0], [1.0, 2.0, 1.0, 0.0])


def test_target_summary_alignment_and_errors(tmp_path):
    good = tmp_path / "t.json"
    good.write_text(json.dumps({"x2": -0.03, "const": 1, "x3": 0.05, "x1": 0.12, "n_t": 460}))
    values, n_t = load_target_summary(good, SPEC)
    np.testing.assert_array_equal(values, [1.0, 0.12, -0.03, 0.05])
    assert n_t == 460

    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"const": 1, "x1": 0.1, "x3": 0.0}))
    with pytest.raises(ValidationError) as err:
        load_target_summary(missing, SPEC)
    assert err.value.code == "MISSING_TERM" and "x2" in str(err.value)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"const": 1, "x1": 0.1, "x2": 0.0, "x3": 0.0, "x9": 1.0}))
    with pytest.raises(ValidationError) as err:
        load_target_summary(unknown, SPEC)
    assert err.value.code == "UNKNOWN_TERM" and "x9" in str(err.value)

    bad_const = tmp_path / "badconst.json"
    bad_const.write_text(json.dumps({"const": 0.9, "x1": 0.1, "x2": 0.0, "x3": 0.0}))
    with pytest.raises(ValidationError) as err:
        load_target_summary(bad_const, SPEC)
    assert err.value.code == "BAD_CONSTANT"


def test_basis_json_loader(tmp_path):
    path = tmp_path / "b.json"
    path.write_text(json.dumps({"h": ["const", "x1", "x2^2"], "g": ["log1p(x3)"]}))
    spec = load_basis_json(path)
    assert spec.h_names == ("const", "x1", "x2^2")
    assert spec.g_names == ("log1p(x3)",)


def test_scenarios_loader_builtin_grid(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"builtin_grid": {"replicates": 3, "seed": 2}}))
    configs = load_scenarios_json(path)
    assert len(configs) == 12 and configs[0].replicates == 3


def test_emit_report_empty_rejected():
    with pytest.raises(ValidationError):
        emit_report([])


def test_emit_report_estimate_row(tmp_path):
    report = gb.EstimateReport("extended", 0.25, 0.5, 4.0, 80.0, 90.0, {})
    text = emit_report([report], fmt="human")
    assert "extended" in text and "0.250000" in text
    out = tmp_path / "r.json"
    emit_report([report], fmt="json", path=out)
    payload = json.loads(out.read_text())
    assert payload["schema"] == "genbal/report/1"
    assert payload["estimates"][0]["tau_hat"] == 0.25


def test_emit_report_deterministic_bytes(tmp_path):
    config = gb.builtin_scenario("P1", "T1", "M1", n=300, replicates=6, seed=12)
    result = gb.run_grid([config], ["ebal"])
    a = emit_report(result, fmt="json")
    b = emit_report(result, fmt="json")
    assert a == b
    c = emit_report(result, fmt="csv", scale_100=True)
    assert "P1-T1-M1,ebal" in c


def test_cli_estimate_and_exit_codes(tmp_path, capsys):
    _, _, source, basis, target = _write_inputs(tmp_path)

    out = tmp_path / "est.json"
    code = main([
        "estimate", "--source", str(source), "--basis", str(basis),
        "--target-summary", str(target), "--methods", "ebal,extended",
        "--format", "json", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert {e["method"] for e in payload["estimates"]} == {"ebal", "extended"}

    # validation error: malformed target summary
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"const": 1, "x1": 0.1}))
    code = main([
        "estimate", "--source", str(source), "--basis", str(basis),
        "--target-summary", str(bad),
    ])
    assert code == 2

    # solver failure: target far outside the support
    infeasible = tmp_path / "inf.json"
    infeasible.write_text(json.dumps({"const": 1, "x1": 9.0, "x2": 0.0, "x3": 0.0}))
    code = main([
        "estimate", "--source", str(source), "--basis", str(basis),
        "--target-summary", str(infeasible), "--methods", "ebal",
    ])
    assert code == 3

    # i/o error: missing input file
    code = main([
        "estimate", "--source", str(tmp_path / "nope.csv"), "--basis", str(basis),
        "--target-summary", str(target),
    ])
    assert code == 4
    capsys.readouterr()


def test_cli_weights_writes_csv(tmp_path):
    sample, _, source, basis, target = _write_inputs(tmp_path)
    out = tmp_path / "w.csv"
    code = main([
        "weights", "--source", str(source), "--basis", str(basis),
        "--target-summary", str(target), "--method", "extended", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "row,treatment,weight,method"
    assert len(lines) == sample.n_s + 1
    weights = np.array([float(l.split(",")[2]) for l in lines[1:]])
    assert (weights > 0).all()
    t = sample.treated
    assert weights[t].sum() == pytest.approx(sample.n_s)
    assert weights[~t].sum() == pytest.approx(sample.n_s)


def test_cli_weights_att_needs_no_target(tmp_path):
    _, _, source, basis, _ = _write_inputs(tmp_path)
    out = tmp_path / "w.csv"
    code = main([
        "weights", "--source", str(source), "--basis", str(basis),
        "--method", "att", "--out", str(out),
    ])
    assert code == 0
    code = main([
        "weights", "--source", str(source), "--basis", str(basis),
        "--method", "ebal", "--out", str(out),
    ])
    assert code == 2  # target summary required


def test_cli_simulate_deterministic_json(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({
        "scenarios": [{
            "name": "P1-T1-M1", "propensity": "P1", "cate": "T1",
            "baseline": "M1", "n": 300, "replicates": 8, "seed": 3,
        }]
    }))
    outs = []
    for jobs in ("1", "2"):
        out = tmp_path / f"sim{jobs}.json"
        code = main([
            "simulate", "--scenario", str(scen), "--methods", "ebal,extended",
            "--jobs", jobs, "--format", "json", "--out", str(out),
        ])
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_cli_oracle_report(tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({
        "scenarios": [{
            "name": "P2-T1-M1", "propensity": "P2", "cate": "T1", "baseline": "M1",
        }]
    }))
    out = tmp_path / "oracle.json"
    code = main([
        "oracle", "--scenario", str(scen), "--nodes", "8",
        "--format", "json", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["kind"] == "oracle"
    assert payload["v3"] == pytest.approx(0.0, abs=1e-10)
    assert payload["total"] > 0

    # oracle on a scenario without logistic structure is a validation error
    scen_bad = tmp_path / "p3.json"
    scen_bad.write_text(json.dumps({
        "scenarios": [{
            "name": "P3-T1-M1", "propensity": "P3", "cate": "T1", "baseline": "M1",
        }]
    }))
    code = main(["oracle", "--scenario", str(scen_bad), "--nodes", "6"])
    assert code == 2
