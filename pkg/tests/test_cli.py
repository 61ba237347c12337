import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskcompute.cli import ExperimentConfig, main, parse_budgets, run, validate
from riskcompute.results import ResultTable, read_table, sidecar_path, write_table

# Any encodable text except NUL, which CSV cannot carry.
labels = st.text(alphabet=st.characters(blacklist_characters="\0", blacklist_categories=("Cs",)), max_size=5)


# -- result tables ------------------------------------------------------------------


@given(st.lists(st.tuples(st.floats(allow_nan=False), st.integers(-5, 5), labels), min_size=1, max_size=20),
       st.sampled_from(["csv", "json"]))
def test_table_round_trip(tmp_path_factory, rows, fmt):
    table = ResultTable(["x", "k", "label"], [{"x": a, "k": b, "label": c} for a, b, c in rows], {"seed": 1})
    path = tmp_path_factory.mktemp("t") / f"table.{fmt}"
    write_table(table, path, fmt)
    assert read_table(path, fmt) == table


def test_csv_has_sidecar_and_17_digit_floats(tmp_path):
    table = ResultTable(["v"], [{"v": 0.1}, {"v": 1 / 3}], {"note": "x"})
    out = write_table(table, tmp_path / "a.csv")
    assert out == [tmp_path / "a.csv", sidecar_path(tmp_path / "a.csv")]
    assert (tmp_path / "a.csv").read_bytes() == b"v\r\n0.10000000000000001\r\n0.33333333333333331\r\n"


def test_csv_quotes_line_breaks_and_rejects_nul(tmp_path):
    table = ResultTable(["s"], [{"s": "a\rb"}, {"s": "c\nd"}, {"s": 'say "hi", ok'}])
    write_table(table, tmp_path / "q.csv")
    assert read_table(tmp_path / "q.csv") == table
    with pytest.raises(ValueError, match="NUL"):
        write_table(ResultTable(["s"], [{"s": "a\0"}]), tmp_path / "n.csv")


def test_table_schema_enforced():
    with pytest.raises(ValueError):
        ResultTable(["a", "b"], [{"a": 1}])
    with pytest.raises(ValueError):
        write_table(ResultTable(["a"], [{"a": 1}]), "unused", "xml")


# -- configuration ---------------------------------------------------------------------


def test_validate_reports_streaming_split():
    errors = validate(ExperimentConfig("normal-frontier", {"s": 1}))
    assert any("s must be in [2, n-1]" in e for e in errors)


def test_validate_reports_rho():
    errors = validate(ExperimentConfig("matinv", {"rhos": [0.2, 1.0]}))
    assert errors == ["rho must be in [0,1), got 1.0"]


@pytest.mark.parametrize("experiment", ["normal-frontier", "expfam-frontier", "hl", "matinv"])
def test_validate_accepts_defaults(experiment):
    assert validate(ExperimentConfig(experiment)) == []


def test_validate_aggregates_and_names_keys():
    cfg = ExperimentConfig("hl", {"alphas": [1.5], "bogus": 3, "n": 0}, replicates=1)
    errors = validate(cfg)
    assert len(errors) >= 4
    assert any("'bogus'" in e for e in errors)


def test_validate_never_raises_on_garbage():
    errors = validate(ExperimentConfig("expfam-frontier", {"tau": "abc", "family": "gamma"}))
    assert errors
    assert validate(ExperimentConfig("nope")) != []


def test_parse_budgets():
    assert parse_budgets(None, 5) == [2, 3, 4, 5]
    assert parse_budgets("10:20:5", 0) == [10, 15, 20]
    assert parse_budgets([4, 8], 0) == [4, 8]
    with pytest.raises(ValueError):
        parse_budgets("1:2:0", 0)


# -- running ---------------------------------------------------------------------------------


def test_normal_frontier_table(tmp_path):
    cfg = ExperimentConfig("normal-frontier", {"mu": 0.0, "sigma2": 1.0, "n": 100}, output_path=str(tmp_path / "f.csv"))
    table = run(cfg)
    assert len(table) == 199
    assert table.schema == ["budget", "n1", "n2", "n12", "risk", "risk_mu", "risk_sigma2"]
    assert np.all(np.diff(table.column("risk")) <= 0)
    assert read_table(tmp_path / "f.csv") == table


def test_hl_table_cardinality():
    budgets = [20, 40, 60]
    table = run(ExperimentConfig("hl", {"n": 100, "alphas": [0.05, 0.1, 0.2], "budgets": budgets}, replicates=4))
    variants = 4
    assert len(table) == 3 * len(budgets) * variants


def test_expfam_table_columns():
    table = run(ExperimentConfig("expfam-frontier", {"family": "gamma", "tau": [0.0, 1.5], "n": 40, "budgets": "10:80:10"}))
    assert table.schema == ["budget", "cost", "risk", "size_0", "size_1", "block_0", "block_1", "block_01"]
    assert all(r["cost"] <= r["budget"] for r in table.rows)


def test_normal_streaming_check_metadata():
    table = run(ExperimentConfig("normal-frontier", {"n": 50, "s": 20, "budgets": [100]}, replicates=200))
    check = table.metadata["streaming_check"]
    assert check["s"] == 20 and check["risk_mu_exact"] == pytest.approx(1 / 20)


def _run_cli(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["hl", "--n", "80", "--alphas", "0.1,0.2", "--budgets", "20,40", "--replicates", "1100", "--seed", "5",
                 "--out", str(out), *extra])
    assert code == 0
    return out


def test_cli_outputs_byte_identical_with_and_without_threads(tmp_path):
    a = _run_cli(tmp_path, "a.csv")
    b = _run_cli(tmp_path, "b.csv")
    c = _run_cli(tmp_path, "c.csv", "--jobs", "3")
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    assert sidecar_path(a).read_bytes() == sidecar_path(c).read_bytes()


def test_cli_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "matinv", "seed": 3, "replicates": 3, "format": "json",
                               "parameters": {"rhos": [0.3], "methods": ["ns-safe"]}}))
    out = tmp_path / "m.json"
    assert main(["matinv", "--config", str(cfg), "--out", str(out), "--ns-iters", "5"]) == 0
    table = read_table(out)
    assert len(table) == 6
    assert table.metadata["parameters"]["ns_iters"] == 5
    assert table.metadata["seed"] == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["normal-frontier", "--s", "1"]) == 2
    assert "s must be in [2, n-1]" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "matinv", "parameters": {"rhos": [1.0]}}))
    assert main(["validate", str(bad)]) == 2
    assert "rho must be in [0,1)" in capsys.readouterr().err
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"experiment": "hl"}))
    assert main(["validate", str(good)]) == 0
    assert main(["hl", "--n", "10", "--budgets", "4", "--replicates", "2", "--out", str(tmp_path / "nodir" / "x.csv")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["hl", "--format", "xml"])
    assert info.value.code == 2


def test_cli_stdout(capsys):
    assert main(["normal-frontier", "--n", "5", "--budgets", "2,10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "budget,n1,n2,n12,risk,risk_mu,risk_sigma2"
    assert len(lines) == 3
