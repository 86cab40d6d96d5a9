import csv
import io
import json

import pytest

from fmtcheck.cli import CSV_HEADER, main, parse_strategies, rank_strategies
from fmtcheck.model import ModelError, bundled_model, serialize


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.reader(io.StringIO(text)))


def test_validate_ok_and_broken(tmp_path, capsys):
    code, out, _ = run(["validate", "hvac"], capsys)
    assert code == 0 and out.startswith("ok")
    doc = json.loads(serialize(bundled_model("toy_or")))
    doc["nodes"][0]["children"] = doc["nodes"][0]["children"][:1]
    bad = tmp_path / "bad.fmt.json"
    bad.write_text(json.dumps(doc))
    code, out, _ = run(["validate", str(bad)], capsys)
    assert code == 2 and "OrArity" in out
    bad.write_text("{ nope")
    code, _, err = run(["validate", str(bad)], capsys)
    assert code == 2 and "line 1" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["analyze"])
    assert ei.value.code == 1
    code, _, err = run(["analyze", "toy_or", "--metric", "mtbf"], capsys)
    assert code == 1 and "unknown metric" in err
    code, _, err = run(["analyze", "toy_or", "--horizons", "soon"], capsys)
    assert code == 1 and "bad horizon" in err
    code, _, _ = run(["analyze", "no_such_model"], capsys)
    assert code == 2


def test_analyze_csv(capsys):
    code, out, _ = run(["analyze", "toy_or", "--horizons", "0,1", "2y", "--metric", "reliability,availability"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert rows[0] == CSV_HEADER
    body = rows[1:]
    assert len(body) == 2 * 3
    assert {r[2] for r in body} == {"reliability", "availability"}
    assert {r[4] for r in body} == {"numeric"}
    rel0 = [r for r in body if r[2] == "reliability" and float(r[3]) == 0.0][0]
    assert float(rel0[5]) == 1.0


def test_csv_is_deterministic_with_seed(tmp_path, capsys):
    args = ["analyze", "toy_rdep", "--engine", "both", "--runs", "300", "--seed", "5", "--horizons", "1,2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    assert main(args[:-4] + ["--seed", "6", "--horizons", "1,2", "-o", str(c)]) == 0
    assert c.read_bytes() != a.read_bytes()
    rows = rows_of(a.read_text())[1:]
    mc = [r for r in rows if r[4] == "mc"]
    assert mc and all(r[10] == "5" and r[9] == "300" and r[12] for r in mc)
    capsys.readouterr()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch, capsys):
    args = ["compare", "toy_or", "--horizons", "1", "--metric", "all", "--engine", "both", "--runs", "200"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv("FMTCHECK_THREADS", "1")
    assert main(args + ["-o", str(a)]) == 0
    monkeypatch.setenv("FMTCHECK_THREADS", "3")
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    _, err = capsys.readouterr()
    assert "horizon 1:" in err


def test_strict_flags_disagreement(tmp_path, capsys):
    # with very few runs the estimate of a tiny probability is exactly zero,
    # so a non-zero numeric value gives an infinite z-score
    args = ["analyze", "toy_or", "--engine", "both", "--runs", "2", "--horizons", "0.01",
            "--metric", "expected_failures", "--strict"]
    code, out, err = run(args, capsys)
    assert code == 3 and "strict" in err


def test_strategy_selection(capsys):
    code, out, _ = run(["analyze", "toy_or", "--strategy", "M2", "--horizons", "1", "--metric", "reliability"], capsys)
    assert code == 0 and rows_of(out)[1][1] == "M2"
    code, _, err = run(["analyze", "toy_or", "--strategy", "M9"], capsys)
    assert code == 1 and "unknown strategy" in err


def test_parse_strategies():
    table = parse_strategies('{"strategies": [{"name": "a", "t_rp": "1y"}, {"name": "off", "none": true}]}')
    assert table["a"]["t_rp"] == 1.0 and table["a"]["t_oh"] is None
    assert all(v is None for v in table["off"].values())
    with pytest.raises(ModelError):
        parse_strategies('{"strategies": [{"name": "x"}]}')
    with pytest.raises(ModelError):
        parse_strategies('{"strategies": [{"name": "a", "t_rp": "1y"}, {"name": "a", "t_in": "1y"}]}')


def test_rank_strategies():
    rows = [
        ["m", "A", "expected_failures", "1.0", "numeric", "0.3"],
        ["m", "B", "expected_failures", "1.0", "numeric", "0.1"],
        ["m", "A", "expected_cost", "1.0", "numeric", "5"],
        ["m", "B", "expected_cost", "1.0", "numeric", "9"],
    ]
    assert rank_strategies(rows) == {1.0: ["B", "A"]}


def test_decompose_plan(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    code, _, err = run(["decompose", "two_module", "--horizon", "2", "--emit-plan", str(plan), "--report-states"], capsys)
    assert code == 0 and "2 sub-graph(s)" in err
    doc = json.loads(plan.read_text())
    assert [g["id"] for g in doc["subgraphs"]] == ["coil", "top"]
    assert doc["state_space"]["reduction_pct"] > 0
    assert doc["mttf_table"]["2.0"]["Vg[coil]"]["mttf"] > 0


def test_decomposed_mode_rows(capsys):
    code, out, _ = run(["analyze", "two_module", "--mode", "decomposed", "--horizons", "1", "--metric", "reliability"], capsys)
    assert code == 0
    assert rows_of(out)[1][11] == "decomposed"


@pytest.mark.parametrize("what,needle", [("dot", "digraph"), ("ctmc", "labels"), ("prism-sketch", "endmodule")])
def test_export(what, needle, capsys):
    code, out, _ = run(["export", "toy_rdep", "--what", what], capsys)
    assert code == 0 and needle in out


def test_export_budget_is_numeric_failure(capsys):
    code, _, err = run(["export", "toy_overhaul", "--what", "ctmc", "--state-budget", "10"], capsys)
    assert code == 3 and "numeric failure" in err
