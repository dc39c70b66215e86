import json
import subprocess
import sys

import pandas as pd
import pytest

from freqmask import cli
from freqmask.storage import save_finest_table

HKEY = "LA1,LA2,LA3,OA"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--output", str(d / "micro.csv"), "--records", "20000",
                     "--units", "1,3,12,60", "--seed", "3"]) == 0
    assert cli.main(["build", "--input", str(d / "micro.csv"), "--hkey", HKEY,
                     "--seed", "42", "--output-tb", str(d / "full_tb")]) == 0
    return d


def test_build_summary(workdir, tmp_path, capsys):
    code = cli.main(["build", "--input", str(workdir / "micro.csv"), "--hkey", "LA2,LA1,OA,LA3",
                     "--hkey-rank", "2,1,4,3", "--key", "gender,age,edu,mar,htype",
                     "--mask-thr", "5", "--seed", "42", "--output-tb", str(tmp_path / "tb")])
    out = capsys.readouterr().out
    assert code == 0
    assert "1: LA1" in out and "4: OA" in out and "K = 5" in out and str(tmp_path / "tb") in out
    for name in ("metadata.json", "rows.csv"):
        assert (tmp_path / "tb" / name).read_bytes() == (workdir / "full_tb" / name).read_bytes()


def test_build_nesting_failure(workdir, tmp_path, capsys):
    code = cli.main(["build", "--input", str(workdir / "micro.csv"), "--hkey", "OA,LA1,LA2,LA3",
                     "--output-tb", str(tmp_path / "tb")])
    assert code == cli.EXIT_VALIDATION
    assert "nesting" in capsys.readouterr().err


def test_build_missing_input(tmp_path):
    code = cli.main(["build", "--input", str(tmp_path / "none.csv"), "--hkey", HKEY,
                     "--output-tb", str(tmp_path / "tb")])
    assert code == cli.EXIT_IO


def test_aggregate_writes_both_files(workdir, tmp_path, capsys):
    tb, il = tmp_path / "agg.csv", tmp_path / "il.csv"
    code = cli.main(["aggregate", "--input", str(workdir / "full_tb"), "--hkey-level", "3",
                     "--key", "gender,age,htype", "--output-tb", str(tb), "--output-il", str(il)])
    out = capsys.readouterr().out
    assert code == 0
    assert "Header of aggregated masked table" in out and "Distribution of Information Loss" in out
    agg = pd.read_csv(tb, dtype=str)
    assert list(agg.columns) == ["LA1", "LA2", "LA3", "gender", "age", "htype",
                                 "N_masked", "type1", "type2"]
    masked = agg["N_masked"].astype(int)
    assert ((masked == 0) | (masked >= 5)).all()
    loss = pd.read_csv(il, dtype=str)
    assert list(loss.columns) == ["Loss", "n", "perc"]
    assert loss.iloc[-1].tolist() == ["Total", str(len(agg)), "100.00"]
    assert loss.iloc[:-1]["Loss"].astype(int).abs().max() <= 7
    assert abs(loss.iloc[:-1]["perc"].astype(float).sum() - 100) < 0.01 * len(loss)


def test_aggregate_level1_binary_key(workdir, tmp_path):
    tb = tmp_path / "agg.csv"
    assert cli.main(["aggregate", "--input", str(workdir / "full_tb"), "--hkey-level", "1",
                     "--key", "gender", "--output-tb", str(tb),
                     "--output-il", str(tmp_path / "il.csv")]) == 0
    assert len(pd.read_csv(tb)) == 2


def test_aggregate_empty_keys_gives_area_totals(workdir, tmp_path):
    tb = tmp_path / "agg.csv"
    assert cli.main(["aggregate", "--input", str(workdir / "full_tb"), "--hkey-level", "2",
                     "--output-tb", str(tb), "--output-il", str(tmp_path / "il.csv")]) == 0
    assert list(pd.read_csv(tb, dtype=str).columns) == ["LA1", "LA2", "N_masked", "type1", "type2"]


def test_aggregate_bad_level(workdir, tmp_path):
    assert cli.main(["aggregate", "--input", str(workdir / "full_tb"), "--hkey-level", "9",
                     "--output-tb", str(tmp_path / "a"), "--output-il", str(tmp_path / "b")]) == 1


def test_query_matches_aggregate(workdir, tmp_path, capsys):
    tb = tmp_path / "agg.csv"
    cli.main(["aggregate", "--input", str(workdir / "full_tb"), "--hkey-level", "2",
              "--key", "gender,edu", "--output-tb", str(tb), "--output-il", str(tmp_path / "il")])
    agg = pd.read_csv(tb, dtype=str)
    capsys.readouterr()
    for _, row in agg.sample(10, random_state=0).iterrows():
        assert cli.main(["query", "--input", str(workdir / "full_tb"), "--hkey-level", "2",
                         "--hkey-value", row["LA2"], "--key", "gender,edu",
                         "--key-value", f"{row['gender']},{row['edu']}"]) == 0
        assert capsys.readouterr().out.strip() == row["N_masked"]


def test_query_worked_cell(example_table, tmp_path, capsys):
    save_finest_table(example_table, tmp_path / "tb")
    assert cli.main(["query", "--input", str(tmp_path / "tb"), "--hkey-level", "3",
                     "--hkey-value", "010101", "--key", "gender,edu", "--key-value", "2,2"]) == 0
    assert capsys.readouterr().out == "1328\n"


def test_query_verbose_trace(example_table, tmp_path, capsys):
    save_finest_table(example_table, tmp_path / "tb")
    cli.main(["-v", "query", "--input", str(tmp_path / "tb"), "--hkey-level", "3",
              "--hkey-value", "010101", "--key", "gender,edu", "--key-value", "2,2"])
    captured = capsys.readouterr()
    assert captured.out == "1328\n" and "center1=8" in captured.err


def test_query_unknown_unit_and_empty_cell(example_table, tmp_path, capsys):
    save_finest_table(example_table, tmp_path / "tb")
    base = ["query", "--input", str(tmp_path / "tb"), "--hkey-level", "3"]
    assert cli.main([*base, "--hkey-value", "777777", "--key", "gender", "--key-value", "1"]) == 1
    assert "777777" in capsys.readouterr().err
    assert cli.main([*base, "--hkey-value", "010512", "--key", "gender,edu",
                     "--key-value", "1,9"]) == 0
    assert capsys.readouterr().out == "0\n"


def test_audit_ilba_passes(workdir, tmp_path):
    report = tmp_path / "audit.json"
    code = cli.main(["audit", "--input", str(workdir / "full_tb"), "--hkey-level", "3",
                     "--key", "gender,age", "--output", str(report)])
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["summary"]["passed"] and doc["summary"]["audited_cells"] > 0
    assert doc["summary"]["min_ambiguity"] >= 5


def test_audit_naive_fails(example_table, tmp_path, capsys):
    save_finest_table(example_table, tmp_path / "tb")
    report = tmp_path / "audit.json"
    code = cli.main(["audit", "--input", str(tmp_path / "tb"), "--hkey-level", "3",
                     "--key", "gender,edu", "--unsafe-naive", "--seed", "0",
                     "--output", str(report)])
    assert code == cli.EXIT_VIOLATION
    assert "VIOLATION" in capsys.readouterr().out
    assert json.loads(report.read_text())["summary"]["violating_cells"] >= 1


def test_audit_all_large_table(tmp_path):
    from freqmask.tables import FinestTable

    t = FinestTable.from_rows(("A",), ("s",), [("x", "1", 9, 9), ("x", "2", 12, 12)], k=5)
    save_finest_table(t, tmp_path / "tb")
    report = tmp_path / "r.json"
    assert cli.main(["audit", "--input", str(tmp_path / "tb"), "--hkey-level", "1",
                     "--output", str(report)]) == 0
    assert json.loads(report.read_text())["cells"] == []


def test_unsafe_flag_hidden_from_help(capsys):
    with pytest.raises(SystemExit):
        cli.main(["audit", "--help"])
    assert "unsafe" not in capsys.readouterr().out


def test_synth_deterministic_and_invalid(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert cli.main(["synth", "--output", str(p), "--records", "500", "--seed", "5"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli.main(["synth", "--output", str(a), "--records", "0"]) == 1
    assert cli.main(["synth", "--output", str(a), "--units", "1,x"]) == 1


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        cli.main(["aggregate"])
    assert exc.value.code == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "freqmask", "synth", "--output", str(tmp_path / "m.csv"),
         "--records", "3"],
        capture_output=True, text=True,
    )
    assert out.returncode == 0 and (tmp_path / "m.csv").read_text().count("\n") == 4
