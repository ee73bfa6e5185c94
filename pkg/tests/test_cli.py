import json
import math
from fractions import Fraction

import pytest

from qgheat import cli
from qgheat.artifacts import CsvTable
from qgheat.cli import EXIT_INPUT, EXIT_OK, EXIT_UNRESOLVED, run


def _run(tmp_path, *args):
    out = tmp_path / "out.txt"
    code = run([*args, "--out", str(out)])
    return code, (out.read_text() if out.exists() else "")


def test_mercer_interval(tmp_path):
    code, text = _run(tmp_path, "mercer", "--graph", "interval", "--t", "1")
    assert code == EXIT_OK
    tab = CsvTable.loads(text)
    q, err = tab.column("Q")[0], tab.column("error")[0]
    assert abs(q - 0.06874) < 1e-5 and err < 1e-4


def test_walk_path2(tmp_path):
    code, text = _run(tmp_path, "walk", "--graph", "path2", "--start", "vD", "--nmax", "20", "--exact")
    assert code == EXIT_OK
    tab = CsvTable.loads(text)
    pmf = dict(zip(tab.column("n", int), tab.column("pmf", Fraction)))
    for n in range(1, 21):
        assert pmf[n] == (Fraction(1, 2 ** (n // 2)) if n % 2 == 0 else 0)


def test_scan_pitchfork(tmp_path):
    csv_path = tmp_path / "scan.csv"
    code, text = _run(tmp_path, "scan", "--graph", "pitchfork", "--tmin", "1e-3", "--tmax", "1e2",
                      "--per-decade", "2", "--csv", str(csv_path))
    assert code == EXIT_OK
    assert text.index("== inputs ==") < text.index("== scan ==")
    tab = CsvTable.read(csv_path)
    verdicts = tab.column("verdict", str)
    assert verdicts[0] == "1" and verdicts[-1] == "1"


def test_graph_from_file(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"vertices": ["vD", "w", "a", "b"],
                                "edges": [["vD", "w", 1.0], ["w", "a", 1.0], ["w", "b", 1.0]],
                                "dirichlet": ["vD"]}))
    code, text = _run(tmp_path, "certify-small", "--graph", str(path), "--tmin", "1e-3", "--tmax", "1",
                      "--per-decade", "5", "--nmax", "40")
    assert code == EXIT_OK
    assert CsvTable.loads(text).meta["C"] == "1/6"


@pytest.mark.parametrize("args", [
    ["spectral", "--graph", "pitchfork", "--h", "0.05"],
    ["mercer", "--graph", "pitchfork", "--t", "0.5", "1"],
    ["cn", "--graph", "path2", "--h", "0.05", "--t", "0.5", "1"],
    ["walk", "--graph", "pitchfork", "--nmax", "30"],
    ["walk", "--graph", "pitchfork", "--nmax", "12", "--exact"],
    ["alpha", "--graph", "pitchfork", "--t", "0.1", "1", "--nmax", "10"],
    ["mc", "--graph", "pitchfork", "--t", "0.5", "1", "--samples", "2000", "--dt", "1e-3"],
    ["prob", "--graph", "pitchfork", "--t", "0.5", "1", "--nmax", "80"],
    ["prob", "--graph", "pitchfork", "--t", "0.5", "1", "--nmax", "40", "--form", "pre", "--exact"],
    ["compare", "--graph", "pitchfork", "--t", "0.2", "1", "10"],
    ["certify-large", "--graph", "pitchfork", "--tmin", "1", "--tmax", "100", "--per-decade", "3"],
])
def test_csv_round_trip_and_ok(tmp_path, args):
    code, text = _run(tmp_path, *args)
    assert code == EXIT_OK
    assert CsvTable.loads(text).dumps() == text


@pytest.mark.parametrize("args", [
    ["mercer", "--graph", "pitchfork", "--bogus"],
    ["frobnicate", "--graph", "pitchfork"],
    ["mercer"],
    ["mercer", "--graph", "no_such_graph"],
    ["mercer", "--graph", "pitchfork", "--convention", "HALF/SIDEWAYS"],
    ["mercer", "--graph", "pitchfork", "--tmin", "1", "--tmax", "0.1"],
    ["mercer", "--graph", "pitchfork", "--t", "-1"],
    ["mercer", "--graph", "pitchfork", "--h", "0"],
    ["walk", "--graph", "pitchfork", "--start", "nowhere"],
    ["certify-small", "--graph", "path3"],
    ["certify-large", "--graph", "path3"],
    ["scan", "--graph", "path3"],
    ["scan", "--graph", "pitchfork", "--methods", "MERCER,ORACLE"],
    ["compare", "--graph", "pitchfork", "--other", "path4", "--t", "1"],
    ["mc", "--graph", "pitchfork", "--t", "1", "--dt", "-1"],
])
def test_input_errors(tmp_path, args, capsys):
    code, _ = _run(tmp_path, *args)
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "error" in err and "Traceback" not in err


def test_unreadable_graph_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    code, _ = _run(tmp_path, "mercer", "--graph", str(bad))
    assert code == EXIT_INPUT
    assert "qgheat.graph_model" in capsys.readouterr().err


def test_irrational_lengths_rejected_by_probabilistic_route(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"vertices": ["vD", "w", "x"],
                                "edges": [["vD", "w", 1.0], ["w", "x", math.sqrt(2)]],
                                "dirichlet": ["vD"]}))
    code, _ = _run(tmp_path, "prob", "--graph", str(path), "--t", "1")
    assert code == EXIT_INPUT
    code, _ = _run(tmp_path, "mercer", "--graph", str(path), "--t", "1")
    assert code == EXIT_OK


@pytest.mark.parametrize("args", [
    # differences of order exp(-1/t) vanish in double precision
    ["compare", "--graph", "pitchfork", "--t", "0.001"],
    # one increment leaves too much deficit at t = 0.05
    ["prob", "--graph", "pitchfork", "--t", "0.05", "--nmax", "1"],
    ["certify-small", "--graph", "pitchfork", "--t", "0.9", "1"],
    # both heat contents underflow to zero
    ["certify-large", "--graph", "pitchfork", "--t", "1e4"],
])
def test_unresolved(tmp_path, args, capsys):
    code, text = _run(tmp_path, *args)
    assert code == EXIT_UNRESOLVED
    assert "unresolved" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert run(["--help"]) == EXIT_OK
    assert "scan" in capsys.readouterr().out


def test_config_defaults():
    cfg = cli.parse_config(["mercer", "--graph", "pitchfork"])
    assert cfg.convention.tag == "FULL/TWO_SIDED"
    assert cfg.t_grid()[0] == pytest.approx(1e-3) and cfg.t_grid()[-1] == pytest.approx(1e2)
    cfg = cli.parse_config(["mercer", "--graph", "pitchfork", "--t", "2", "1"])
    assert list(cfg.t_grid()) == [1.0, 2.0]


def test_stdout_output(capsys):
    assert run(["mercer", "--graph", "interval", "--t", "1"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("# method=MERCER")
