import json

import numpy as np
import pytest

from seqid.cli import expand_columns, main, read_csv, read_records
from seqid.dgp import DgpConfig, dump_csv, simulate
from seqid.ml import DataError


@pytest.fixture(scope="module")
def csv_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    dump_csv(simulate(DgpConfig(n=300, p=8, seed=1, binary_mediator=True)), path)
    return path


COLS = ["--y", "y", "--d", "d", "--m", "m", "--z1", "z1", "--z2", "z2", "--x", "x1..x8"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_dsep_fixture(capsys):
    code, out, _ = run(capsys, "dsep", "--graph", "fixtures/figure1.txt", "--a", "Y", "--b", "Z1",
                       "--given", "D,X")
    assert code == 0 and out.strip() == "d-separated"
    code, out, _ = run(capsys, "dsep", "--graph", "figure2-right", "--a", "M", "--b", "D",
                       "--given", "X,Z2", "--cut", "D")
    assert out.strip() == "d-connected"


def test_dsep_errors(capsys, tmp_path):
    code, _, err = run(capsys, "dsep", "--graph", str(tmp_path / "none.txt"), "--a", "Y", "--b", "Z1")
    assert code == 1 and "not found" in err
    bad = tmp_path / "bad.txt"
    bad.write_text("A -> B\nA B C\n")
    code, _, err = run(capsys, "dsep", "--graph", str(bad), "--a", "A", "--b", "B")
    assert code == 1 and "line 2" in err
    code, _, err = run(capsys, "dsep", "--graph", "figure1", "--a", "Y", "--b", "Q")
    assert code == 1


def test_usage_errors(capsys):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "dsep", "--graph", "figure1")[0] == 2
    assert run(capsys, "test", "--data")[0] == 2


def test_verify_theorems(capsys):
    code, out, _ = run(capsys, "verify-theorems", "--theorem", "t1", "--format", "records")
    rec = json.loads(out.splitlines()[0])
    assert code == 0 and rec["counterexamples"] == 0 and rec["both_sides_hold"] == 480
    code, out, _ = run(capsys, "verify-theorems", "--theorem", "t1")
    assert "reference counts" in out


def test_test_command_and_effect(capsys, csv_file):
    code, out, _ = run(capsys, "test", "--data", str(csv_file), *COLS, "--folds", "2", "--runs", "3",
                       "--effect", "--format", "records")
    assert code == 0
    rec = read_records(out)[0]
    for k in ("teststat", "se", "pval", "effect", "effect_se", "effect_pval", "effect_ntrimmed"):
        assert k in rec
    code, out, _ = run(capsys, "test", "--data", str(csv_file), *COLS, "--folds", "2")
    assert out.splitlines()[0].split()[:3] == ["teststat", "se", "pval"]


def test_records_determinism(capsys, csv_file):
    args = ["test", "--data", str(csv_file), *COLS, "--folds", "2", "--seed", "4", "--format", "records"]
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_first_stage_and_config(capsys, csv_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# shared settings\ndata = {csv_file}\nfolds = 2\nruns = 3\ntwo_sided = true\n")
    code, out, _ = run(capsys, "first-stage", "--config", str(cfg), *COLS, "--format", "records")
    assert code == 0
    rec = read_records(out)[0]
    assert rec["pval_d_z1"] < 0.05
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert run(capsys, "first-stage", "--config", str(bad), *COLS)[0] == 2


def test_config_flags_override(capsys, csv_file, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 1\nfolds = 2\n")
    base = ["test", "--data", str(csv_file), *COLS, "--format", "records"]
    via_cfg = run(capsys, *base, "--config", str(cfg), "--seed", "7")[1]
    direct = run(capsys, *base, "--folds", "2", "--seed", "7")[1]
    assert via_cfg == direct


def test_simulate_dump_roundtrip(capsys, tmp_path):
    path = tmp_path / "s.csv"
    code, out, _ = run(capsys, "simulate", "--n", "50", "--p", "4", "--seed", "3", "--dump", str(path),
                       "--format", "records")
    assert code == 0 and read_records(out)[0]["n"] == 50
    data = read_csv(path, {"y": "y", "d": "d", "m": "m", "z1": "z1", "z2": "z2", "x": "x1..x4"})
    ref = simulate(DgpConfig(n=50, p=4, seed=3))
    assert np.array_equal(data.y, ref.y) and np.array_equal(data.x, ref.x)


def test_csv_errors(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("y,d,m,z1,z2,x1\n1,0,1,0.5,0.2,3\n2,1,,0.1,0.3,4\n")
    mapping = {"y": "y", "d": "d", "m": "m", "z1": "z1", "z2": "z2", "x": "x1"}
    with pytest.raises(DataError, match=r"m.csv:3: field 'm'"):
        read_csv(path, mapping)
    path.write_text("y,d,m,z1,z2,x1\n1,0,1,0.5,0.2,NA\n")
    with pytest.raises(DataError, match="'x1'"):
        read_csv(path, mapping)
    with pytest.raises(DataError, match="x2"):
        expand_columns("x1..x2", ["x1"])
    assert expand_columns("a,x1..x3", ["a", "x1", "x2", "x3"]) == ["a", "x1", "x2", "x3"]
